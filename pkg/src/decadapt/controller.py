"""Certainty-equivalent main-loop control law and goal-error dynamics.

The control input cancels the estimated drift of the goal function and
installs the target dynamics; by construction it reads only this
subsystem's state, so decentralization is structural.  The law divides by
the input gain of the goal function, which the surrounding theory assumes
invertible everywhere; where that fails numerically the controller aborts
with a diagnostic instead of regularizing, because a silently modified
input would invalidate every runtime certificate downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import GoalFunction, SubsystemSpec, TargetShaper, goal_drift, input_gain


@dataclass(frozen=True, eq=False)
class ControlLawConfig:
    """Numerical guard for the control law.

    singularity_floor: minimum admissible magnitude of the goal function's
    input gain; below it the law is considered undefined at that point.
    """

    singularity_floor: float = 1e-9

    def __post_init__(self):
        if self.singularity_floor <= 0:
            raise ValueError("singularity_floor must be > 0")


DEFAULT_CONTROL_CONFIG = ControlLawConfig()


class ControlSingularityError(RuntimeError):
    """The goal function's input gain dropped below the admissible floor."""

    def __init__(self, state, t: float, value: float, subsystem: str = ""):
        tag = f" in subsystem {subsystem!r}" if subsystem else ""
        super().__init__(
            f"control law undefined{tag}: |input gain| = {abs(value):.3e} at t = {t} "
            f"for state {list(state)}"
        )
        self.state = tuple(state)
        self.t = t
        self.value = value
        self.subsystem = subsystem


def control(
    spec: SubsystemSpec,
    goal: GoalFunction,
    shaper: TargetShaper,
    state,
    theta_hat,
    t: float,
    cfg: ControlLawConfig = DEFAULT_CONTROL_CONFIG,
) -> float:
    """Certainty-equivalent control input at one point.

    u = (input gain)^-1 * ( -drift at theta_hat - phi(psi, t) - dpsi/dt ),
    so that with a perfect estimate the closed-loop goal error follows the
    target dynamics exactly.

    Raises ControlSingularityError when |input gain| < cfg.singularity_floor.
    """
    gain = input_gain(spec, goal, state, t)
    if abs(gain) < cfg.singularity_floor:
        raise ControlSingularityError(state, t, gain)
    drift = goal_drift(spec, goal, state, theta_hat, t)
    psi = goal.psi(state, t)
    return (-drift - shaper.phi(psi, t) - goal.d_time(state, t)) / gain


def goal_error_rate(
    spec: SubsystemSpec,
    goal: GoalFunction,
    shaper: TargetShaper,
    state,
    theta,
    theta_hat,
    t: float,
    eps: float = 0.0,
    cfg: ControlLawConfig = DEFAULT_CONTROL_CONFIG,
) -> float:
    """Closed-loop rate of change of the goal function.

    Equals drift(theta) - drift(theta_hat) - phi(psi, t) + eps, where eps is
    an additive disturbance (for interconnected systems, the coupling
    channel).  Matches the chain-rule derivative of psi along the closed
    loop whenever the control law is defined; the control precondition is
    enforced here so singularities propagate instead of being masked.
    """
    control(spec, goal, shaper, state, theta_hat, t, cfg)
    psi = goal.psi(state, t)
    return (
        goal_drift(spec, goal, state, theta, t)
        - goal_drift(spec, goal, state, theta_hat, t)
        - shaper.phi(psi, t)
        + eps
    )
