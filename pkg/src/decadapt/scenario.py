"""Built-in coupled-oscillator case study and scenario file handling.

Two oscillators with nonlinearly parameterized damping, cross-coupled
through their positions:

    dx1/dt = x2                  dy1/dt = y2
    dx2/dt = fx(x1) + k1 y1 + u  dy2/dt = fy(y1) + k2 x1 + u

    fx(x1) = theta_x (x1 - x0) + 0.5 sin(theta_x (x1 - x0))
    fy(y1) = theta_y (y1 - y0) + 0.6 sin(theta_y (y1 - y0))

with goal functions x1 + x2 and y1 + y2, linear target shapers, and a
scalar monotone parametrization (position minus offset) whose growth
constants are 1.5 / 0.5 for the x loop and 1.6 / 0.4 for the y loop.  Its
small-gain condition reduces to k1 k2 < lambda_x lambda_y / 20.

Custom systems are declared in code against the library interfaces;
scenario files cover only this built-in family, since arbitrary callables
cannot be serialized safely.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, replace

import numpy as np

from .adaptation import AdaptiveLoopSpec, check_poincare, realizability_residual, zero_potential
from .certify import (
    MONITOR_TOL,
    CertificateReport,
    SmallGainProblem,
    check_small_gain,
    monitor_loop_bounds,
    monitor_tail_convergence,
    verify_coupling_bound,
    verify_monotonicity,
)
from .interconnect import Coupling, CoupledClosedLoop
from .model import (
    GRAD_REL_TOL,
    DomainBox,
    GoalFunction,
    Parametrization,
    PartitionLayout,
    SubsystemSpec,
    TargetShaper,
    check_gradient,
)
from .report import CertificateEntry, entry_from_margin
from .simulate import STATUS_COMPLETED, IntegratorConfig, integrate

GROWTH_X = (1.5, 0.5)
GROWTH_Y = (1.6, 0.4)
STATE_BOX = DomainBox((-5.0, -5.0), (5.0, 5.0))

MONOTONICITY_STATE_BOX = DomainBox((-3.0, -3.0), (3.0, 3.0))
MONOTONICITY_THETA_BOX = DomainBox((0.2,), (2.0,))


@dataclass(frozen=True, eq=False)
class OscillatorScenario:
    """Scenario parameters; defaults reproduce the reference case study."""

    k1: float = 0.4
    k2: float = 0.4
    lambda_x: float = 2.0
    lambda_y: float = 2.0
    offset_x: float = 1.0
    offset_y: float = 1.0
    theta_x: float = 1.0
    theta_y: float = 1.0
    gamma_x: float = 1.0
    gamma_y: float = 1.0
    x1_0: float = -1.0
    x2_0: float = 0.0
    y1_0: float = 1.0
    y2_0: float = 0.0
    theta_i_x0: float = -1.0
    theta_i_y0: float = -2.0
    integrator: IntegratorConfig = IntegratorConfig(step=1e-3, t_final=50.0)

    def __post_init__(self):
        if self.lambda_x <= 0 or self.lambda_y <= 0:
            raise ValueError("shaper rates lambda_x, lambda_y must be > 0")
        if self.gamma_x <= 0 or self.gamma_y <= 0:
            raise ValueError("adaptation gains gamma_x, gamma_y must be > 0")

    def initial_state(self) -> np.ndarray:
        """Augmented initial vector (x, theta_i_x, y, theta_i_y)."""
        return np.array(
            [self.x1_0, self.x2_0, self.theta_i_x0, self.y1_0, self.y2_0, self.theta_i_y0]
        )


def damping(position: float, theta: float, offset: float, wobble: float) -> float:
    """Nonlinear damping force: linear-in-shifted-position plus a bounded sine."""
    s = theta * (position - offset)
    return s + wobble * math.sin(s)


def _make_loop(rate: float, offset: float, gain: float, wobble: float,
               growth: tuple, psi0_bound: float) -> AdaptiveLoopSpec:
    g1_const = (0.0,)
    g2_const = (1.0,)
    psi_grad = (1.0, 1.0)
    alpha_grad = ((1.0, 0.0),)
    alpha_dt = (0.0,)

    spec = SubsystemSpec(
        layout=PartitionLayout(q=1, p=1),
        f1=lambda state, t: (state[1],),
        f2=lambda state, theta, t: (damping(state[0], theta[0], offset, wobble),),
        g1=lambda state: g1_const,
        g2=lambda state: g2_const,
        param_dim=1,
        box=STATE_BOX,
    )
    goal = GoalFunction(
        psi=lambda state, t: state[0] + state[1],
        grad_state=lambda state, t: psi_grad,
        d_time=lambda state, t: 0.0,
    )
    param = Parametrization(
        alpha=lambda state, t: (state[0] - offset,),
        grad_state=lambda state, t: alpha_grad,
        d_time=lambda state, t: alpha_dt,
        dim=1,
        growth_upper=growth[0],
        growth_lower=growth[1],
    )
    return AdaptiveLoopSpec(
        spec=spec,
        goal=goal,
        shaper=TargetShaper.linear(rate, psi0_bound=psi0_bound),
        param=param,
        potential=zero_potential(1, 2),
        gain=np.array([[gain]]),
    )


def build_oscillator(sc: OscillatorScenario) -> CoupledClosedLoop:
    """Assemble the coupled oscillator pair from scenario parameters."""
    loop_x = _make_loop(
        sc.lambda_x, sc.offset_x, sc.gamma_x, 0.5, GROWTH_X, abs(sc.x1_0 + sc.x2_0)
    )
    loop_y = _make_loop(
        sc.lambda_y, sc.offset_y, sc.gamma_y, 0.6, GROWTH_Y, abs(sc.y1_0 + sc.y2_0)
    )
    k1, k2 = sc.k1, sc.k2
    coupling = Coupling(
        into_x2=lambda y, t: (k1 * y[0],),
        into_y2=lambda x, t: (k2 * x[0],),
        beta_into_x=abs(k1),
        beta_into_y=abs(k2),
    )
    return CoupledClosedLoop(
        loop_x=loop_x,
        loop_y=loop_y,
        coupling=coupling,
        theta_true_x=(sc.theta_x,),
        theta_true_y=(sc.theta_y,),
    )


def small_gain_problem(sc: OscillatorScenario) -> SmallGainProblem:
    """Small-gain data of the scenario; both gains are exactly linear."""
    loop = build_oscillator(sc)
    return SmallGainProblem(
        gain_x22=loop.loop_x.shaper.gain_l2_from_l2,
        gain_y22=loop.loop_y.shaper.gain_l2_from_l2,
        beta_x=abs(sc.k1),
        beta_y=abs(sc.k2),
        ratio_x=GROWTH_X[0] / GROWTH_X[1],
        ratio_y=GROWTH_Y[0] / GROWTH_Y[1],
    )


def coupling_offsets(sc: OscillatorScenario) -> tuple:
    """Offsets of the running-norm coupling bounds, from the position dynamics.

    Position obeys d(pos)/dt = -pos + psi, whose energy gain from psi has
    slope one and offset |pos(0)| / sqrt(2); scaling by the coupling
    coefficients bounds each channel's energy in terms of the generating
    loop's goal error.  Returns (offset_into_x, offset_into_y).
    """
    return (
        abs(sc.k1) * abs(sc.y1_0) / math.sqrt(2.0),
        abs(sc.k2) * abs(sc.x1_0) / math.sqrt(2.0),
    )


def _renamed(entry: CertificateEntry, suffix: str) -> CertificateEntry:
    return replace(entry, name=f"{entry.name}-{suffix}")


def certify_oscillator(
    sc: OscillatorScenario,
    n_monotonicity_samples: int = 10000,
    monitor_tol: float = 1e-4,
    tail_window: float = 5.0,
    tail_threshold: float = 1e-2,
) -> tuple:
    """Full certification pass: assumption checks, small gain, trajectory monitors.

    Returns (CertificateReport, Trajectory or None).  The trajectory is None
    when the simulation aborted; the report then carries a failing
    simulation-status entry instead of the runtime monitors.
    """
    sys = build_oscillator(sc)
    report = CertificateReport()

    for tag, loop in (("x", sys.loop_x), ("y", sys.loop_y)):
        worst_goal = check_gradient(
            loop.goal.psi, loop.goal.grad_state, loop.spec.box, raise_on_fail=False
        )
        report.add(
            entry_from_margin(
                f"gradient-goal-{tag}", GRAD_REL_TOL - worst_goal,
                {"worst_rel_error": worst_goal}, GRAD_REL_TOL,
            )
        )
        worst_alpha = check_gradient(
            loop.param.alpha, loop.param.grad_state, loop.spec.box, raise_on_fail=False
        )
        report.add(
            entry_from_margin(
                f"gradient-parametrization-{tag}", GRAD_REL_TOL - worst_alpha,
                {"worst_rel_error": worst_alpha}, GRAD_REL_TOL,
            )
        )
        residual = realizability_residual(
            loop.potential, loop.goal, loop.param, loop.spec.layout, loop.spec.box
        )
        report.add(
            entry_from_margin(
                f"realizability-{tag}", 1e-7 - residual, {"residual": residual}, 1e-7
            )
        )
        report.add(
            _renamed(
                check_poincare(loop.goal, loop.param, loop.spec.layout, loop.spec.box), tag
            )
        )

    for tag, loop in (("x", sys.loop_x), ("y", sys.loop_y)):
        offset = sc.offset_x if tag == "x" else sc.offset_y
        wobble = 0.5 if tag == "x" else 0.6

        def drift(state, theta_vec, t, _o=offset, _w=wobble):
            return state[1] + damping(state[0], theta_vec[0], _o, _w)

        cert = verify_monotonicity(
            loop.param,
            drift,
            MONOTONICITY_STATE_BOX,
            MONOTONICITY_THETA_BOX,
            n_samples=n_monotonicity_samples,
        )
        report.add(_renamed(cert.entry, tag))

    report.add(check_small_gain(small_gain_problem(sc)))

    traj = integrate(sys, sc.integrator, sc.initial_state())
    if traj.status != STATUS_COMPLETED:
        report.add(
            CertificateEntry(
                name="simulation-status",
                status="fail",
                margin=-1.0,
                witness={"status": traj.status, "last_t": traj.t_end},
            )
        )
        return report, None

    for tag, loop, theta in (("x", sys.loop_x, sys.theta_true_x), ("y", sys.loop_y, sys.theta_true_y)):
        for entry in monitor_loop_bounds(traj.loop_view(tag), loop, theta, tol=monitor_tol):
            report.add(_renamed(entry, tag))
    off_x, off_y = coupling_offsets(sc)
    report.add(
        verify_coupling_bound(traj, "into_x", abs(sc.k1), mode="l2", offset=off_x,
                              tol=MONITOR_TOL)
    )
    report.add(
        verify_coupling_bound(traj, "into_y", abs(sc.k2), mode="l2", offset=off_y,
                              tol=MONITOR_TOL)
    )
    report.extend(
        monitor_tail_convergence(traj, tail_window, tail_threshold, tail_threshold)
    )
    return report, traj


_SCENARIO_KEYS = {
    "coupling": ("k1", "k2"),
    "subsystem.x": ("lambda", "offset", "theta", "gamma", "init1", "init2", "theta_i"),
    "subsystem.y": ("lambda", "offset", "theta", "gamma", "init1", "init2", "theta_i"),
    "integrator": ("step", "t_final", "divergence_bound", "log_every"),
}


def save_scenario(sc: OscillatorScenario, path) -> None:
    """Write a scenario file (INI sections of key = value pairs)."""
    cp = configparser.ConfigParser()
    cp["coupling"] = {"k1": repr(sc.k1), "k2": repr(sc.k2)}
    cp["subsystem.x"] = {
        "lambda": repr(sc.lambda_x), "offset": repr(sc.offset_x), "theta": repr(sc.theta_x),
        "gamma": repr(sc.gamma_x), "init1": repr(sc.x1_0), "init2": repr(sc.x2_0),
        "theta_i": repr(sc.theta_i_x0),
    }
    cp["subsystem.y"] = {
        "lambda": repr(sc.lambda_y), "offset": repr(sc.offset_y), "theta": repr(sc.theta_y),
        "gamma": repr(sc.gamma_y), "init1": repr(sc.y1_0), "init2": repr(sc.y2_0),
        "theta_i": repr(sc.theta_i_y0),
    }
    cp["integrator"] = {
        "step": repr(sc.integrator.step),
        "t_final": repr(sc.integrator.t_final),
        "divergence_bound": repr(sc.integrator.divergence_bound),
        "log_every": repr(sc.integrator.log_every),
    }
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def load_scenario(path) -> OscillatorScenario:
    """Read a scenario file; unknown sections or keys are rejected."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(f"scenario file not found: {path}")
    for section in cp.sections():
        if section not in _SCENARIO_KEYS:
            raise ValueError(f"unknown scenario section [{section}]")
        for key in cp[section]:
            if key not in _SCENARIO_KEYS[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")

    def get(section, key, default):
        if section in cp and key in cp[section]:
            return float(cp[section][key])
        return default

    base = OscillatorScenario()
    integrator = IntegratorConfig(
        step=get("integrator", "step", base.integrator.step),
        t_final=get("integrator", "t_final", base.integrator.t_final),
        divergence_bound=get("integrator", "divergence_bound", base.integrator.divergence_bound),
        log_every=int(get("integrator", "log_every", base.integrator.log_every)),
    )
    return OscillatorScenario(
        k1=get("coupling", "k1", base.k1),
        k2=get("coupling", "k2", base.k2),
        lambda_x=get("subsystem.x", "lambda", base.lambda_x),
        lambda_y=get("subsystem.y", "lambda", base.lambda_y),
        offset_x=get("subsystem.x", "offset", base.offset_x),
        offset_y=get("subsystem.y", "offset", base.offset_y),
        theta_x=get("subsystem.x", "theta", base.theta_x),
        theta_y=get("subsystem.y", "theta", base.theta_y),
        gamma_x=get("subsystem.x", "gamma", base.gamma_x),
        gamma_y=get("subsystem.y", "gamma", base.gamma_y),
        x1_0=get("subsystem.x", "init1", base.x1_0),
        x2_0=get("subsystem.x", "init2", base.x2_0),
        y1_0=get("subsystem.y", "init1", base.y1_0),
        y2_0=get("subsystem.y", "init2", base.y2_0),
        theta_i_x0=get("subsystem.x", "theta_i", base.theta_i_x0),
        theta_i_y0=get("subsystem.y", "theta_i", base.theta_i_y0),
        integrator=integrator,
    )
