"""Proportional-integral parameter adaptation.

The estimate is the sum of an algebraic, state-dependent part and an
integrated part: theta_hat = Gamma (psi * alpha - Psi + theta_I).  The
integral part evolves through quantities measurable on the first state
block only, so the algorithm never needs the unknown parameters or the
derivative of the goal function.  Realizability hinges on an auxiliary
potential Psi whose second-block gradient matches psi * (second-block
gradient of alpha); this module validates supplied potentials, constructs
them by quadrature in the single-coordinate case, and provides the reduced
"virtual" update law used as a numerical oracle in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import (
    DEFAULT_SAMPLE_SEED,
    DomainBox,
    GoalFunction,
    Parametrization,
    SubsystemSpec,
    TargetShaper,
    check_gradient,
    fd_state_partial,
)
from .report import CertificateEntry, entry_from_margin

REALIZABILITY_TOL = 1e-7
REALIZABILITY_POINTS = 200
SINGLE_COORD_TOL = 1e-9
POINCARE_TOL = 1e-6
QUADRATURE_ABS_TOL = 1e-10
GAMMA_SYMMETRY_TOL = 1e-12


class PotentialConstructionError(ValueError):
    """The single-coordinate construction does not apply to these maps."""


@dataclass(frozen=True, eq=False)
class AuxiliaryPotential:
    """Vector potential Psi(state, t) of the adaptation algorithm.

    value returns a length-d vector, grad_state a (d, n) array of state
    partials, d_time a length-d vector.  A valid potential satisfies the
    realizability identity: its second-block partials equal psi times the
    second-block partials of alpha (checked at loop construction).
    """

    value: Callable
    grad_state: Callable
    d_time: Callable


def zero_potential(dim: int, n: int) -> AuxiliaryPotential:
    """The zero potential, valid whenever alpha does not depend on the second block."""
    val = tuple(0.0 for _ in range(dim))
    grad = tuple(tuple(0.0 for _ in range(n)) for _ in range(dim))

    def value(state, t):
        return val

    def grad_state(state, t):
        return grad

    def d_time(state, t):
        return val

    return AuxiliaryPotential(value=value, grad_state=grad_state, d_time=d_time)


def realizability_residual(
    potential: AuxiliaryPotential,
    goal: GoalFunction,
    param: Parametrization,
    layout,
    box: DomainBox,
    n_points: int = REALIZABILITY_POINTS,
    seed: int = DEFAULT_SAMPLE_SEED,
    time_value: float = 0.0,
) -> float:
    """Worst absolute violation of the realizability identity on box samples."""
    q = layout.q
    worst = 0.0
    for row in box.sample(n_points, seed=seed):
        psi = goal.psi(row, time_value)
        ga = np.asarray(param.grad_state(row, time_value), dtype=float)
        gp = np.asarray(potential.grad_state(row, time_value), dtype=float)
        res = np.max(np.abs(gp[:, q:] - psi * ga[:, q:]))
        if res > worst:
            worst = float(res)
    return worst


@dataclass(frozen=True, eq=False)
class AdaptiveLoopSpec:
    """One subsystem with everything its adaptive controller needs.

    Construction validates the pieces against each other: the adaptation
    gain matrix must be symmetric positive definite, analytic gradients of
    the goal function and parametrization must match finite differences on
    the subsystem's domain box, and the auxiliary potential must satisfy
    the realizability identity there.
    """

    spec: SubsystemSpec
    goal: GoalFunction
    shaper: TargetShaper
    param: Parametrization
    potential: AuxiliaryPotential
    gain: np.ndarray

    def __post_init__(self):
        if self.param.dim != self.spec.param_dim:
            raise ValueError(
                f"parametrization dimension {self.param.dim} does not match "
                f"subsystem parameter dimension {self.spec.param_dim}"
            )
        gain = np.atleast_2d(np.asarray(self.gain, dtype=float))
        d = self.param.dim
        if gain.shape != (d, d):
            raise ValueError(f"gain must be {d}x{d}, got shape {gain.shape}")
        if np.max(np.abs(gain - gain.T)) > GAMMA_SYMMETRY_TOL:
            raise ValueError("gain matrix must be symmetric")
        eigs = np.linalg.eigvalsh(gain)
        if np.min(eigs) <= 0:
            raise ValueError(f"gain matrix must be positive definite, eigenvalues {eigs}")
        object.__setattr__(self, "gain", gain)

        check_gradient(self.goal.psi, self.goal.grad_state, self.spec.box)
        check_gradient(self.param.alpha, self.param.grad_state, self.spec.box)
        res = realizability_residual(
            self.potential, self.goal, self.param, self.spec.layout, self.spec.box
        )
        if res > REALIZABILITY_TOL:
            raise ValueError(
                f"auxiliary potential violates realizability: residual {res:.3e} "
                f"exceeds {REALIZABILITY_TOL:.1e}"
            )

    @property
    def gain_inverse(self) -> np.ndarray:
        return np.linalg.inv(self.gain)


def parameter_estimate(loop: AdaptiveLoopSpec, state, t: float, theta_i) -> np.ndarray:
    """Current estimate: gain @ (psi * alpha - Psi + theta_i).

    theta_i is the integral part of the estimate, owned by the integrator.
    Purely algebraic; no integration happens here.
    """
    psi = loop.goal.psi(state, t)
    alpha = np.asarray(loop.param.alpha(state, t), dtype=float)
    pot = np.asarray(loop.potential.value(state, t), dtype=float)
    return loop.gain @ (psi * alpha - pot + np.asarray(theta_i, dtype=float))


def integral_state_rate(loop: AdaptiveLoopSpec, state, t: float, u: float) -> np.ndarray:
    """Rate of the integral part of the estimate.

    phi(psi, t) * alpha plus correction terms built solely from first-block
    Lie derivatives and time partials; the second-block fields (which carry
    the unknown parameters) never enter, which is what makes the algorithm
    realizable.  `u` must be the control input at the same point.
    """
    spec, goal, param, pot = loop.spec, loop.goal, loop.param, loop.potential
    q = spec.layout.q
    psi = goal.psi(state, t)
    alpha = np.asarray(param.alpha(state, t), dtype=float)
    dalpha = np.asarray(param.grad_state(state, t), dtype=float)
    dalpha_dt = np.asarray(param.d_time(state, t), dtype=float)
    dpot = np.asarray(pot.grad_state(state, t), dtype=float)
    dpot_dt = np.asarray(pot.d_time(state, t), dtype=float)
    f1 = np.asarray(spec.f1(state, t), dtype=float)
    g1 = np.asarray(spec.g1(state), dtype=float)

    lf1_alpha = dalpha[:, :q] @ f1
    lg1_alpha = dalpha[:, :q] @ g1
    lf1_pot = dpot[:, :q] @ f1
    lg1_pot = dpot[:, :q] @ g1

    correction = dpot_dt - psi * (dalpha_dt + lf1_alpha) + lf1_pot
    correction -= (psi * lg1_alpha - lg1_pot) * u
    return loop.shaper.phi(psi, t) * alpha + correction


def virtual_estimate_rate(loop: AdaptiveLoopSpec, state, t: float, psi_dot: float) -> np.ndarray:
    """Reduced update law: gain @ ((psi_dot + phi(psi, t)) * alpha).

    psi_dot must be the true chain-rule derivative of the goal function
    along the closed loop, which is not measurable online; this form exists
    as an independent oracle for the realizable algorithm, equal to the
    derivative of `parameter_estimate` along trajectories.
    """
    psi = loop.goal.psi(state, t)
    alpha = np.asarray(loop.param.alpha(state, t), dtype=float)
    return loop.gain @ ((psi_dot + loop.shaper.phi(psi, t)) * alpha)


def _adaptive_simpson(f: Callable, a: float, b: float, abs_tol: float) -> float:
    """Adaptive Simpson quadrature of a scalar function on [a, b]."""
    if a == b:
        return 0.0
    if b < a:
        return -_adaptive_simpson(f, b, a, abs_tol)

    def simpson(x0, x2, f0, f2):
        x1 = 0.5 * (x0 + x2)
        f1 = f(x1)
        return x1, f1, (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    def recurse(x0, x2, f0, f2, whole, x1, f1, tol, depth):
        lm, flm, left = simpson(x0, x1, f0, f1)
        rm, frm, right = simpson(x1, x2, f1, f2)
        if depth > 48 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        half = 0.5 * tol
        return recurse(x0, x1, f0, f1, left, lm, flm, half, depth + 1) + recurse(
            x1, x2, f1, f2, right, rm, frm, half, depth + 1
        )

    fa, fb = f(a), f(b)
    mid, fmid, whole = simpson(a, b, fa, fb)
    return recurse(a, b, fa, fb, whole, mid, fmid, abs_tol, 0)


def build_potential_single_coordinate(
    goal: GoalFunction,
    param: Parametrization,
    layout,
    box: DomainBox,
    coord_index: int,
    abs_tol: float = QUADRATURE_ABS_TOL,
    n_check_points: int = 50,
    seed: int = DEFAULT_SAMPLE_SEED,
) -> AuxiliaryPotential:
    """Construct the potential by quadrature along one second-block coordinate.

    Applies when the goal function and the parametrization depend on the
    second block only through coordinate `coord_index` (an index into the
    second block).  Each component is the antiderivative of
    psi * (partial of that alpha component) with respect to that coordinate,
    integrated from the coordinate's lower box bound; the constant of
    integration is irrelevant because only derivatives of the potential
    enter the adaptation law.

    The partial along the integrated coordinate is returned in closed form
    (the integrand itself), so the realizability identity holds by
    construction; remaining partials differentiate the quadrature by central
    differences.

    Raises PotentialConstructionError when some other second-block
    coordinate carries a nonzero partial; run `check_poincare` to see
    whether a potential can exist at all.
    """
    q, p, n = layout.q, layout.p, layout.n
    if not 0 <= coord_index < p:
        raise ValueError(f"coord_index must be in [0, {p}), got {coord_index}")
    k = q + coord_index
    d = param.dim

    pts = box.sample(n_check_points, seed=seed)
    alpha_dep = 0.0
    for row in pts:
        gpsi = np.asarray(goal.grad_state(row, 0.0), dtype=float)
        galpha = np.asarray(param.grad_state(row, 0.0), dtype=float)
        for j in range(q, n):
            if j == k:
                continue
            off = max(abs(gpsi[j]), float(np.max(np.abs(galpha[:, j]))))
            if off > SINGLE_COORD_TOL:
                raise PotentialConstructionError(
                    f"second-block coordinate {j - q} carries partials up to {off:.3e}; "
                    "the single-coordinate construction does not apply. Run "
                    "check_poincare to test whether any potential exists."
                )
        alpha_dep = max(alpha_dep, float(np.max(np.abs(galpha[:, k]))))

    if alpha_dep <= SINGLE_COORD_TOL:
        return zero_potential(d, n)

    lower_k = box.lower[k]

    def integrand(state, t, i):
        work = np.asarray(state, dtype=float).copy()

        def f(s):
            work[k] = s
            gs = np.asarray(param.grad_state(work, t), dtype=float)
            return goal.psi(work, t) * gs[i, k]

        return f

    def value(state, t):
        upper = float(state[k])
        return np.array(
            [_adaptive_simpson(integrand(state, t, i), lower_k, upper, abs_tol) for i in range(d)]
        )

    def grad_state(state, t):
        out = np.zeros((d, n))
        psi = goal.psi(state, t)
        galpha = np.asarray(param.grad_state(state, t), dtype=float)
        out[:, k] = psi * galpha[:, k]
        state_arr = np.asarray(state, dtype=float)
        for j in range(q):
            h = 1e-3 * max(1.0, abs(state_arr[j]))
            out[:, j] = fd_state_partial(value, state_arr, j, t, h)
        return out

    def d_time(state, t):
        h = 1e-3
        vals = [value(state, t + o) for o in (2 * h, h, -h, -2 * h)]
        return (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12.0 * h)

    return AuxiliaryPotential(value=value, grad_state=grad_state, d_time=d_time)


def check_poincare(
    goal: GoalFunction,
    param: Parametrization,
    layout,
    box: DomainBox,
    n_samples: int = 50,
    tol: float = POINCARE_TOL,
    seed: int = DEFAULT_SAMPLE_SEED,
    time_value: float = 0.0,
    fd_step: float = 1e-4,
) -> CertificateEntry:
    """Test existence of an auxiliary potential via mixed-partial symmetry.

    For each alpha component, the Jacobian with respect to the second block
    of the field psi * (second-block gradient of that component) must be
    symmetric; by the Poincare lemma this is necessary and sufficient for a
    potential to exist locally.  Second-order terms are formed by central
    differences of the analytic first derivatives.  Failure is reported as
    an entry, not raised.
    """
    q, p = layout.q, layout.p
    worst = 0.0
    witness = {}

    def field_component(i):
        def comp(state, t):
            gs = np.asarray(param.grad_state(state, t), dtype=float)
            return goal.psi(state, t) * gs[i, q:]

        return comp

    for row in box.sample(n_samples, seed=seed):
        row = row.astype(float)
        for i in range(param.dim):
            comp = field_component(i)
            jac = np.empty((p, p))
            for l in range(p):
                h = fd_step * max(1.0, abs(row[q + l]))
                plus = row.copy()
                plus[q + l] += h
                minus = row.copy()
                minus[q + l] -= h
                jac[:, l] = (comp(plus, time_value) - comp(minus, time_value)) / (2.0 * h)
            res = float(np.max(np.abs(jac - jac.T)))
            if res > worst:
                worst = res
                witness = {
                    "state": row.tolist(),
                    "component": i,
                    "residual": res,
                }
    return entry_from_margin("poincare-symmetry", tol - worst, witness, tol)
