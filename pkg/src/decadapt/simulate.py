"""Fixed-step integration of adaptive loops with trajectory logging.

Classical fourth-order Runge-Kutta on a fixed grid: certificate monitors
and the realizable-versus-virtual equivalence tests need a deterministic,
shared time grid, so reproducibility outranks solver efficiency here.
Running signal norms are accumulated by trapezoidal quadrature on the
logged grid; their quadrature error is folded into the tolerances of the
checks that consume them.

Integration stops at the horizon, on divergence (a state component exceeds
the configured bound), or on a controller singularity; the outcome is a
status on the trajectory, never an exception.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .adaptation import AdaptiveLoopSpec
from .controller import DEFAULT_CONTROL_CONFIG, ControlLawConfig, ControlSingularityError
from .interconnect import CoupledClosedLoop
from .model import _dot

STATUS_COMPLETED = "completed"
STATUS_DIVERGED = "diverged"
STATUS_SINGULAR = "singular"


@dataclass(frozen=True, eq=False)
class IntegratorConfig:
    step: float = 1e-3
    t_final: float = 1.0
    divergence_bound: float = 1e6
    log_every: int = 1

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if not self.t_final > 0:
            raise ValueError("t_final must be > 0")
        if self.step > self.t_final:
            raise ValueError("step must not exceed t_final")
        if self.log_every < 1 or int(self.log_every) != self.log_every:
            raise ValueError("log_every must be a positive integer")
        if not self.divergence_bound > 0:
            raise ValueError("divergence_bound must be > 0")

    @property
    def n_steps(self) -> int:
        return max(1, round(self.t_final / self.step))


@dataclass(frozen=True, eq=False)
class Disturbance:
    """Exogenous perturbation of a single loop's second state block.

    The scalar signal(t) is injected along `direction` (length p, default
    the first second-block coordinate).  The induced disturbance of the
    goal-error equation is the derivative of the goal function along the
    injected field, which the integrator logs as the eps channel.
    """

    signal: Callable
    direction: Optional[tuple] = None

    def resolve_direction(self, p: int) -> tuple:
        if self.direction is None:
            return tuple(1.0 if i == 0 else 0.0 for i in range(p))
        if len(self.direction) != p:
            raise ValueError(f"direction must have length {p}")
        return tuple(float(v) for v in self.direction)


def zero_disturbance() -> Disturbance:
    return Disturbance(signal=lambda t: 0.0)


def exponential_disturbance(scale: float, rate: float) -> Disturbance:
    """signal(t) = scale * exp(-rate * t); square-integrable for rate > 0."""
    if rate <= 0:
        raise ValueError("rate must be > 0 for a square-integrable signal")
    return Disturbance(signal=lambda t: scale * math.exp(-rate * t))


def pulse_disturbance(amplitude: float, t_on: float, t_off: float) -> Disturbance:
    """Rectangular pulse on [t_on, t_off); truncated, hence square-integrable."""
    if not t_off > t_on:
        raise ValueError("t_off must exceed t_on")
    return Disturbance(signal=lambda t: amplitude if t_on <= t < t_off else 0.0)


@dataclass(eq=False)
class LoopTrajectory:
    """Logged record of one adaptive loop, with running norms.

    eps is the disturbance entering the goal-error equation (for coupled
    runs, the coupling channel into this loop).  l2_* arrays hold the
    running norms over [t0, t_k]; linf_psi the running peak of |psi|.
    """

    t: np.ndarray
    state: np.ndarray
    theta_hat: np.ndarray
    theta_i: np.ndarray
    psi: np.ndarray
    u: np.ndarray
    eps: np.ndarray
    mismatch: np.ndarray
    l2_psi: np.ndarray
    l2_eps: np.ndarray
    l2_mismatch: np.ndarray
    linf_psi: np.ndarray
    status: str

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])


@dataclass(eq=False)
class Trajectory:
    """Logged record of a coupled run; see LoopTrajectory for conventions."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta_hat_x: np.ndarray
    theta_hat_y: np.ndarray
    theta_i_x: np.ndarray
    theta_i_y: np.ndarray
    psi_x: np.ndarray
    psi_y: np.ndarray
    u_x: np.ndarray
    u_y: np.ndarray
    h_into_x: np.ndarray
    h_into_y: np.ndarray
    mismatch_x: np.ndarray
    mismatch_y: np.ndarray
    l2_psi_x: np.ndarray
    l2_psi_y: np.ndarray
    l2_h_into_x: np.ndarray
    l2_h_into_y: np.ndarray
    l2_mismatch_x: np.ndarray
    l2_mismatch_y: np.ndarray
    linf_psi_x: np.ndarray
    linf_psi_y: np.ndarray
    status: str

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def loop_view(self, which: str) -> LoopTrajectory:
        """Per-loop view with the coupling channel into that loop as eps."""
        if which == "x":
            return LoopTrajectory(
                t=self.t, state=self.x, theta_hat=self.theta_hat_x, theta_i=self.theta_i_x,
                psi=self.psi_x, u=self.u_x, eps=self.h_into_x, mismatch=self.mismatch_x,
                l2_psi=self.l2_psi_x, l2_eps=self.l2_h_into_x, l2_mismatch=self.l2_mismatch_x,
                linf_psi=self.linf_psi_x, status=self.status,
            )
        if which == "y":
            return LoopTrajectory(
                t=self.t, state=self.y, theta_hat=self.theta_hat_y, theta_i=self.theta_i_y,
                psi=self.psi_y, u=self.u_y, eps=self.h_into_y, mismatch=self.mismatch_y,
                l2_psi=self.l2_psi_y, l2_eps=self.l2_h_into_y, l2_mismatch=self.l2_mismatch_y,
                linf_psi=self.linf_psi_y, status=self.status,
            )
        raise ValueError("which must be 'x' or 'y'")


def running_l2(t: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Running L2 norm of a sampled signal by trapezoidal quadrature."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    sq = v * v
    increments = 0.5 * (sq[1:] + sq[:-1]) * np.diff(t)
    out = np.empty_like(t)
    out[0] = 0.0
    np.cumsum(increments, out=out[1:])
    return np.sqrt(out)


def rk4_path(rhs: Callable, y0, t0: float, step: float, n_steps: int) -> tuple:
    """Bare fixed-step RK4 on a plain vector field rhs(t, y) -> sequence.

    Returns (times, states) as numpy arrays; no logging thinning, no
    divergence handling.  The closed-loop integrators below share the same
    tableau; this entry point exists for probing integrator accuracy
    directly.
    """
    y = [float(v) for v in y0]
    m = len(y)
    times = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, m))
    times[0] = t0
    states[0] = y
    h = step
    half = 0.5 * h
    sixth = h / 6.0
    for k in range(n_steps):
        t = t0 + k * h
        k1 = rhs(t, y)
        k2 = rhs(t + half, [a + half * b for a, b in zip(y, k1)])
        k3 = rhs(t + half, [a + half * b for a, b in zip(y, k2)])
        k4 = rhs(t + h, [a + h * b for a, b in zip(y, k3)])
        y = [a + sixth * (b + 2.0 * (c + d) + e)
             for a, b, c, d, e in zip(y, k1, k2, k3, k4)]
        times[k + 1] = t0 + (k + 1) * h
        states[k + 1] = y
    return times, states


def _compile_loop_rates(loop: AdaptiveLoopSpec, theta_true, control_cfg: ControlLawConfig,
                        tag: str):
    """Bind one loop's callables into a fast per-point rate evaluator.

    Returns rates(state, theta_i, t, inject2) -> (state_dot, theta_i_dot,
    diag) with diag = (psi, u, theta_hat, mismatch, eps_channel).  The
    arithmetic matches the reference operations in `controller` and
    `adaptation` term for term; this closure only shares sub-expressions.
    """
    spec, goal, shaper, param, pot = loop.spec, loop.goal, loop.shaper, loop.param, loop.potential
    q = spec.layout.q
    p = spec.layout.p
    d = param.dim
    gamma_rows = [tuple(r) for r in np.atleast_2d(loop.gain).tolist()]
    theta_true = tuple(float(v) for v in theta_true)
    psi_fn, grad_fn, dpsidt_fn = goal.psi, goal.grad_state, goal.d_time
    alpha_fn, dalpha_fn, dalphadt_fn = param.alpha, param.grad_state, param.d_time
    pot_fn, dpot_fn, dpotdt_fn = pot.value, pot.grad_state, pot.d_time
    f1_fn, f2_fn, g1_fn, g2_fn = spec.f1, spec.f2, spec.g1, spec.g2
    phi = shaper.phi
    floor = control_cfg.singularity_floor

    def rates(state, theta_i, t, inject2):
        grad = grad_fn(state, t)
        gq = grad[:q]
        gp = grad[q:]
        psi = psi_fn(state, t)
        alpha = alpha_fn(state, t)
        potv = pot_fn(state, t)
        v = [psi * a - pv + ti for a, pv, ti in zip(alpha, potv, theta_i)]
        theta_hat = [_dot(row, v) for row in gamma_rows]

        f1v = f1_fn(state, t)
        g1v = g1_fn(state)
        g2v = g2_fn(state)
        f2_hat = f2_fn(state, theta_hat, t)
        lf1 = _dot(gq, f1v)
        drift_hat = lf1 + _dot(gp, f2_hat)
        gain_u = _dot(gq, g1v) + _dot(gp, g2v)
        if abs(gain_u) < floor:
            raise ControlSingularityError(state, t, gain_u, subsystem=tag)
        phiv = phi(psi, t)
        u = (-drift_hat - phiv - dpsidt_fn(state, t)) / gain_u

        f2v = f2_fn(state, theta_true, t)
        state_dot = [fv + gv * u for fv, gv in zip(f1v, g1v)]
        state_dot += [fv + iv + gv * u for fv, iv, gv in zip(f2v, inject2, g2v)]

        dalpha = dalpha_fn(state, t)
        dalphadt = dalphadt_fn(state, t)
        dpot = dpot_fn(state, t)
        dpotdt = dpotdt_fn(state, t)
        theta_i_dot = []
        for a, da, dadt, dp, dpdt in zip(alpha, dalpha, dalphadt, dpot, dpotdt):
            corr = dpdt - psi * (dadt + _dot(da[:q], f1v)) + _dot(dp[:q], f1v)
            corr -= (psi * _dot(da[:q], g1v) - _dot(dp[:q], g1v)) * u
            theta_i_dot.append(phiv * a + corr)

        drift_true = lf1 + _dot(gp, f2v)
        diag = (psi, u, theta_hat, drift_true - drift_hat, _dot(gp, inject2))
        return state_dot, theta_i_dot, diag

    return rates


def _rk4_log_run(rhs_full, y0, cfg: IntegratorConfig, t0: float, log_fn):
    """Shared RK4 loop with thinned logging and divergence/singularity handling.

    rhs_full(t, y) -> (deriv list, diag); log_fn(index, t, y, diag) writes
    one sample.  Returns (number_of_logged_samples, status).
    """
    h = cfg.step
    half = 0.5 * h
    sixth = h / 6.0
    bound = cfg.divergence_bound
    every = cfg.log_every
    n_steps = cfg.n_steps
    y = [float(v) for v in y0]

    # an undefined control law at the initial point is a caller error: propagate
    deriv, diag = rhs_full(t0, y)
    log_fn(0, t0, y, diag)
    logged = 1

    for k in range(n_steps):
        t = t0 + k * h
        try:
            if k == 0:
                k1 = deriv
            else:
                k1, diag = rhs_full(t, y)
                if k % every == 0:
                    log_fn(logged, t, y, diag)
                    logged += 1
            k2, _ = rhs_full(t + half, [a + half * b for a, b in zip(y, k1)])
            k3, _ = rhs_full(t + half, [a + half * b for a, b in zip(y, k2)])
            k4, _ = rhs_full(t + h, [a + h * b for a, b in zip(y, k3)])
        except ControlSingularityError:
            return logged, STATUS_SINGULAR
        y = [a + sixth * (b + 2.0 * (c + d) + e)
             for a, b, c, d, e in zip(y, k1, k2, k3, k4)]
        for v in y:
            if not (-bound <= v <= bound):
                return logged, STATUS_DIVERGED

    tf = t0 + n_steps * h
    if n_steps % every == 0:
        try:
            _, diag = rhs_full(tf, y)
        except ControlSingularityError:
            return logged, STATUS_SINGULAR
        log_fn(logged, tf, y, diag)
        logged += 1
    return logged, STATUS_COMPLETED


class _NormTracker:
    """Running trapezoidal L2 accumulators over the logged grid."""

    def __init__(self, n_signals: int, dt_log: float):
        self.sq = [0.0] * n_signals
        self.prev = [0.0] * n_signals
        self.half_dt = 0.5 * dt_log

    def start(self, values):
        self.prev = list(values)
        return [0.0] * len(self.prev)

    def advance(self, values):
        out = []
        sq = self.sq
        half_dt = self.half_dt
        for i, (pv, v) in enumerate(zip(self.prev, values)):
            sq[i] += (pv * pv + v * v) * half_dt
            out.append(math.sqrt(sq[i]))
        self.prev = list(values)
        return out


def integrate(
    sys: CoupledClosedLoop,
    cfg: IntegratorConfig,
    aug0,
    t0: float = 0.0,
    control_cfg: ControlLawConfig = DEFAULT_CONTROL_CONFIG,
) -> Trajectory:
    """Simulate the coupled closed loop from an augmented initial state.

    aug0 concatenates x, theta_i_x, y, theta_i_y.  The result is logged
    every cfg.log_every steps on the uniform grid, with running norms of
    the goal errors, coupling channels, and drift mismatches.
    """
    n_x, d_x, n_y, d_y = sys.dims
    x0, ti_x0, y0, ti_y0 = sys.split_state(np.asarray(aug0, dtype=float))
    rates_x = _compile_loop_rates(sys.loop_x, sys.theta_true_x, control_cfg, "x")
    rates_y = _compile_loop_rates(sys.loop_y, sys.theta_true_y, control_cfg, "y")
    into_x2 = sys.coupling.into_x2
    into_y2 = sys.coupling.into_y2
    ax, bx = n_x, n_x + d_x
    ay = bx + n_y

    def rhs_full(t, aug):
        x = aug[:ax]
        ti_x = aug[ax:bx]
        y = aug[bx:ay]
        ti_y = aug[ay:]
        inj_x = into_x2(y, t)
        inj_y = into_y2(x, t)
        xd, tixd, diag_x = rates_x(x, ti_x, t, inj_x)
        yd, tiyd, diag_y = rates_y(y, ti_y, t, inj_y)
        return xd + tixd + yd + tiyd, (diag_x, diag_y)

    n_logs = cfg.n_steps // cfg.log_every + 1
    t_arr = np.empty(n_logs)
    x_arr = np.empty((n_logs, n_x))
    y_arr = np.empty((n_logs, n_y))
    thx = np.empty((n_logs, d_x))
    thy = np.empty((n_logs, d_y))
    tix = np.empty((n_logs, d_x))
    tiy = np.empty((n_logs, d_y))
    scalars = {
        name: np.empty(n_logs)
        for name in (
            "psi_x", "psi_y", "u_x", "u_y", "h_into_x", "h_into_y",
            "mismatch_x", "mismatch_y", "l2_psi_x", "l2_psi_y", "l2_h_into_x",
            "l2_h_into_y", "l2_mismatch_x", "l2_mismatch_y", "linf_psi_x", "linf_psi_y",
        )
    }
    tracker = _NormTracker(6, cfg.step * cfg.log_every)
    peak = [0.0, 0.0]

    def log_fn(i, t, aug, diag):
        (psi_x, u_x, th_x, mis_x, h_x), (psi_y, u_y, th_y, mis_y, h_y) = diag
        t_arr[i] = t
        x_arr[i] = aug[:ax]
        tix[i] = aug[ax:bx]
        y_arr[i] = aug[bx:ay]
        tiy[i] = aug[ay:]
        thx[i] = th_x
        thy[i] = th_y
        sig = (psi_x, psi_y, h_x, h_y, mis_x, mis_y)
        if i == 0:
            l2 = tracker.start(sig)
        else:
            l2 = tracker.advance(sig)
        peak[0] = max(peak[0], abs(psi_x))
        peak[1] = max(peak[1], abs(psi_y))
        s = scalars
        s["psi_x"][i] = psi_x
        s["psi_y"][i] = psi_y
        s["u_x"][i] = u_x
        s["u_y"][i] = u_y
        s["h_into_x"][i] = h_x
        s["h_into_y"][i] = h_y
        s["mismatch_x"][i] = mis_x
        s["mismatch_y"][i] = mis_y
        s["l2_psi_x"][i] = l2[0]
        s["l2_psi_y"][i] = l2[1]
        s["l2_h_into_x"][i] = l2[2]
        s["l2_h_into_y"][i] = l2[3]
        s["l2_mismatch_x"][i] = l2[4]
        s["l2_mismatch_y"][i] = l2[5]
        s["linf_psi_x"][i] = peak[0]
        s["linf_psi_y"][i] = peak[1]

    aug_list = list(np.concatenate([x0, ti_x0, y0, ti_y0]))
    logged, status = _rk4_log_run(rhs_full, aug_list, cfg, t0, log_fn)

    sl = slice(0, logged)
    return Trajectory(
        t=t_arr[sl], x=x_arr[sl], y=y_arr[sl],
        theta_hat_x=thx[sl], theta_hat_y=thy[sl], theta_i_x=tix[sl], theta_i_y=tiy[sl],
        psi_x=scalars["psi_x"][sl], psi_y=scalars["psi_y"][sl],
        u_x=scalars["u_x"][sl], u_y=scalars["u_y"][sl],
        h_into_x=scalars["h_into_x"][sl], h_into_y=scalars["h_into_y"][sl],
        mismatch_x=scalars["mismatch_x"][sl], mismatch_y=scalars["mismatch_y"][sl],
        l2_psi_x=scalars["l2_psi_x"][sl], l2_psi_y=scalars["l2_psi_y"][sl],
        l2_h_into_x=scalars["l2_h_into_x"][sl], l2_h_into_y=scalars["l2_h_into_y"][sl],
        l2_mismatch_x=scalars["l2_mismatch_x"][sl], l2_mismatch_y=scalars["l2_mismatch_y"][sl],
        linf_psi_x=scalars["linf_psi_x"][sl], linf_psi_y=scalars["linf_psi_y"][sl],
        status=status,
    )


def integrate_loop(
    loop: AdaptiveLoopSpec,
    theta_true,
    disturbance: Disturbance,
    cfg: IntegratorConfig,
    state0,
    theta_i0,
    t0: float = 0.0,
    control_cfg: ControlLawConfig = DEFAULT_CONTROL_CONFIG,
) -> LoopTrajectory:
    """Simulate a single adaptive loop under an exogenous disturbance.

    With a zero disturbance the per-subsystem arithmetic is identical to a
    coupled run whose coupling vanishes, so the two produce bit-identical
    subsystem trajectories on the same grid.
    """
    layout = loop.spec.layout
    n, p, d = layout.n, layout.p, loop.spec.param_dim
    direction = disturbance.resolve_direction(p)
    signal = disturbance.signal
    rates = _compile_loop_rates(loop, theta_true, control_cfg, "loop")

    def rhs_full(t, z):
        state = z[:n]
        theta_i = z[n:]
        s = signal(t)
        inj = [s * dv for dv in direction]
        sd, tid, diag = rates(state, theta_i, t, inj)
        return sd + tid, diag

    n_logs = cfg.n_steps // cfg.log_every + 1
    t_arr = np.empty(n_logs)
    st_arr = np.empty((n_logs, n))
    th_arr = np.empty((n_logs, d))
    ti_arr = np.empty((n_logs, d))
    cols = {name: np.empty(n_logs) for name in
            ("psi", "u", "eps", "mismatch", "l2_psi", "l2_eps", "l2_mismatch", "linf_psi")}
    tracker = _NormTracker(3, cfg.step * cfg.log_every)
    peak = [0.0]

    def log_fn(i, t, z, diag):
        psi, u, th, mis, eps = diag
        t_arr[i] = t
        st_arr[i] = z[:n]
        ti_arr[i] = z[n:]
        th_arr[i] = th
        sig = (psi, eps, mis)
        l2 = tracker.start(sig) if i == 0 else tracker.advance(sig)
        peak[0] = max(peak[0], abs(psi))
        cols["psi"][i] = psi
        cols["u"][i] = u
        cols["eps"][i] = eps
        cols["mismatch"][i] = mis
        cols["l2_psi"][i] = l2[0]
        cols["l2_eps"][i] = l2[1]
        cols["l2_mismatch"][i] = l2[2]
        cols["linf_psi"][i] = peak[0]

    z0 = list(np.asarray(state0, dtype=float)) + list(np.asarray(theta_i0, dtype=float))
    if len(z0) != n + d:
        raise ValueError(f"initial data must have total length {n + d}")
    logged, status = _rk4_log_run(rhs_full, z0, cfg, t0, log_fn)

    sl = slice(0, logged)
    return LoopTrajectory(
        t=t_arr[sl], state=st_arr[sl], theta_hat=th_arr[sl], theta_i=ti_arr[sl],
        psi=cols["psi"][sl], u=cols["u"][sl], eps=cols["eps"][sl],
        mismatch=cols["mismatch"][sl], l2_psi=cols["l2_psi"][sl], l2_eps=cols["l2_eps"][sl],
        l2_mismatch=cols["l2_mismatch"][sl], linf_psi=cols["linf_psi"][sl], status=status,
    )


@dataclass(eq=False)
class VirtualTrajectory:
    """Record of the reduced-form oracle integration: estimates evolve directly."""

    t: np.ndarray
    state: np.ndarray
    theta_hat: np.ndarray
    psi: np.ndarray
    status: str


def integrate_virtual(
    loop: AdaptiveLoopSpec,
    theta_true,
    disturbance: Disturbance,
    cfg: IntegratorConfig,
    state0,
    theta_hat0,
    t0: float = 0.0,
    control_cfg: ControlLawConfig = DEFAULT_CONTROL_CONFIG,
) -> VirtualTrajectory:
    """Integrate the reduced update law as an oracle for the realizable one.

    The estimate is itself a state: its rate is gain @ ((psi_dot + phi) *
    alpha) with psi_dot the true chain-rule derivative of the goal function
    along the closed loop.  That requires the true parameters, so it is not
    realizable online; from consistent initial data it must reproduce the
    estimates of `integrate_loop` up to integration error.
    """
    spec, goal, shaper, param = loop.spec, loop.goal, loop.shaper, loop.param
    layout = spec.layout
    q, p, n, d = layout.q, layout.p, layout.n, spec.param_dim
    direction = disturbance.resolve_direction(p)
    signal = disturbance.signal
    gamma_rows = [tuple(r) for r in np.atleast_2d(loop.gain).tolist()]
    theta_true = tuple(float(v) for v in theta_true)
    floor = control_cfg.singularity_floor

    def rhs_full(t, z):
        state = z[:n]
        theta_hat = z[n:]
        grad = goal.grad_state(state, t)
        gq, gp = grad[:q], grad[q:]
        psi = goal.psi(state, t)
        dpsidt = goal.d_time(state, t)
        f1v = spec.f1(state, t)
        g1v = spec.g1(state)
        g2v = spec.g2(state)
        f2_hat = spec.f2(state, theta_hat, t)
        drift_hat = _dot(gq, f1v) + _dot(gp, f2_hat)
        gain_u = _dot(gq, g1v) + _dot(gp, g2v)
        if abs(gain_u) < floor:
            raise ControlSingularityError(state, t, gain_u, subsystem="virtual")
        phiv = shaper.phi(psi, t)
        u = (-drift_hat - phiv - dpsidt) / gain_u
        f2v = spec.f2(state, theta_true, t)
        s = signal(t)
        state_dot = [fv + gv * u for fv, gv in zip(f1v, g1v)]
        state_dot += [fv + s * dv + gv * u for fv, dv, gv in zip(f2v, direction, g2v)]
        psi_dot = dpsidt + _dot(grad, state_dot)
        alpha = param.alpha(state, t)
        w = psi_dot + phiv
        incr = [w * a for a in alpha]
        theta_hat_dot = [_dot(row, incr) for row in gamma_rows]
        return state_dot + theta_hat_dot, (psi, u)

    n_logs = cfg.n_steps // cfg.log_every + 1
    t_arr = np.empty(n_logs)
    st_arr = np.empty((n_logs, n))
    th_arr = np.empty((n_logs, d))
    psi_arr = np.empty(n_logs)

    def log_fn(i, t, z, diag):
        t_arr[i] = t
        st_arr[i] = z[:n]
        th_arr[i] = z[n:]
        psi_arr[i] = diag[0]

    z0 = list(np.asarray(state0, dtype=float)) + list(np.asarray(theta_hat0, dtype=float))
    logged, status = _rk4_log_run(rhs_full, z0, cfg, t0, log_fn)
    sl = slice(0, logged)
    return VirtualTrajectory(
        t=t_arr[sl], state=st_arr[sl], theta_hat=th_arr[sl], psi=psi_arr[sl], status=status
    )


def first_attainment_time(t: np.ndarray, values: np.ndarray, threshold: float,
                          window: float = 0.0):
    """Earliest logged time from which |values| stays within threshold.

    Requires at least `window` time units of trailing data to support the
    claim; returns None when no suffix qualifies.
    """
    t = np.asarray(t, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    suffix_max = np.maximum.accumulate(v[::-1])[::-1]
    ok = (suffix_max <= threshold) & (t <= t[-1] - window + 1e-15)
    idx = np.nonzero(ok)[0]
    return float(t[idx[0]]) if idx.size else None


def goal_attainment(traj: Trajectory, eps_x: float, eps_y: float, window: float = 0.0):
    """Earliest logged time from which both goal errors stay within bounds.

    Returns None if the trajectory never settles (or did not complete with
    enough trailing data).
    """
    tx = first_attainment_time(traj.t, traj.psi_x, eps_x, window)
    ty = first_attainment_time(traj.t, traj.psi_y, eps_y, window)
    if tx is None or ty is None:
        return None
    return max(tx, ty)


def _fmt(value: float) -> str:
    return format(value, ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Export a coupled trajectory as CSV with 17-significant-digit floats."""
    n_x = traj.x.shape[1]
    n_y = traj.y.shape[1]
    d_x = traj.theta_hat_x.shape[1]
    d_y = traj.theta_hat_y.shape[1]
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(n_x)]
        + [f"y{i + 1}" for i in range(n_y)]
        + ["psiX", "psiY", "uX", "uY"]
        + [f"thetaHatX{i + 1}" for i in range(d_x)]
        + [f"thetaHatY{i + 1}" for i in range(d_y)]
        + ["l2PsiX", "l2PsiY", "linfPsiX", "linfPsiY",
           "l2MismatchX", "l2MismatchY", "hIntoX", "hIntoY"]
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(traj.t.shape[0]):
            row = (
                [traj.t[i]]
                + list(traj.x[i])
                + list(traj.y[i])
                + [traj.psi_x[i], traj.psi_y[i], traj.u_x[i], traj.u_y[i]]
                + list(traj.theta_hat_x[i])
                + list(traj.theta_hat_y[i])
                + [traj.l2_psi_x[i], traj.l2_psi_y[i], traj.linf_psi_x[i],
                   traj.linf_psi_y[i], traj.l2_mismatch_x[i], traj.l2_mismatch_y[i],
                   traj.h_into_x[i], traj.h_into_y[i]]
            )
            fh.write(",".join(_fmt(v) for v in row) + "\n")
