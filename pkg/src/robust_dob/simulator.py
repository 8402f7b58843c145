"""Fixed-step RK4 simulation of the closed and nominal loops.

The closed-loop state is stacked as [z, x, zbar, q, p]. The control input
has direct feedthrough from y, so u and w are recomputed inside every RK4
stage. When every evaluator is a numba dispatcher the loop runs compiled;
otherwise the identical source runs as plain Python.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit
from numba.core.errors import NumbaExperimentalFeatureWarning
from numba.core.registry import CPUDispatcher
from numba.extending import register_jitable

from . import analysis
from .controller import _control_law
from .plant import NominalModel, NormalFormPlant, SingularGainError
from .synthesis import ControllerParams, make_controller_params
from .trajectory import Trajectory

# evaluators are passed to the kernels as first-class functions
warnings.filterwarnings("ignore", category=NumbaExperimentalFeatureWarning)

log = logging.getLogger(__name__)

OK, BLOWUP, NONFINITE = 0, 1, 2
_STATUS = {OK: "", BLOWUP: "state norm exceeded the blow-up bound", NONFINITE: "non-finite state"}


@dataclass(frozen=True)
class SimConfig:
    """Integration settings and initial conditions.

    ``step=None`` means tau / 20 for closed-loop runs. Controller initial
    states default to zero.
    """

    t_end: float
    x0: tuple
    step: float | None = None
    record_stride: int = 1
    z0: tuple = ()
    zbar0: tuple | None = None
    q0: tuple | None = None
    p0: tuple | None = None
    blowup: float = 1e8
    allow_coarse_step: bool = False

    def __post_init__(self):
        if not self.t_end >= 0:
            raise ValueError("t_end must be non-negative")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")


# ---------------------------------------------------------------------------
# kernels


@register_jitable
def _closed_loop_deriv(t, s, nz, nu, fns, ctl):
    F0, F, G, Gbar, Ur = fns
    A, B, first, A_atau, Bq, Bp, obs_gain, phi_level, Phi_level, margin = ctl
    z = s[0:nz]
    x = s[nz:nz + nu]
    zbar = s[nz + nu:2 * nz + nu]
    q = s[2 * nz + nu:2 * nz + 2 * nu]
    p = s[2 * nz + 2 * nu:2 * nz + 3 * nu]
    y = x[first]
    u, w, xq, Gb = _control_law(t, zbar, q, p, y, F, Gbar, Ur, first, obs_gain, phi_level, Phi_level, margin)
    out = np.empty(s.shape[0])
    out[0:nz] = F0(z, x)
    out[nz:nz + nu] = A @ x + B @ (F(z, x) + G(z, x, t) @ u)
    out[nz + nu:2 * nz + nu] = F0(zbar, xq)
    out[2 * nz + nu:2 * nz + 2 * nu] = A_atau @ q + Bq @ y
    out[2 * nz + 2 * nu:2 * nz + 3 * nu] = A_atau @ p + Bp @ (Gb @ u)
    return out


@register_jitable
def _closed_loop_signals(t, s, nz, nu, fns, ctl):
    F0, F, G, Gbar, Ur = fns
    A, B, first, A_atau, Bq, Bp, obs_gain, phi_level, Phi_level, margin = ctl
    x = s[nz:nz + nu]
    zbar = s[nz + nu:2 * nz + nu]
    q = s[2 * nz + nu:2 * nz + 2 * nu]
    p = s[2 * nz + 2 * nu:2 * nz + 3 * nu]
    u, w, xq, Gb = _control_law(t, zbar, q, p, x[first], F, Gbar, Ur, first, obs_gain, phi_level, Phi_level, margin)
    return u, w


@register_jitable
def _nominal_deriv(t, s, nz, nu, fns, ctl):
    F0, F, G, Gbar, Ur = fns
    A, B = ctl[0], ctl[1]
    zb = s[0:nz]
    xb = s[nz:nz + nu]
    out = np.empty(s.shape[0])
    out[0:nz] = F0(zb, xb)
    out[nz:nz + nu] = A @ xb + B @ (F(zb, xb) + Gbar(zb, xb, t) @ Ur(zb, xb, t))
    return out


@register_jitable
def _nominal_signals(t, s, nz, nu, fns, ctl):
    F0, F, G, Gbar, Ur = fns
    u = Ur(s[0:nz], s[nz:nz + nu], t)
    return u, np.empty(0)


def _make_rk4_loop(deriv, signals):
    """Build the RK4 driver for one vector field; compile it with njit as needed."""

    def loop(s0, t0, h, n_steps, stride, blowup, nz, nu, m, nw, fns, ctl):
        n_rec = n_steps // stride + 1
        S = np.empty((n_rec, s0.shape[0]))
        U = np.empty((n_rec, m))
        W = np.empty((n_rec, nw))
        s = s0.copy()
        S[0] = s
        u, w = signals(t0, s, nz, nu, fns, ctl)
        U[0] = u
        W[0] = w
        rec = 1
        status = 0
        for k in range(n_steps):
            t = t0 + k * h
            k1 = deriv(t, s, nz, nu, fns, ctl)
            k2 = deriv(t + 0.5 * h, s + 0.5 * h * k1, nz, nu, fns, ctl)
            k3 = deriv(t + 0.5 * h, s + 0.5 * h * k2, nz, nu, fns, ctl)
            k4 = deriv(t + h, s + h * k3, nz, nu, fns, ctl)
            s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            big = 0.0
            finite = True
            for v in s:
                if not math.isfinite(v):
                    finite = False
                    break
                if abs(v) > big:
                    big = abs(v)
            if not finite:
                status = 2
                break
            if big > blowup:
                status = 1
            if (k + 1) % stride == 0 or status != 0:
                S[rec] = s
                u, w = signals(t0 + (k + 1) * h, s, nz, nu, fns, ctl)
                U[rec] = u
                W[rec] = w
                rec += 1
            if status != 0:
                break
        return S[:rec], U[:rec], W[:rec], status

    return loop


_rk4_closed_py = _make_rk4_loop(_closed_loop_deriv, _closed_loop_signals)
_rk4_nominal_py = _make_rk4_loop(_nominal_deriv, _nominal_signals)
_rk4_closed_jit = njit(_rk4_closed_py)
_rk4_nominal_jit = njit(_rk4_nominal_py)


def _compiled(*fns) -> bool:
    return all(isinstance(f, CPUDispatcher) for f in fns)


def rk4_integrate(f, y0, t0: float, step: float, n_steps: int) -> np.ndarray:
    """Classical RK4 for ``ydot = f(t, y)``; returns all n_steps + 1 states."""
    y = np.asarray(y0, dtype=float).copy()
    out = np.empty((n_steps + 1, y.size))
    out[0] = y
    for k in range(n_steps):
        t = t0 + k * step
        k1 = f(t, y)
        k2 = f(t + 0.5 * step, y + 0.5 * step * k1)
        k3 = f(t + 0.5 * step, y + 0.5 * step * k2)
        k4 = f(t + step, y + step * k3)
        y = y + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = y
    return out


def _n_steps(t_end: float, step: float) -> int:
    return int(math.floor(t_end / step + 1e-9))


def _vec(v, size: int, name: str) -> np.ndarray:
    arr = np.zeros(size) if v is None else np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have length {size}, got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# public runs


def simulate_closed_loop(
    plant: NormalFormPlant,
    nominal: NominalModel,
    params: ControllerParams,
    cfg: SimConfig,
) -> Trajectory:
    """Integrate plant plus controller. Aborted runs return a partial trajectory."""
    nz, nu, m = plant.nz, plant.rd.nu, plant.rd.m
    if params.rd != plant.rd:
        raise ValueError(f"controller built for nu={params.rd.degrees}, plant has {plant.rd.degrees}")
    step = params.tau / 20 if cfg.step is None else float(cfg.step)
    if step > params.tau / 20 * (1 + 1e-12) and not cfg.allow_coarse_step:
        raise ValueError(
            f"step {step:g} exceeds tau/20 = {params.tau / 20:g}; "
            "set allow_coarse_step to override"
        )
    s0 = np.concatenate((
        _vec(cfg.z0, nz, "z0"),
        _vec(cfg.x0, nu, "x0"),
        _vec(cfg.zbar0, nz, "zbar0"),
        _vec(cfg.q0, nu, "q0"),
        _vec(cfg.p0, nu, "p0"),
    ))
    mats = plant.matrices
    fns = (plant.F0, plant.F, plant.G, nominal.Gbar, nominal.Ur)
    ctl = (
        mats.A, mats.B, params.rd.first, params.A_atau, params.Bq_atau, params.Bp_atau,
        params.observer_gain, params.phi_level, params.Phi_level, params.sat_margin,
    )
    n_steps = _n_steps(cfg.t_end, step)
    kernel = _rk4_closed_jit if _compiled(*fns) else _rk4_closed_py
    try:
        S, U, W, status = kernel(s0, 0.0, step, n_steps, cfg.record_stride, cfg.blowup, nz, nu, m, m, fns, ctl)
    except np.linalg.LinAlgError as exc:
        raise SingularGainError(f"nominal gain became singular during integration: {exc}") from exc
    return _closed_trajectory(S, U, W, status, step, cfg, plant, params)


def _closed_trajectory(S, U, W, status, step, cfg, plant, params) -> Trajectory:
    nz, nu = plant.nz, plant.rd.nu
    n = len(S)
    times = np.arange(n) * (step * cfg.record_stride)
    if status != OK and n > 1:
        times[-1] = min(times[-1], cfg.t_end)
    x = S[:, nz:nz + nu]
    traj = Trajectory(
        times=times,
        z=S[:, :nz],
        x=x,
        zbar=S[:, nz + nu:2 * nz + nu],
        q=S[:, 2 * nz + nu:2 * nz + 2 * nu],
        p=S[:, 2 * nz + 2 * nu:],
        y=x[:, plant.rd.first],
        u=U,
        w=W,
        step=step,
        record_stride=cfg.record_stride,
        aborted=status != OK,
        reason=_STATUS[status],
        meta={"tau": params.tau, "t_end": cfg.t_end, "kind": "closed-loop"},
    )
    if traj.aborted:
        log.warning("closed-loop run aborted: %s", traj.reason)
    return traj


def simulate_nominal(plant: NormalFormPlant, nominal: NominalModel, cfg: SimConfig) -> Trajectory:
    """Integrate the nominal closed loop under u = Ur(zbar, xbar, t).

    ``cfg.step`` is required; ``cfg.z0`` seeds the nominal internal state.
    """
    if cfg.step is None:
        raise ValueError("nominal runs need an explicit step")
    nz, nu, m = plant.nz, plant.rd.nu, plant.rd.m
    s0 = np.concatenate((_vec(cfg.z0, nz, "z0"), _vec(cfg.x0, nu, "x0")))
    mats = plant.matrices
    fns = (plant.F0, plant.F, plant.G, nominal.Gbar, nominal.Ur)
    ctl = (mats.A, mats.B)
    kernel = _rk4_nominal_jit if _compiled(*fns) else _rk4_nominal_py
    step = float(cfg.step)
    try:
        S, U, W, status = kernel(
            s0, 0.0, step, _n_steps(cfg.t_end, step), cfg.record_stride, cfg.blowup, nz, nu, m, 0, fns, ctl
        )
    except np.linalg.LinAlgError as exc:
        raise SingularGainError(f"nominal gain became singular during integration: {exc}") from exc
    n = len(S)
    x = S[:, nz:]
    empty = np.empty((n, 0))
    return Trajectory(
        times=np.arange(n) * (step * cfg.record_stride),
        z=S[:, :nz],
        x=x,
        zbar=empty,
        q=empty,
        p=empty,
        y=x[:, plant.rd.first],
        u=U,
        w=empty,
        step=step,
        record_stride=cfg.record_stride,
        aborted=status != OK,
        reason=_STATUS[status],
        meta={"t_end": cfg.t_end, "kind": "nominal"},
    )


# ---------------------------------------------------------------------------
# tau sweep


def with_tau(params: ControllerParams, tau: float) -> ControllerParams:
    return make_controller_params(params.gains, params.rd, tau, params.phi_level, params.Phi_level, params.sat_margin)


@dataclass
class SweepEntry:
    tau: float
    step: float
    ultimate_bound: float = math.nan
    recovery_error: float = math.nan
    effort_l1: float = math.nan
    effort_l2: float = math.nan
    xi_tail: float = math.nan
    eta_tail: float = math.nan
    runtime: float = math.nan
    aborted: bool = False
    error: str = ""


@dataclass
class SweepReport:
    entries: list = field(default_factory=list)

    FIELDS = ("tau", "step", "ultimate_bound", "recovery_error", "effort_l1", "effort_l2",
              "xi_tail", "eta_tail", "runtime", "aborted", "error")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.entries])


def sweep_tau(
    plant: NormalFormPlant,
    nominal: NominalModel,
    params: ControllerParams,
    cfg: SimConfig,
    tau_list: Sequence[float],
    record_dt: float | None = None,
    t_ss: float | None = None,
    step_ratio: float = 20.0,
) -> SweepReport:
    """Run one closed loop per tau with step tau / step_ratio.

    Samples are recorded every ``record_dt`` seconds (default: every step).
    The nominal reference is integrated with the same step so the recovery
    error compares identical sample times. Failures are recorded per entry.
    """
    taus = [float(t) for t in tau_list]
    if any(t <= 0 for t in taus) or any(a < b for a, b in zip(taus, taus[1:])):
        raise ValueError("tau_list must be positive and descending")
    report = SweepReport()
    for tau in taus:
        step = tau / step_ratio
        stride = 1 if record_dt is None else max(1, int(round(record_dt / step)))
        run_cfg = replace(cfg, step=step, record_stride=stride)
        entry = SweepEntry(tau=tau, step=step)
        started = time.perf_counter()
        try:
            p_tau = with_tau(params, tau)
            traj = simulate_closed_loop(plant, nominal, p_tau, run_cfg)
            entry.aborted = traj.aborted
            nom = simulate_nominal(plant, nominal, replace(run_cfg, z0=cfg.z0))
            metrics = analysis.compute_metrics(traj, nom, t_ss)
            entry.ultimate_bound = metrics.ultimate_bound
            entry.recovery_error = metrics.recovery_error
            entry.effort_l1 = metrics.effort_l1
            entry.effort_l2 = metrics.effort_l2
            if not traj.aborted:
                tails = analysis.fast_variable_tails(traj, plant, nominal, p_tau, t_ss)
                entry.xi_tail, entry.eta_tail = tails
            if traj.aborted:
                entry.error = traj.reason
        except Exception as exc:  # recorded, the sweep continues
            entry.error = f"{type(exc).__name__}: {exc}"
            log.warning("sweep run tau=%g failed: %s", tau, entry.error)
        entry.runtime = time.perf_counter() - started
        report.entries.append(entry)
    return report
