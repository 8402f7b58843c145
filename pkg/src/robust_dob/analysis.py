"""Numerical checks of the fast-variable coordinates and closed-loop metrics.

Fast coordinates for channel i, j = 1..nu_i:

    xi_ij  = (q_ij - x_ij) / tau^(nu_i - j)
    eta_ij = tau^(j-1) (p_i1^(j-1) - q_i,nu_i^(j))

In these coordinates

    tau xi'  = A_xi xi - tau B Theta_xi
    tau eta' = A eta + B Theta_eta

with A_xi the filter matrix at tau = 1. When the fast dynamics are
frozen, xi* = 0 and eta* = C^T eta1*, where

    eta1* = -F(zbar, x) + Gbar G^{-1} [F(zbar, x) - F(z, x) + (Gbar - G) Ur(zbar, x)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .controller import ControllerState, SmoothSaturation, _sat
from .plant import (
    NominalModel,
    NormalFormPlant,
    RelativeDegreeVector,
    SingularGainError,
    build_structural_matrices,
    check_invertible,
)
from .synthesis import ControllerParams, assemble_filter_matrices
from .trajectory import Trajectory


class SamplingError(ValueError):
    """A trajectory is too coarse or too short for finite differencing."""


# ---------------------------------------------------------------------------
# fast coordinates


def xi_from_states(q, x, tau: float, rd: RelativeDegreeVector) -> np.ndarray:
    """Scaled observer error; works on single vectors or (samples, nu) arrays."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    diff = np.asarray(q, dtype=float) - np.asarray(x, dtype=float)
    scale = np.concatenate([tau ** (d - 1 - np.arange(d, dtype=float)) for d in rd.degrees])
    return diff / scale


def central_weights(order: int) -> tuple[int, np.ndarray]:
    """Second-order accurate symmetric stencil ``(half_width, weights)``.

    The derivative is sum_k weights[k] f[i + k - half_width] / h**order.
    """
    if order < 1:
        raise ValueError("derivative order must be >= 1")
    half = (order + 1) // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    V = np.vander(offsets, increasing=True).T
    rhs = np.zeros(len(offsets))
    rhs[order] = math.factorial(order)
    return half, np.linalg.solve(V, rhs)


def central_derivative(signal, h: float, order: int, half_width: int | None = None) -> np.ndarray:
    """Finite-difference derivative on the interior samples.

    The result is aligned with ``signal[hw:len(signal)-hw]`` where ``hw`` is
    ``half_width`` (at least the stencil's own half width).
    """
    f = np.asarray(signal, dtype=float)
    half, weights = central_weights(order)
    hw = half if half_width is None else half_width
    if hw < half:
        raise ValueError("half_width smaller than the stencil")
    n = f.shape[0]
    if n <= 2 * hw:
        raise SamplingError(f"need more than {2 * hw} samples for a derivative of order {order}")
    out = np.zeros((n - 2 * hw,) + f.shape[1:])
    for k, wk in enumerate(weights):
        shift = k - half
        out += wk * f[hw + shift:n - hw + shift]
    return out / h**order


def _require_dense(traj: Trajectory, tau: float, order: int):
    if traj.record_stride != 1:
        raise SamplingError("finite-difference reconstruction needs record_stride = 1")
    if traj.step > tau / 20 * (1 + 1e-9):
        raise SamplingError(f"sample spacing {traj.step:g} is coarser than tau/20 = {tau / 20:g}")
    half = (order + 1) // 2
    if len(traj) <= 2 * half:
        raise SamplingError(f"trajectory has {len(traj)} samples, need more than {2 * half}")


@dataclass(frozen=True)
class EtaSeries:
    times: np.ndarray
    eta: np.ndarray
    offset: int


def eta_from_trajectory(traj: Trajectory, tau: float, rd: RelativeDegreeVector) -> EtaSeries:
    """Reconstruct eta from recorded p and q by central finite differences.

    ``offset`` is the number of samples dropped at each end; the values are
    O(h^2) accurate.
    """
    max_order = max(rd.degrees)
    _require_dense(traj, tau, max_order)
    hw = (max_order + 1) // 2
    h = traj.step
    n = len(traj) - 2 * hw
    eta = np.empty((n, rd.nu))
    for i, (first, last, d) in enumerate(zip(rd.first, rd.last, rd.degrees)):
        p1 = traj.p[:, first]
        qn = traj.q[:, last]
        for j in range(1, d + 1):
            p_der = p1[hw:len(traj) - hw] if j == 1 else central_derivative(p1, h, j - 1, hw)
            q_der = central_derivative(qn, h, j, hw)
            eta[:, first + j - 1] = tau ** (j - 1) * (p_der - q_der)
    return EtaSeries(traj.times[hw:len(traj) - hw], eta, hw)


def eta_from_states(q, p, x, params: ControllerParams) -> np.ndarray:
    """Exact eta from controller and plant states.

    Derivatives of p_i1 up to order nu_i - 1 and of q_i,nu_i up to order
    nu_i never reach the filter inputs beyond y and its first nu_i - 1
    derivatives, which are the states x_i.
    """
    rd, tau = params.rd, params.tau
    q = np.atleast_2d(np.asarray(q, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    eta = np.empty_like(q)
    for i, blk in enumerate(rd.blocks()):
        d = rd.degrees[i]
        Ai = params.A_atau[blk, blk]
        bq = params.Bq_atau[blk, i]
        qi, pi, xi = q[:, blk], p[:, blk], x[:, blk]
        # q_i^(k) and p_i^(k) as rows, k = 0..d
        q_der = [qi]
        p_der = [pi]
        for k in range(1, d + 1):
            q_der.append(q_der[-1] @ Ai.T + np.outer(xi[:, k - 1], bq))
            if k < d:
                p_der.append(p_der[-1] @ Ai.T)
        for j in range(1, d + 1):
            eta[:, blk.start + j - 1] = tau ** (j - 1) * (p_der[j - 1][:, 0] - q_der[j][:, d - 1])
    return eta


# ---------------------------------------------------------------------------
# quasi-steady state


def quasi_steady_eta(z, x, zbar, t: float, plant: NormalFormPlant, nominal: NominalModel) -> np.ndarray:
    """Frozen-fast-dynamics value of the first eta components."""
    z, x, zbar = (np.asarray(v, dtype=float) for v in (z, x, zbar))
    point = dict(z=z.tolist(), x=x.tolist(), zbar=zbar.tolist(), t=t)
    G = check_invertible(plant.G(z, x, t), "G", point)
    Gb = check_invertible(nominal.Gbar(zbar, x, t), "Gbar", point)
    Fbar = np.asarray(plant.F(zbar, x), dtype=float)
    Fz = np.asarray(plant.F(z, x), dtype=float)
    Ur = np.asarray(nominal.Ur(zbar, x, t), dtype=float)
    return -Fbar + Gb @ np.linalg.solve(G, Fbar - Fz + (Gb - G) @ Ur)


def quasi_steady_residual(
    eta1,
    z,
    x,
    zbar,
    t: float,
    plant: NormalFormPlant,
    nominal: NominalModel,
    params: ControllerParams | None = None,
) -> float:
    """Norm of the frozen eta equation at xi = 0, eta = C^T eta1.

    Evaluates eta1 + F(z, x) - (Gbar - G) u with u built from eta1 exactly
    as the controller builds it. Without ``params`` both saturations are
    the identity.
    """
    eta1 = np.asarray(eta1, dtype=float)
    z, x, zbar = (np.asarray(v, dtype=float) for v in (z, x, zbar))
    if params is None:
        xq, sat_w = x, (lambda v: v)
    else:
        xq = _sat(x, params.phi_level, params.sat_margin)
        sat_w = lambda v: _sat(v, params.Phi_level, params.sat_margin)  # noqa: E731
    G = np.asarray(plant.G(z, x, t), dtype=float)
    Gb = np.asarray(nominal.Gbar(zbar, xq, t), dtype=float)
    u = np.linalg.solve(Gb, sat_w(eta1 + np.asarray(plant.F(zbar, xq)))) + np.asarray(nominal.Ur(zbar, xq, t))
    rel = eta1 + np.asarray(plant.F(z, x)) - (Gb - G) @ u
    return float(np.linalg.norm(rel))


def quasi_steady_controller_state(
    z, x, zbar, t: float, plant: NormalFormPlant, nominal: NominalModel, params: ControllerParams
) -> ControllerState:
    """Controller state with the fast variables at their quasi-steady value.

    q = x gives xi = 0, and p solves eta(q, p, x) = C^T eta1*; eta is affine
    in p so the solve is exact. Starting here removes the peaking transient.
    """
    rd = params.rd
    x = np.asarray(x, dtype=float)
    target = np.zeros(rd.nu)
    target[rd.first] = quasi_steady_eta(z, x, zbar, t, plant, nominal)
    base = eta_from_states(x, np.zeros(rd.nu), x, params)[0]
    M = eta_from_states(np.tile(x, (rd.nu, 1)), np.eye(rd.nu), np.tile(x, (rd.nu, 1)), params) - base
    p = np.linalg.solve(M.T, target - base)
    return ControllerState(np.asarray(zbar, dtype=float), x.copy(), p)


# ---------------------------------------------------------------------------
# fast-dynamics residuals


@dataclass(frozen=True)
class FastResidual:
    times: np.ndarray
    xi: np.ndarray
    eta: np.ndarray


def fast_dynamics_residual(
    traj: Trajectory,
    plant: NormalFormPlant,
    nominal: NominalModel,
    params: ControllerParams,
) -> FastResidual:
    """Per-sample residuals of the fast-coordinate equations.

    xi comes from the states, eta from finite differences, and both time
    derivatives from finite differences. Theta_xi and Theta_eta are built
    from the recorded states with the input expressed through eta as
    u = Gbar^{-1} Phi(eta_[1] + F(zbar, phi(q))) + Ur(zbar, phi(q)).
    """
    rd, tau = params.rd, params.tau
    nmax = max(rd.degrees)
    _require_dense(traj, tau, nmax + 1)
    h = traj.step
    hw = (nmax + 2) // 2
    N = len(traj)
    sl = slice(hw, N - hw)

    xi_all = xi_from_states(traj.q, traj.x, tau, rd)
    xi = xi_all[sl]
    xi_dot = central_derivative(xi_all, h, 1, hw)

    eta = np.empty((N - 2 * hw, rd.nu))
    tau_eta_dot = np.empty_like(eta)
    for first, last, d in zip(rd.first, rd.last, rd.degrees):
        p1 = traj.p[:, first]
        qn = traj.q[:, last]
        for j in range(1, d + 1):
            p_j1 = p1[sl] if j == 1 else central_derivative(p1, h, j - 1, hw)
            eta[:, first + j - 1] = tau ** (j - 1) * (p_j1 - central_derivative(qn, h, j, hw))
            tau_eta_dot[:, first + j - 1] = tau**j * (
                central_derivative(p1, h, j, hw) - central_derivative(qn, h, j + 1, hw)
            )

    mats = build_structural_matrices(rd)
    A_xi = assemble_filter_matrices(params.gains, rd, 1.0)[0]
    lead = params.gains.leading
    a_mat = np.zeros((rd.m, rd.nu))
    for i, (blk, a) in enumerate(zip(rd.blocks(), params.gains.coeffs)):
        a_mat[i, blk] = a

    res_xi = np.empty(len(eta))
    res_eta = np.empty(len(eta))
    for k, idx in enumerate(range(hw, N - hw)):
        t = float(traj.times[idx])
        z, x, zbar, q = traj.z[idx], traj.x[idx], traj.zbar[idx], traj.q[idx]
        xq = _sat(q, params.phi_level, params.sat_margin)
        eta1 = eta[k, rd.first]
        Gb = np.asarray(nominal.Gbar(zbar, xq, t), dtype=float)
        G = np.asarray(plant.G(z, x, t), dtype=float)
        Fz = np.asarray(plant.F(z, x), dtype=float)
        w = eta1 + np.asarray(plant.F(zbar, xq), dtype=float)
        u = np.linalg.solve(Gb, _sat(w, params.Phi_level, params.sat_margin)) + np.asarray(nominal.Ur(zbar, xq, t))
        theta_xi = Fz + G @ u
        theta_eta = -a_mat @ eta[k] + lead * (-Fz + (Gb - G) @ u)
        res_xi[k] = np.linalg.norm(tau * xi_dot[k] - (A_xi @ xi[k] - tau * mats.B @ theta_xi))
        res_eta[k] = np.linalg.norm(tau_eta_dot[k] - (mats.A @ eta[k] + mats.B @ theta_eta))
    return FastResidual(traj.times[sl], res_xi, res_eta)


# ---------------------------------------------------------------------------
# sector property and gain bound


@dataclass(frozen=True)
class SectorResult:
    max_form: float
    violations: int
    samples: int
    argmax: int


def sector_check(
    samples: Iterable,
    plant: NormalFormPlant,
    nominal: NominalModel,
    Phi_sat: SmoothSaturation,
    mu: float,
    phi_sat: SmoothSaturation | None = None,
    slack: float = 1e-12,
) -> SectorResult:
    """Largest value of (Psi - (1-mu) zeta)^T (Psi - (1+mu) zeta) over samples.

    Each sample is ``(z, x, zbar, t, zeta)``. Psi is the deviation map of
    the first eta components around their quasi-steady value; it lies in
    the sector [1-mu, 1+mu] when mu bounds ||I - G Gbar^{-1}|| there.
    """
    worst, arg, bad, count = -math.inf, -1, 0, 0
    for k, (z, x, zbar, t, zeta) in enumerate(samples):
        z, x, zbar, zeta = (np.asarray(v, dtype=float) for v in (z, x, zbar, zeta))
        xq = x if phi_sat is None else phi_sat(x)
        eta1 = quasi_steady_eta(z, x, zbar, t, plant, nominal)
        Fbar = np.asarray(plant.F(zbar, xq), dtype=float)
        G = np.asarray(plant.G(z, x, t), dtype=float)
        Gb = np.asarray(nominal.Gbar(zbar, xq, t), dtype=float)
        M = np.eye(len(zeta)) - G @ np.linalg.inv(Gb)
        psi = zeta - M @ (Phi_sat(zeta + eta1 + Fbar) - Phi_sat(eta1 + Fbar))
        form = float((psi - (1 - mu) * zeta) @ (psi - (1 + mu) * zeta))
        if form > worst:
            worst, arg = form, k
        bad += form > slack
        count += 1
    return SectorResult(max_form=worst, violations=int(bad), samples=count, argmax=arg)


@dataclass(frozen=True)
class GainBound:
    value: float
    z: np.ndarray
    x: np.ndarray
    t: float
    points: int

    def flags(self, mu: float) -> bool:
        """True when the measured bound exceeds the design value ``mu``."""
        return self.value > mu


def check_gain_bound(
    plant: NormalFormPlant,
    nominal: NominalModel,
    state_grid,
    time_grid,
) -> GainBound:
    """Grid maximum of the spectral norm ||I - G(z,x,t) Gbar(z,x,t)^{-1}||.

    ``state_grid`` rows are stacked ``[z, x]`` points; every row is paired
    with every time.
    """
    grid = np.atleast_2d(np.asarray(state_grid, dtype=float))
    nz = plant.nz
    if grid.shape[1] != plant.n:
        raise ValueError(f"state grid rows must have length {plant.n}")
    best, where = -1.0, None
    m = plant.rd.m
    for v in grid:
        z, x = v[:nz], v[nz:]
        for t in np.atleast_1d(time_grid):
            t = float(t)
            point = dict(z=z.tolist(), x=x.tolist(), t=t)
            Gb = check_invertible(nominal.Gbar(z, x, t), "Gbar", point)
            G = np.asarray(plant.G(z, x, t), dtype=float)
            val = float(np.linalg.norm(np.eye(m) - G @ np.linalg.inv(Gb), 2))
            if not math.isfinite(val):
                raise SingularGainError(f"non-finite gain mismatch at {point}")
            if val > best:
                best, where = val, (z.copy(), x.copy(), t)
    return GainBound(best, where[0], where[1], where[2], len(grid) * len(np.atleast_1d(time_grid)))


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    ultimate_bound: float
    recovery_error: float
    effort_l1: float
    effort_l2: float
    settled: bool
    t_ss: float


def _trapezoid(y: np.ndarray, t: np.ndarray) -> float:
    if len(t) < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def compute_metrics(
    traj: Trajectory,
    nominal_traj: Trajectory | None = None,
    t_ss: float | None = None,
    settle_tol: float = 0.05,
) -> Metrics:
    """Ultimate bound over [t_ss, t_end], recovery error and control effort.

    ``t_ss`` defaults to 0.7 t_end. The recovery error is NaN without a
    nominal reference.
    """
    t_end = float(traj.times[-1]) if len(traj) else 0.0
    t_ss = 0.7 * t_end if t_ss is None else float(t_ss)
    xnorm = np.linalg.norm(traj.x, axis=1)
    tail = traj.window(t_ss)
    ultimate = float(np.max(xnorm[tail])) if np.any(tail) else math.nan
    recovery = math.nan
    if nominal_traj is not None:
        n = min(len(traj), len(nominal_traj))
        if len(traj) != len(nominal_traj) and not traj.aborted:
            raise ValueError("trajectories have different sample counts")
        scale = max(1.0, t_end)
        if not np.allclose(traj.times[:n], nominal_traj.times[:n], rtol=0, atol=1e-9 * scale):
            raise ValueError("trajectory time grids are not aligned")
        recovery = float(np.max(np.linalg.norm(traj.x[:n] - nominal_traj.x[:n], axis=1)))
    unorm = np.linalg.norm(traj.u, axis=1)
    return Metrics(
        ultimate_bound=ultimate,
        recovery_error=recovery,
        effort_l1=_trapezoid(unorm, traj.times),
        effort_l2=_trapezoid(unorm**2, traj.times),
        settled=bool(ultimate <= settle_tol),
        t_ss=t_ss,
    )


def fast_variable_tails(
    traj: Trajectory,
    plant: NormalFormPlant,
    nominal: NominalModel,
    params: ControllerParams,
    t_ss: float | None = None,
) -> tuple[float, float]:
    """Tail sup of ||xi|| and ||eta - C^T eta1*|| with exact eta."""
    t_end = float(traj.times[-1])
    t_ss = 0.7 * t_end if t_ss is None else float(t_ss)
    idx = np.flatnonzero(traj.window(t_ss))
    rd = params.rd
    xi = xi_from_states(traj.q[idx], traj.x[idx], params.tau, rd)
    eta = eta_from_states(traj.q[idx], traj.p[idx], traj.x[idx], params)
    dev = eta.copy()
    for row, k in enumerate(idx):
        dev[row, rd.first] -= quasi_steady_eta(
            traj.z[k], traj.x[k], traj.zbar[k], float(traj.times[k]), plant, nominal
        )
    return float(np.max(np.linalg.norm(xi, axis=1))), float(np.max(np.linalg.norm(dev, axis=1)))
