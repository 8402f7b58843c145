"""Runtime evaluation of the robust output-feedback controller.

Controller states are zbar (copy of the internal dynamics), q (high-gain
observer of the outputs and their derivatives) and p (filtered nominal
input). With xq = phi(q):

    zbardot = F0(zbar, xq)
    qdot    = A_atau q + Bq_atau y
    pdot    = A_atau p + Bp_atau Gbar(zbar, xq, t) u
    w       = C p + B^T Bq_atau (C q - y) + F(zbar, xq)
    u       = Gbar(zbar, xq, t)^{-1} Phi(w) + Ur(zbar, xq, t)

The functions prefixed with an underscore work on plain arrays and are
compiled into the simulation kernel when all evaluators are numba-jitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba.extending import register_jitable

from .plant import NominalModel, NormalFormPlant, SingularGainError
from .synthesis import ControllerParams


@dataclass(frozen=True)
class SmoothSaturation:
    """Componentwise C^1 saturation: identity up to ``level``, bounded by ``level + margin``."""

    level: np.ndarray
    margin: float

    def __post_init__(self):
        level = np.atleast_1d(np.asarray(self.level, dtype=float))
        if np.any(level <= 0) or self.margin <= 0:
            raise ValueError("saturation level and margin must be positive")
        object.__setattr__(self, "level", level)

    def __call__(self, v) -> np.ndarray:
        return smooth_sat(v, self)

    def derivative(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        excess = np.abs(v) - self.level
        return np.where(excess <= 0, 1.0, np.exp(-np.maximum(excess, 0) / self.margin))


@register_jitable
def _sat(v, level, margin):
    out = np.empty(v.shape[0])
    for k in range(v.shape[0]):
        a = abs(v[k])
        if a <= level[k]:
            out[k] = v[k]
        else:
            mag = level[k] - margin * math.expm1(-(a - level[k]) / margin)
            out[k] = mag if v[k] > 0 else -mag
    return out


def smooth_sat(v, sat: SmoothSaturation) -> np.ndarray:
    """Apply ``sat`` componentwise to ``v``.

    s(v) = v for |v| <= L, else sign(v) (L + margin (1 - exp(-(|v| - L) / margin))).
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    level = np.broadcast_to(sat.level, v.shape).astype(float)
    return _sat(v, level, float(sat.margin))


@register_jitable
def _control_law(t, zbar, q, p, y, F, Gbar, Ur, first, obs_gain, phi_level, Phi_level, margin):
    xq = _sat(q, phi_level, margin)
    w = p[first] + obs_gain * (q[first] - y) + F(zbar, xq)
    Gb = Gbar(zbar, xq, t)
    u = np.linalg.solve(Gb, _sat(w, Phi_level, margin)) + Ur(zbar, xq, t)
    return u, w, xq, Gb


@register_jitable
def _filter_derivs(zbar, q, p, y, u, xq, Gb, F0, A_atau, Bq, Bp):
    zbardot = F0(zbar, xq)
    qdot = A_atau @ q + Bq @ y
    pdot = A_atau @ p + Bp @ (Gb @ u)
    return zbardot, qdot, pdot


@dataclass(frozen=True)
class ControllerState:
    zbar: np.ndarray
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for name in ("zbar", "q", "p"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError(f"controller state {name} must be a finite vector")
            object.__setattr__(self, name, arr)
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must have the same dimension")

    @classmethod
    def zeros(cls, nz: int, nu: int) -> "ControllerState":
        return cls(np.zeros(nz), np.zeros(nu), np.zeros(nu))

    def as_vector(self) -> np.ndarray:
        return np.concatenate((self.zbar, self.q, self.p))


def _check_dims(state: ControllerState, y, plant: NormalFormPlant):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if state.zbar.shape != (plant.nz,) or state.q.shape != (plant.rd.nu,) or y.shape != (plant.rd.m,):
        raise ValueError(
            f"dimension mismatch: zbar{state.zbar.shape} q{state.q.shape} y{y.shape} "
            f"for nz={plant.nz}, nu={plant.rd.nu}, m={plant.rd.m}"
        )
    return y


def controller_output(
    state: ControllerState,
    y,
    params: ControllerParams,
    plant: NormalFormPlant,
    nominal: NominalModel,
    t: float,
):
    """Control input and DOB signal ``(u, w)`` at the current controller state.

    ``plant`` only supplies the drift evaluators F0 and F shared with the
    nominal model; G is never touched.
    """
    y = _check_dims(state, y, plant)
    try:
        u, w, _, _ = _control_law(
            float(t), state.zbar, state.q, state.p, y,
            plant.F, nominal.Gbar, nominal.Ur,
            params.rd.first, params.observer_gain,
            params.phi_level, params.Phi_level, params.sat_margin,
        )
    except np.linalg.LinAlgError as exc:
        raise SingularGainError(
            f"Gbar is singular at zbar={state.zbar}, phi(q)={_sat(state.q, params.phi_level, params.sat_margin)}, t={t}"
        ) from exc
    return np.asarray(u, dtype=float), np.asarray(w, dtype=float)


def controller_rhs(
    state: ControllerState,
    y,
    u,
    params: ControllerParams,
    plant: NormalFormPlant,
    nominal: NominalModel,
    t: float,
):
    """Derivatives ``(zbardot, qdot, pdot)`` of the controller states.

    ``u`` must be the output of :func:`controller_output` at the same
    state, measurement and time.
    """
    y = _check_dims(state, y, plant)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    xq = _sat(state.q, params.phi_level, params.sat_margin)
    Gb = np.asarray(nominal.Gbar(state.zbar, xq, t), dtype=float)
    zbardot, qdot, pdot = _filter_derivs(
        state.zbar, state.q, state.p, y, u, xq, Gb,
        plant.F0, params.A_atau, params.Bq_atau, params.Bp_atau,
    )
    return np.asarray(zbardot, dtype=float).reshape(plant.nz), qdot, pdot
