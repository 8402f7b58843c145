"""Planar point-mass satellite in normal-form tracking coordinates.

Polar model (radius r, radial speed v, polar angle psi, angular rate omega):

    rdot     = v
    vdot     = r omega^2 - k / r^2 + u_r / m
    psidot   = omega
    omegadot = -2 v omega / r + u_psi / (m r)

with body-frame thrusts rotated by an attitude angle theta(t):
[u_r; u_psi] = R(theta) u. Around the circular orbit r = r*, psi = omega* t
(which requires k = r*^3 omega*^2) the coordinates

    x11 = r - r*,  x12 = v,  x21 = r* (psi - omega* t),  x22 = r* (omega - omega*)

put the model into normal form with nu = (2, 2) and no internal dynamics.
The attitude is theta = theta_known + theta_unknown; only theta_known enters
the nominal gain.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher

from .plant import (
    NominalModel,
    NormalFormPlant,
    RelativeDegreeVector,
    SingularGainError,
)
from .synthesis import decoupled_feedback_gain

#: closed-loop poles per channel; together (s+1)(s+3)^2(s+5)
DEFAULT_POLES = ((-1.0, -3.0), (-3.0, -5.0))
SATELLITE_X0 = (1.0, -2.0, 0.0, -0.8)


@lru_cache(maxsize=None)
def sinusoid(amplitude: float, angular_frequency: float) -> Callable:
    """Compiled ``t -> amplitude * sin(angular_frequency * t)``.

    Cached, so equal arguments give the same function and simulations of
    equal plants reuse the compiled kernel.
    """
    a = float(amplitude)
    w = float(angular_frequency)

    @njit
    def f(t):
        return a * math.sin(w * t)

    f.amplitude = a
    f.angular_frequency = w
    return f


def _default_known():
    return sinusoid(math.pi / 2, math.pi)


def _default_unknown():
    return sinusoid(math.pi / 5, 4 * math.pi)


@dataclass(frozen=True)
class SatelliteParams:
    m_true: float = 1.2
    m_nominal: float = 1.0
    k: float = 5.0
    r_star: float = 1.5
    omega_star: float | None = None
    theta_known: Callable = field(default_factory=_default_known)
    theta_unknown: Callable = field(default_factory=_default_unknown)
    c_theta_bound: float = math.pi / 5

    def __post_init__(self):
        if self.omega_star is None:
            object.__setattr__(self, "omega_star", math.sqrt(self.k / self.r_star**3))
        if min(self.m_true, self.m_nominal, self.k, self.r_star) <= 0:
            raise ValueError("masses, k and r_star must be positive")
        k_orbit = self.r_star**3 * self.omega_star**2
        if abs(k_orbit - self.k) > 1e-12 * abs(self.k):
            raise ValueError(
                f"k={self.k} does not match r*^3 omega*^2={k_orbit}; "
                "the reference orbit would not be an equilibrium"
            )
        ts = np.linspace(0.0, 20.0, 4001)
        worst = max(abs(self.theta_unknown(float(t))) for t in ts)
        if worst > self.c_theta_bound * (1 + 1e-12):
            raise ValueError(
                f"|theta_unknown| reaches {worst:.6g} > c_theta_bound={self.c_theta_bound:.6g}"
            )


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def _all_compiled(*fns) -> bool:
    return all(isinstance(f, CPUDispatcher) for f in fns)


def _maybe_jit(fn, compiled: bool):
    return njit(fn) if compiled else fn


def satellite_drift(params: SatelliteParams):
    """Return the evaluators ``(F0, F)`` of the satellite."""
    r_star = float(params.r_star)
    w_star = float(params.omega_star)
    k = float(params.k)

    def F0(z, x):
        return np.empty(0)

    def F(z, x):
        r = x[0] + r_star
        rate = x[3] / r_star + w_star
        out = np.empty(2)
        out[0] = r * rate * rate - k / (r * r)
        out[1] = -2.0 * x[1] * r_star / r * rate
        return out

    return njit(F0), njit(F)


def _gain_factory(mass: float, r_star: float, theta: Callable, compiled: bool):
    """Gain ``diag(1/mass, r*/(mass r)) R(theta(t))`` as an evaluator."""
    mass = float(mass)

    def gain(z, x, t):
        r = x[0] + r_star
        if r <= 0.0:
            raise SingularGainError("satellite gain is singular for x11 + r* <= 0")
        th = theta(t)
        c = math.cos(th)
        s = math.sin(th)
        g1 = 1.0 / mass
        g2 = r_star / (mass * r)
        out = np.empty((2, 2))
        out[0, 0] = g1 * c
        out[0, 1] = g1 * s
        out[1, 0] = -g2 * s
        out[1, 1] = g2 * c
        return out

    return _maybe_jit(gain, compiled)


def _feedback_factory(F: Callable, Gbar: Callable, K: np.ndarray, compiled: bool):
    """State feedback ``Ur = Gbar^{-1} (-F - K x)``."""
    K = np.ascontiguousarray(K, dtype=float)

    def Ur(zbar, x, t):
        return np.linalg.solve(Gbar(zbar, x, t), -F(zbar, x) - K @ x)

    return _maybe_jit(Ur, compiled)


def satellite_plant(
    params: SatelliteParams | None = None, K: np.ndarray | None = None
) -> tuple[NormalFormPlant, NominalModel]:
    """Uncertain satellite plant and its nominal model.

    The nominal gain uses the nominal mass and only the known attitude.
    ``K`` defaults to the decoupled gain placing the poles ``DEFAULT_POLES``.
    """
    params = params or SatelliteParams()
    rd = RelativeDegreeVector((2, 2))
    if K is None:
        K = decoupled_feedback_gain(rd, DEFAULT_POLES)
    K = np.asarray(K, dtype=float)
    if K.shape != (2, 4):
        raise ValueError(f"K must be 2x4, got {K.shape}")
    key = (params, K.tobytes())
    if key not in _PLANT_CACHE:
        _PLANT_CACHE[key] = _build_satellite(params, rd, K)
    return _PLANT_CACHE[key]


# equal parameters share evaluators, hence compiled simulation kernels
_PLANT_CACHE: dict = {}


def _build_satellite(params: SatelliteParams, rd: RelativeDegreeVector, K: np.ndarray):
    compiled = _all_compiled(params.theta_known, params.theta_unknown)
    F0, F = satellite_drift(params)

    th_known = params.theta_known
    th_unknown = params.theta_unknown

    def theta_true(t):
        return th_known(t) + th_unknown(t)

    theta_true = _maybe_jit(theta_true, compiled)
    G = _gain_factory(params.m_true, params.r_star, theta_true, compiled)
    Gbar = _gain_factory(params.m_nominal, params.r_star, th_known, compiled)
    Ur = _feedback_factory(F, Gbar, K, compiled)
    return NormalFormPlant(4, rd, F0, F, G), NominalModel(Gbar, Ur)


def constant_gain_nominal(
    params: SatelliteParams | None = None, K: np.ndarray | None = None
) -> NominalModel:
    """Nominal model with the constant gain ``diag(1/m, 1/m)``.

    ``m`` is the true mass and the attitude is ignored. The state feedback
    is designed for this constant model, ``Ur = Gc^{-1} (-F - K x)``.
    """
    params = params or SatelliteParams()
    rd = RelativeDegreeVector((2, 2))
    if K is None:
        K = decoupled_feedback_gain(rd, DEFAULT_POLES)
    K = np.asarray(K, dtype=float)
    key = ("constant", params, K.tobytes())
    if key not in _PLANT_CACHE:
        _PLANT_CACHE[key] = _build_constant(params, K)
    return _PLANT_CACHE[key]


def _build_constant(params: SatelliteParams, K: np.ndarray) -> NominalModel:
    inv_m = 1.0 / float(params.m_true)
    _, F = satellite_drift(params)

    @njit
    def Gc(zbar, x, t):
        return np.array([[inv_m, 0.0], [0.0, inv_m]])

    return NominalModel(Gc, _feedback_factory(F, Gc, K, True))


def _shifted(theta: Callable, offset: float, compiled: bool) -> Callable:
    # separate scope so each closure binds its own offset
    def shifted(t):
        return theta(t) + offset

    return _maybe_jit(shifted, compiled)


def satellite_gain_samples(
    params: SatelliteParams | None = None, offsets=None
) -> list[Callable]:
    """True-gain evaluators with the unknown attitude frozen at ``offsets``.

    Defaults to the extremes and the midpoint of the attitude uncertainty,
    ``(-c, 0, c)`` with ``c = params.c_theta_bound``.
    """
    params = params or SatelliteParams()
    c = params.c_theta_bound
    offsets = (-c, 0.0, c) if offsets is None else tuple(float(o) for o in offsets)
    compiled = _all_compiled(params.theta_known)
    return [
        _gain_factory(params.m_true, params.r_star, _shifted(params.theta_known, off, compiled), compiled)
        for off in offsets
    ]
