"""Normal-form plant representation and nominal model.

A plant with m inputs/outputs and vector relative degree (nu_1, ..., nu_m)
is written as

    zdot = F0(z, x)
    xdot = A x + B (F(z, x) + G(z, x, t) u)
    y    = C x

where A, B, C are block-diagonal integrator chains. Plants are supplied as
black-box evaluators; nothing here is symbolic.

Evaluator signatures
--------------------
    F0(z, x)          -> array (n - nu,)
    F(z, x)           -> array (m,)
    G(z, x, t)        -> array (m, m)
    Gbar(zbar, x, t)  -> array (m, m)
    Ur(zbar, x, t)    -> array (m,)

Evaluators must be pure. If they are numba ``njit`` functions the simulator
runs a compiled kernel, otherwise it falls back to plain Python.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

#: condition-number ceiling above which a gain matrix is treated as singular
COND_LIMIT = 1e12


class SingularGainError(ValueError):
    """A gain matrix G or Gbar is (numerically) singular at a queried point."""


@dataclass(frozen=True)
class RelativeDegreeVector:
    degrees: tuple[int, ...]

    def __post_init__(self):
        degrees = tuple(int(d) for d in self.degrees)
        if len(degrees) == 0:
            raise ValueError("relative degree vector must have at least one channel")
        if any(d < 1 for d in degrees):
            raise ValueError(f"every relative degree must be >= 1, got {degrees}")
        object.__setattr__(self, "degrees", degrees)

    @property
    def m(self) -> int:
        return len(self.degrees)

    @property
    def nu(self) -> int:
        return sum(self.degrees)

    @property
    def offsets(self) -> np.ndarray:
        """Index of the first state of every channel inside x."""
        return np.concatenate(([0], np.cumsum(self.degrees)[:-1])).astype(np.int64)

    @property
    def first(self) -> np.ndarray:
        return self.offsets

    @property
    def last(self) -> np.ndarray:
        return self.offsets + np.asarray(self.degrees, dtype=np.int64) - 1

    def blocks(self) -> list[slice]:
        return [slice(int(o), int(o) + d) for o, d in zip(self.offsets, self.degrees)]

    def split(self, v: np.ndarray) -> list[np.ndarray]:
        """Split a length-nu vector into per-channel blocks."""
        v = np.asarray(v)
        if v.shape[-1] != self.nu:
            raise ValueError(f"expected trailing dimension {self.nu}, got {v.shape}")
        return [v[..., s] for s in self.blocks()]


@dataclass(frozen=True)
class StructuralMatrices:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


def build_structural_matrices(rd: RelativeDegreeVector) -> StructuralMatrices:
    """Block-diagonal chain-of-integrators matrices (A, B, C) for ``rd``."""
    nu, m = rd.nu, rd.m
    A = np.zeros((nu, nu))
    B = np.zeros((nu, m))
    C = np.zeros((m, nu))
    for i, (o, d) in enumerate(zip(rd.offsets, rd.degrees)):
        for j in range(d - 1):
            A[o + j, o + j + 1] = 1.0
        B[o + d - 1, i] = 1.0
        C[i, o] = 1.0
    return StructuralMatrices(A, B, C)


@dataclass(frozen=True)
class NormalFormPlant:
    """Uncertain plant in Byrnes-Isidori normal form.

    ``n`` is the full state dimension; the internal state z has dimension
    ``n - rd.nu`` and is empty when ``n == rd.nu``.
    """

    n: int
    rd: RelativeDegreeVector
    F0: Callable
    F: Callable
    G: Callable

    def __post_init__(self):
        if self.n < self.rd.nu:
            raise ValueError(f"n={self.n} is smaller than nu={self.rd.nu}")

    @property
    def nz(self) -> int:
        return self.n - self.rd.nu

    @property
    def matrices(self) -> StructuralMatrices:
        return build_structural_matrices(self.rd)


@dataclass(frozen=True)
class NominalModel:
    """Known nominal gain and the stabilising nominal state feedback.

    ``F0`` and ``F`` are shared with the plant and are not stored here.
    """

    Gbar: Callable
    Ur: Callable


def check_invertible(M: np.ndarray, what: str = "gain", point=None) -> np.ndarray:
    """Return ``M`` unchanged if finite and well conditioned, else raise."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise SingularGainError(f"{what} matrix is not finite at {point}")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularGainError(
            f"{what} matrix is singular (cond={cond:.3g}) at {point}"
        )
    return M


def plant_rhs(plant: NormalFormPlant, z, x, u, t: float):
    """Evaluate the plant vector field. Returns ``(zdot, xdot)``."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    mats = plant.matrices
    if z.shape != (plant.nz,) or x.shape != (plant.rd.nu,) or u.shape != (plant.rd.m,):
        raise ValueError(
            f"dimension mismatch: z{z.shape} x{x.shape} u{u.shape} for "
            f"nz={plant.nz}, nu={plant.rd.nu}, m={plant.rd.m}"
        )
    G = np.asarray(plant.G(z, x, t), dtype=float)
    if not np.all(np.isfinite(G)):
        raise SingularGainError(f"G is not finite at z={z}, x={x}, t={t}")
    zdot = np.asarray(plant.F0(z, x), dtype=float).reshape(plant.nz)
    xdot = mats.A @ x + mats.B @ (np.asarray(plant.F(z, x), dtype=float) + G @ u)
    return zdot, xdot
