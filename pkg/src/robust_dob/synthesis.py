"""Design procedure for the disturbance-observer filters and saturations.

Channel i uses the coefficient vector a_i = [a_i1, a_i2, ..., a_i,nu_i].
The inner coefficients a_i2..a_i,nu_i make

    s^(nu_i-1) + a_i,nu_i s^(nu_i-2) + ... + a_i2

Hurwitz. The leading coefficient a_i1 is then chosen so that the Nyquist
plot of

    H_i(s) = a_i1 / (s (s^(nu_i-1) + ... + a_i2))

stays strictly outside the disk D(1-mu, 1+mu) and does not encircle it.
The disk has the segment [-1/(1-mu), -1/(1+mu)] of the real axis as a
diameter.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .plant import (
    NominalModel,
    NormalFormPlant,
    RelativeDegreeVector,
    SingularGainError,
    build_structural_matrices,
    check_invertible,
)


class SynthesisError(ValueError):
    """The design procedure cannot produce admissible parameters."""


class GridTooCoarseError(SynthesisError):
    """The frequency grid cannot resolve the Nyquist curve near the disk."""


# ---------------------------------------------------------------------------
# polynomials


def full_polynomial(a_i) -> np.ndarray:
    """Descending coefficients of s^nu + a_nu s^(nu-1) + ... + a_2 s + a_1."""
    a_i = np.asarray(a_i, dtype=float)
    return np.concatenate(([1.0], a_i[::-1]))


def inner_polynomial(a_i) -> np.ndarray:
    """Descending coefficients of s^(nu-1) + a_nu s^(nu-2) + ... + a_2."""
    a_i = np.asarray(a_i, dtype=float)
    return np.concatenate(([1.0], a_i[1:][::-1]))


def companion_eigenvalues(poly_desc) -> np.ndarray:
    """Roots of a monic polynomial as eigenvalues of its companion matrix."""
    c = np.asarray(poly_desc, dtype=float)
    deg = len(c) - 1
    if deg == 0:
        return np.empty(0, dtype=complex)
    M = np.zeros((deg, deg))
    M[0, :] = -c[1:] / c[0]
    M[1:, :-1] = np.eye(deg - 1)
    return np.linalg.eigvals(M)


def is_hurwitz(poly_desc) -> bool:
    roots = companion_eigenvalues(poly_desc)
    return bool(np.all(roots.real < 0))


def inner_coeffs_from_roots(roots: Sequence[complex], nu_i: int) -> np.ndarray:
    """Coefficients ``[a_i2, ..., a_i,nu_i]`` of the monic polynomial with ``roots``."""
    roots = np.asarray(list(roots), dtype=complex)
    if nu_i < 1:
        raise ValueError("nu_i must be >= 1")
    if len(roots) != nu_i - 1:
        raise ValueError(f"need exactly {nu_i - 1} roots for nu_i={nu_i}, got {len(roots)}")
    if np.any(roots.real >= 0):
        raise ValueError(f"roots must lie in the open left half-plane: {roots}")
    # conjugate closure: multiset equality with the conjugates
    if not np.allclose(np.sort_complex(roots), np.sort_complex(roots.conj()), atol=1e-12):
        raise ValueError(f"roots are not closed under conjugation: {roots}")
    if len(roots) == 0:
        return np.empty(0)
    poly = np.poly(roots)
    if np.max(np.abs(poly.imag)) > 1e-9 * max(1.0, np.max(np.abs(poly))):
        raise ValueError(f"roots do not give a real polynomial: {roots}")
    return np.real(poly[1:][::-1]).astype(float)


def decoupled_feedback_gain(rd: RelativeDegreeVector, poles) -> np.ndarray:
    """Block-diagonal K placing ``poles[i]`` on integrator chain i.

    With v_i = -K_i x_i on a chain of nu_i integrators the closed-loop
    characteristic polynomial of channel i is prod(s - p) over ``poles[i]``.
    """
    if len(poles) != rd.m:
        raise ValueError(f"need poles for {rd.m} channels, got {len(poles)}")
    K = np.zeros((rd.m, rd.nu))
    for i, (blk, p) in enumerate(zip(rd.blocks(), poles)):
        p = np.asarray(p, dtype=complex)
        if len(p) != rd.degrees[i]:
            raise ValueError(f"channel {i + 1} needs {rd.degrees[i]} poles, got {len(p)}")
        coeffs = np.poly(p)
        if np.max(np.abs(coeffs.imag)) > 1e-9:
            raise ValueError(f"poles of channel {i + 1} are not conjugate-closed")
        K[i, blk] = np.real(coeffs[1:][::-1])
    return K


# ---------------------------------------------------------------------------
# gains


@dataclass(frozen=True)
class GainVector:
    """Per-channel coefficient vectors ``a_i = [a_i1, ..., a_i,nu_i]``."""

    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(np.asarray(a, dtype=float).copy() for a in self.coeffs)
        for i, a in enumerate(coeffs):
            if a.ndim != 1 or len(a) < 1:
                raise ValueError(f"channel {i + 1}: coefficient vector must be 1-D and nonempty")
            if not np.all(np.isfinite(a)) or np.any(a <= 0):
                raise ValueError(f"channel {i + 1}: coefficients must be finite and positive, got {a}")
            if not is_hurwitz(inner_polynomial(a)):
                raise ValueError(f"channel {i + 1}: inner polynomial is not Hurwitz for a={a}")
            if not is_hurwitz(full_polynomial(a)):
                raise ValueError(f"channel {i + 1}: full polynomial is not Hurwitz for a={a}")
            a.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.coeffs)

    @property
    def leading(self) -> np.ndarray:
        """The vector ``[a_11, ..., a_m1]``."""
        return np.array([a[0] for a in self.coeffs])

    def __eq__(self, other):
        if not isinstance(other, GainVector):
            return NotImplemented
        return len(self.coeffs) == len(other.coeffs) and all(
            np.array_equal(a, b) for a, b in zip(self.coeffs, other.coeffs)
        )

    def __hash__(self):
        return hash(tuple(tuple(a) for a in self.coeffs))


# ---------------------------------------------------------------------------
# frequency-domain checks


@dataclass(frozen=True)
class SectorDisk:
    mu: float

    def __post_init__(self):
        if not (0.0 <= self.mu < 1.0):
            raise ValueError(f"mu must lie in [0, 1), got {self.mu}")

    @property
    def center(self) -> complex:
        return complex(-0.5 * (1 / (1 - self.mu) + 1 / (1 + self.mu)), 0.0)

    @property
    def radius(self) -> float:
        return 0.5 * (1 / (1 - self.mu) - 1 / (1 + self.mu))

    def contains(self, point: complex) -> bool:
        return abs(complex(point) - self.center) <= self.radius


def transfer_response(a_i, s) -> np.ndarray:
    """Evaluate H_i(s) = a_i1 / (s * inner(s)) at complex points ``s``."""
    a_i = np.asarray(a_i, dtype=float)
    s = np.asarray(s, dtype=complex)
    return a_i[0] / (s * np.polyval(inner_polynomial(a_i), s))


def low_frequency_real_limit(a_i) -> float:
    """lim_{w -> 0+} Re H_i(jw), i.e. -a_i1 p'(0) / p(0)^2 for the inner p."""
    a_i = np.asarray(a_i, dtype=float)
    if len(a_i) == 1:
        return 0.0
    p0 = a_i[1]
    p1 = 1.0 if len(a_i) == 2 else a_i[2]
    return -a_i[0] * p1 / p0**2


def frequency_grid(w_min: float = 1e-4, w_max: float = 1e4, points: int = 10_000) -> np.ndarray:
    if not (0 < w_min < w_max) or points < 2:
        raise ValueError("need 0 < w_min < w_max and at least two points")
    return np.geomspace(w_min, w_max, points)


def _segment_distances(pts: np.ndarray, c: complex) -> np.ndarray:
    """Distance from ``c`` to every segment of the polyline ``pts``."""
    P, Q = pts[:-1], pts[1:]
    d = Q - P
    L2 = np.abs(d) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(L2 > 0, np.real((c - P) * np.conj(d)) / L2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.abs(P + t * d - c)


def _winding_number(pts: np.ndarray, c: complex) -> float:
    ang = np.angle(np.append(pts, pts[0]) - c)
    dang = np.diff(ang)
    dang = (dang + np.pi) % (2 * np.pi) - np.pi
    return float(np.sum(dang) / (2 * np.pi))


def _refine_grid(a_i, disk: SectorDisk, omega: np.ndarray, max_rounds: int = 25):
    """Insert frequencies until the curve is resolved near the disk.

    A segment needs refinement when it is longer than the resolution scale
    and passes within ten segment lengths of the disk, or when it sweeps
    more than pi/4 around the disk center.
    """
    c, r = disk.center, disk.radius
    scale = max(r, 1e-4 * abs(c))
    for _ in range(max_rounds):
        pts = transfer_response(a_i, 1j * omega)
        seg = np.abs(np.diff(pts))
        near = _segment_distances(pts, c) - r < 10 * seg
        ang = np.angle(pts - c)
        dang = np.abs((np.diff(ang) + np.pi) % (2 * np.pi) - np.pi)
        bad = ((seg > scale) & near) | (dang > np.pi / 4)
        if not np.any(bad):
            return omega, pts
        mids = np.sqrt(omega[:-1][bad] * omega[1:][bad])
        omega = np.sort(np.concatenate((omega, mids)))
    raise GridTooCoarseError(
        f"frequency grid still too coarse near the disk after {max_rounds} refinements "
        f"({int(np.sum(bad))} unresolved segments)"
    )


@dataclass(frozen=True)
class NyquistResult:
    passed: bool
    min_distance: float
    winding_number: float
    low_freq_real_limit: float
    omega_min: float
    omega_max: float
    grid_points: int


def nyquist_contour(a_i, omega: np.ndarray, arc_points: int = 2001) -> np.ndarray:
    """Image of the indented Nyquist contour under H_i.

    The contour runs up the imaginary axis from -j w_max to +j w_max with a
    right-half-plane semicircle of radius w_min around the pole at s = 0,
    and closes through H(j inf) = 0.
    """
    pos = transfer_response(a_i, 1j * omega)
    theta = np.linspace(-np.pi / 2, np.pi / 2, arc_points)[1:-1]
    arc = transfer_response(a_i, omega[0] * np.exp(1j * theta))
    return np.concatenate((np.conj(pos[::-1]), arc, pos))


def nyquist_check(
    a_i, disk: SectorDisk, omega: np.ndarray | None = None, eps_disk: float = 1e-6
) -> NyquistResult:
    """Disk test for channel coefficients ``a_i``.

    Passes iff the image of the indented contour keeps a distance of at
    least ``eps_disk`` from the disk and has zero winding number about its
    center. Raises ``GridTooCoarseError`` when the grid cannot resolve the
    curve near the disk or the high-frequency tail is not negligible.
    """
    a_i = np.asarray(a_i, dtype=float)
    if not is_hurwitz(inner_polynomial(a_i)):
        raise SynthesisError(f"inner polynomial of a={a_i} is not Hurwitz")
    if a_i[0] <= 0:
        raise SynthesisError("a_i1 must be positive")
    omega = frequency_grid() if omega is None else np.sort(np.asarray(omega, dtype=float))
    c, r = disk.center, disk.radius
    tail = abs(transfer_response(a_i, 1j * omega[-1]))
    if tail >= 0.5 * (abs(c) - r):
        raise GridTooCoarseError(
            f"|H(j w_max)| = {tail:.3g} is not negligible against the disk; raise w_max"
        )
    omega, _ = _refine_grid(a_i, disk, omega)
    pts = nyquist_contour(a_i, omega)
    closed = np.append(pts, pts[0])
    min_dist = float(np.min(_segment_distances(closed, c)) - r)
    wn = _winding_number(pts, c)
    passed = min_dist >= eps_disk and abs(wn) < 0.5
    return NyquistResult(
        passed=passed,
        min_distance=min_dist,
        winding_number=wn,
        low_freq_real_limit=low_frequency_real_limit(a_i),
        omega_min=float(omega[0]),
        omega_max=float(omega[-1]),
        grid_points=len(omega),
    )


def search_a1(
    a_inner,
    disk: SectorDisk,
    bracket: tuple[float, float] = (1e-6, 1e3),
    safety: float = 1e-3,
    rtol: float = 1e-9,
    omega: np.ndarray | None = None,
) -> float:
    """Largest admissible a_i1 in ``bracket`` for the inner coefficients.

    The Nyquist curve is linear in a_i1 while the disk is fixed, so the
    admissible set is an interval starting at 0 and bisection applies. If
    the upper end passes it is returned as is; otherwise the boundary is
    located to relative tolerance ``rtol`` and shrunk by ``safety``.
    """
    lo, hi = (float(b) for b in bracket)
    if not (0 < lo < hi):
        raise ValueError(f"bracket must satisfy 0 < lo < hi, got {bracket}")
    a_inner = np.asarray(a_inner, dtype=float)

    def ok(a1):
        return nyquist_check(np.concatenate(([a1], a_inner)), disk, omega).passed

    if not ok(lo):
        raise SynthesisError(
            f"no admissible a1 in [{lo:g}, {hi:g}]: the lower end already fails the disk test"
        )
    if ok(hi):
        return hi
    while hi / lo - 1 > rtol:
        mid = math.sqrt(lo * hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo * (1 - safety)


@dataclass(frozen=True)
class SprResult:
    passed: bool
    min_real_part: float
    stable: bool


def spr_check(a_i, mu: float, omega: np.ndarray | None = None) -> SprResult:
    """Strict positive realness of [1 + (1+mu) H_i] / [1 + (1-mu) H_i].

    The ratio is evaluated as 1 + 2 mu H / (1 + (1-mu) H) so that it is
    exactly 1 at mu = 0. Its poles are the roots of s inner(s) + (1-mu) a_i1.
    """
    a_i = np.asarray(a_i, dtype=float)
    SectorDisk(mu)
    omega = frequency_grid() if omega is None else np.asarray(omega, dtype=float)
    H = transfer_response(a_i, 1j * omega)
    re = 1.0 + 2.0 * mu * np.real(H / (1.0 + (1.0 - mu) * H))
    # limits w -> 0 (H -> inf) and w -> inf (H -> 0)
    limits = [(1 + mu) / (1 - mu), 1.0]
    min_re = float(min(np.min(re), *limits))
    den = np.polymul([1.0, 0.0], inner_polynomial(a_i))
    den[-1] += (1.0 - mu) * a_i[0]
    stable = is_hurwitz(den)
    return SprResult(passed=bool(min_re > 0 and stable), min_real_part=min_re, stable=stable)


# ---------------------------------------------------------------------------
# controller parameters


def assemble_filter_matrices(gains: GainVector, rd: RelativeDegreeVector, tau: float):
    """Filter matrices ``(A_atau, Bq_atau, Bp_atau)`` for time scale ``tau``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if gains.degrees != rd.degrees:
        raise ValueError(f"gain sizes {gains.degrees} do not match nu={rd.degrees}")
    nu, m = rd.nu, rd.m
    A = np.zeros((nu, nu))
    Bq = np.zeros((nu, m))
    Bp = np.zeros((nu, m))
    for i, (blk, a) in enumerate(zip(rd.blocks(), gains.coeffs)):
        d = len(a)
        o = blk.start
        # row j holds a_{i,d-j} / tau^(j+1)
        col = np.array([a[d - 1 - j] / tau ** (j + 1) for j in range(d)])
        A[o:o + d, o] = -col
        for j in range(d - 1):
            A[o + j, o + j + 1] = 1.0
        Bq[o:o + d, i] = col
        Bp[o + d - 1, i] = a[0] / tau**d
    return A, Bq, Bp


@dataclass(frozen=True)
class ControllerParams:
    gains: GainVector
    rd: RelativeDegreeVector
    tau: float
    A_atau: np.ndarray
    Bq_atau: np.ndarray
    Bp_atau: np.ndarray
    phi_level: np.ndarray
    Phi_level: np.ndarray
    sat_margin: float

    @property
    def observer_gain(self) -> np.ndarray:
        """Diagonal of B^T Bq_atau, i.e. a_i1 / tau^nu_i per channel."""
        return np.array([a[0] / self.tau**len(a) for a in self.gains.coeffs])


def _levels(level, size: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(level, dtype=float), (size,)).copy()
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite and positive, got {level}")
    return arr


def make_controller_params(
    gains: GainVector,
    rd: RelativeDegreeVector,
    tau: float,
    phi_level,
    Phi_level,
    sat_margin: float = 1.0,
) -> ControllerParams:
    """Assemble controller parameters; scalar levels are broadcast."""
    A, Bq, Bp = assemble_filter_matrices(gains, rd, tau)
    if sat_margin <= 0:
        raise ValueError("sat_margin must be positive")
    return ControllerParams(
        gains=gains,
        rd=rd,
        tau=float(tau),
        A_atau=A,
        Bq_atau=Bq,
        Bp_atau=Bp,
        phi_level=_levels(phi_level, rd.nu, "phi_level"),
        Phi_level=_levels(Phi_level, rd.m, "Phi_level"),
        sat_margin=float(sat_margin),
    )


# ---------------------------------------------------------------------------
# saturation levels


@dataclass(frozen=True)
class SaturationEstimate:
    Phi_level: np.ndarray
    phi_level: np.ndarray
    w_max_components: np.ndarray
    w_max_norm: float
    w_argmax: tuple
    lipschitz_F: float
    grid_points: int
    evaluations: int
    gain_bound: float


def box_grid(lower, upper, points: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, points) if hi > lo else np.array([lo]) for lo, hi in zip(lower, upper)]
    if not axes:
        return np.empty((1, 0))
    return np.array(list(itertools.product(*axes)), dtype=float)


def estimate_lipschitz(F: Callable, nz: int, grid: np.ndarray, h: float = 1e-6) -> float:
    """Max spectral norm of the Jacobian of F(z, x) over the grid (central FD)."""
    best = 0.0
    dim = grid.shape[1]
    for v in grid:
        J = np.empty((len(np.atleast_1d(F(v[:nz], v[nz:]))), dim))
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = h
            vp, vm = v + e, v - e
            J[:, k] = (np.asarray(F(vp[:nz], vp[nz:])) - np.asarray(F(vm[:nz], vm[nz:]))) / (2 * h)
        best = max(best, float(np.linalg.norm(J, 2)))
    return best


def estimate_saturation_levels(
    plant: NormalFormPlant,
    nominal: NominalModel,
    uncertainty_samples: Sequence[Callable],
    state_box: tuple,
    times: Sequence[float] = (0.0,),
    z_bound: float = 0.0,
    delta_w: float = 0.1,
    delta_1: float = 0.1,
    lipschitz_F: float | None = None,
    grid_points: int = 11,
    safety: float = 1.25,
    mu: float | None = None,
) -> SaturationEstimate:
    """Saturation levels covering the set of quasi-steady DOB signals.

    For every grid point (zbar, x) of ``state_box`` (lower, upper arrays of
    length nz + nu), every z in the cube |z_c| <= z_bound, every time in
    ``times`` and every gain evaluator in ``uncertainty_samples`` the signal

        w = Gbar G^{-1} [F(zbar, x) - F(z, x) + (Gbar - G) Ur(zbar, x)]

    is evaluated. Phi gets ``safety * (max |w_c| + delta_w + L_F delta_1)``
    per component and phi the x-box half-width inflated by ``delta_1``.
    """
    if not uncertainty_samples:
        raise ValueError("need at least one uncertainty sample")
    nz, nu, m = plant.nz, plant.rd.nu, plant.rd.m
    lower = np.asarray(state_box[0], dtype=float)
    upper = np.asarray(state_box[1], dtype=float)
    if lower.shape != (nz + nu,) or upper.shape != (nz + nu,) or np.any(upper < lower):
        raise ValueError(f"state_box must be (lower, upper) with {nz + nu} entries and lower <= upper")
    grid = box_grid(lower, upper, grid_points)
    zgrid = box_grid(-z_bound * np.ones(nz), z_bound * np.ones(nz), grid_points if z_bound > 0 else 1)

    if lipschitz_F is None:
        lipschitz_F = estimate_lipschitz(plant.F, nz, grid)

    w_abs = np.zeros(m)
    w_norm, argmax = -1.0, ()
    gain_bound = 0.0
    count = 0
    for v in grid:
        zbar, x = v[:nz], v[nz:]
        Fbar = np.asarray(plant.F(zbar, x), dtype=float)
        for t in times:
            Gb = np.asarray(nominal.Gbar(zbar, x, t), dtype=float)
            Ur = np.asarray(nominal.Ur(zbar, x, t), dtype=float)
            for z in zgrid:
                Fz = np.asarray(plant.F(z, x), dtype=float)
                for Gfun in uncertainty_samples:
                    G = np.asarray(Gfun(z, x, t), dtype=float)
                    point = dict(zbar=zbar.tolist(), z=z.tolist(), x=x.tolist(), t=float(t))
                    check_invertible(G, "G", point)
                    w = Gb @ np.linalg.solve(G, Fbar - Fz + (Gb - G) @ Ur)
                    if not np.all(np.isfinite(w)):
                        raise SingularGainError(f"non-finite DOB signal at {point}")
                    count += 1
                    w_abs = np.maximum(w_abs, np.abs(w))
                    nw = float(np.linalg.norm(w))
                    if nw > w_norm:
                        w_norm, argmax = nw, (zbar.copy(), z.copy(), x.copy(), float(t))
                    if mu is not None:
                        gain_bound = max(
                            gain_bound,
                            float(np.linalg.norm(np.eye(m) - G @ np.linalg.inv(Gb), 2)),
                        )
    if mu is not None and gain_bound > mu:
        warnings.warn(
            f"uncertainty samples violate the gain bound: max ||I - G Gbar^-1|| = "
            f"{gain_bound:.4g} > mu = {mu:g}",
            stacklevel=2,
        )
    Phi_level = safety * (w_abs + delta_w + lipschitz_F * delta_1)
    x_half = np.maximum(np.abs(lower[nz:]), np.abs(upper[nz:]))
    phi_level = x_half + delta_1
    return SaturationEstimate(
        Phi_level=Phi_level,
        phi_level=phi_level,
        w_max_components=w_abs,
        w_max_norm=w_norm,
        w_argmax=argmax,
        lipschitz_F=float(lipschitz_F),
        grid_points=grid_points,
        evaluations=count,
        gain_bound=gain_bound,
    )


# ---------------------------------------------------------------------------
# full procedure and report


@dataclass
class ChannelReport:
    channel: int
    coeffs: list
    a1_max: float | None
    nyquist: NyquistResult
    spr: SprResult

    @property
    def passed(self) -> bool:
        return self.nyquist.passed and self.spr.passed


@dataclass
class SynthesisReport:
    mu: float
    degrees: tuple
    channels: list = field(default_factory=list)
    saturation: SaturationEstimate | None = None
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(ch.passed for ch in self.channels)

    def gains(self) -> GainVector:
        return GainVector(tuple(np.array(ch.coeffs) for ch in self.channels))

    def to_dict(self) -> dict:
        """Flat key-value view; keys are dotted paths."""
        out = {
            "mu": self.mu,
            "degrees": list(self.degrees),
            "passed": self.passed,
        }
        for ch in self.channels:
            p = f"channel.{ch.channel}"
            out[f"{p}.coeffs"] = [float(a) for a in ch.coeffs]
            out[f"{p}.a1"] = float(ch.coeffs[0])
            if ch.a1_max is not None:
                out[f"{p}.a1_max"] = float(ch.a1_max)
            out[f"{p}.nyquist.passed"] = ch.nyquist.passed
            out[f"{p}.nyquist.min_distance"] = ch.nyquist.min_distance
            out[f"{p}.nyquist.winding_number"] = ch.nyquist.winding_number
            out[f"{p}.nyquist.low_freq_real_limit"] = ch.nyquist.low_freq_real_limit
            out[f"{p}.nyquist.omega_min"] = ch.nyquist.omega_min
            out[f"{p}.nyquist.omega_max"] = ch.nyquist.omega_max
            out[f"{p}.nyquist.grid_points"] = ch.nyquist.grid_points
            out[f"{p}.spr.passed"] = ch.spr.passed
            out[f"{p}.spr.min_real_part"] = ch.spr.min_real_part
            out[f"{p}.spr.stable"] = ch.spr.stable
        if self.saturation is not None:
            s = self.saturation
            out["saturation.Phi_level"] = s.Phi_level.tolist()
            out["saturation.phi_level"] = s.phi_level.tolist()
            out["saturation.w_max_components"] = s.w_max_components.tolist()
            out["saturation.w_max_norm"] = s.w_max_norm
            out["saturation.lipschitz_F"] = s.lipschitz_F
            out["saturation.grid_points"] = s.grid_points
            out["saturation.evaluations"] = s.evaluations
            out["saturation.gain_bound"] = s.gain_bound
        for k, note in enumerate(self.notes):
            out[f"note.{k + 1}"] = note
        return out


def design_channel(
    channel: int,
    mu: float,
    inner: np.ndarray,
    a1: float | None = None,
    bracket: tuple[float, float] = (1e-6, 1e3),
    omega: np.ndarray | None = None,
) -> ChannelReport:
    """Run the disk procedure for one channel.

    With ``a1`` given the coefficients are only certified; otherwise the
    largest admissible a1 in ``bracket`` is used.
    """
    disk = SectorDisk(mu)
    inner = np.asarray(inner, dtype=float)
    if not is_hurwitz(np.concatenate(([1.0], inner[::-1]))):
        raise SynthesisError(f"channel {channel}: inner coefficients {inner} are not Hurwitz")
    try:
        a1_max = search_a1(inner, disk, bracket, omega=omega) if a1 is None else None
    except SynthesisError as exc:
        raise SynthesisError(f"channel {channel}: {exc}") from exc
    chosen = a1_max if a1 is None else float(a1)
    coeffs = np.concatenate(([chosen], inner))
    nyq = nyquist_check(coeffs, disk, omega)
    spr = spr_check(coeffs, mu, omega)
    return ChannelReport(channel, coeffs.tolist(), a1_max, nyq, spr)


def synthesize(
    rd: RelativeDegreeVector,
    mu: float,
    inner: Sequence,
    a1: Sequence | None = None,
    bracket: tuple[float, float] = (1e-6, 1e3),
    omega: np.ndarray | None = None,
) -> SynthesisReport:
    """Design (or certify) all channels. ``inner[i]`` holds a_i2..a_i,nu_i."""
    if len(inner) != rd.m:
        raise ValueError(f"need inner coefficients for {rd.m} channels")
    report = SynthesisReport(mu=float(mu), degrees=rd.degrees)
    for i in range(rd.m):
        inner_i = np.asarray(inner[i], dtype=float)
        if len(inner_i) != rd.degrees[i] - 1:
            raise ValueError(
                f"channel {i + 1}: expected {rd.degrees[i] - 1} inner coefficients, got {len(inner_i)}"
            )
        a1_i = None if a1 is None or a1[i] is None else a1[i]
        report.channels.append(design_channel(i + 1, mu, inner_i, a1_i, bracket, omega))
    return report


def structural_identity_residual(params: ControllerParams) -> float:
    """max |A_atau - (A - Bq_atau C)|; zero by construction."""
    mats = build_structural_matrices(params.rd)
    return float(np.max(np.abs(params.A_atau - (mats.A - params.Bq_atau @ mats.C))))
