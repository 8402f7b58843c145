"""The checks behind ``verify``: quasi-steady residuals, gain bound, sector
property and the finite-difference order of the fast-dynamics residuals.

Every random draw comes from the generator passed in, so identical seeds
give identical reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis
from .controller import SmoothSaturation
from .plant import NominalModel, NormalFormPlant
from .simulator import SimConfig, simulate_closed_loop
from .synthesis import ControllerParams, box_grid


@dataclass
class VerifyOutcome:
    entries: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def sample_states(rng: np.random.Generator, lower, upper, time_span, count: int):
    """Uniform ``[z, x]`` rows and times; returns ``(states, times)``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    states = lower + (upper - lower) * rng.random((count, len(lower)))
    times = time_span[0] + (time_span[1] - time_span[0]) * rng.random(count)
    return states, times


def check_quasi_steady(plant, nominal, states, times, tol: float) -> dict:
    """Quasi-steady residual at every sample plus the zero-uncertainty collapse."""
    nz = plant.nz
    worst = 0.0
    collapse = 0.0
    matched = replace(plant, G=nominal.Gbar)
    for v, t in zip(states, times):
        z, x = v[:nz], v[nz:]
        eta1 = analysis.quasi_steady_eta(z, x, z, float(t), plant, nominal)
        worst = max(worst, analysis.quasi_steady_residual(eta1, z, x, z, float(t), plant, nominal))
        eta0 = analysis.quasi_steady_eta(z, x, z, float(t), matched, nominal)
        collapse = max(collapse, float(np.max(np.abs(eta0 + np.asarray(plant.F(z, x))))))
    return {
        "max_residual": worst,
        "collapse_error": collapse,
        "samples": len(states),
        "tolerance": tol,
        "passed": bool(worst < tol and collapse <= 1e-12),
    }


def check_gain(plant, nominal, lower, upper, grid_points: int, times) -> analysis.GainBound:
    grid = box_grid(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float), grid_points)
    return analysis.check_gain_bound(plant, nominal, grid, times)


def check_sector(
    rng, plant, nominal, params: ControllerParams, states, times, slack: float, mu: float | None = None
) -> dict:
    """Sector form at every sample.

    ``mu`` is a grid estimate of the gain bound. Grid and samples both
    underestimate the supremum, so the larger of ``mu`` and the sample
    maximum is used.
    """
    nz, m = plant.nz, plant.rd.m
    Phi = SmoothSaturation(params.Phi_level, params.sat_margin)
    L = params.Phi_level
    samples = []
    mu_meas = 0.0
    for v, t in zip(states, times):
        z, x = v[:nz], v[nz:]
        t = float(t)
        eta1 = analysis.quasi_steady_eta(z, x, z, t, plant, nominal)
        a = eta1 + np.asarray(plant.F(z, x), dtype=float)
        # both Phi arguments stay in the identity region
        zeta = (-L - a) + (2 * L) * rng.random(m)
        G = np.asarray(plant.G(z, x, t), dtype=float)
        Gb = np.asarray(nominal.Gbar(z, x, t), dtype=float)
        mu_meas = max(mu_meas, float(np.linalg.norm(np.eye(m) - G @ np.linalg.inv(Gb), 2)))
        samples.append((z, x, z, t, zeta))
    mu_used = mu_meas if mu is None else max(float(mu), mu_meas)
    res = analysis.sector_check(samples, plant, nominal, Phi, mu_used, slack=slack)
    return {
        "mu_measured": mu_meas,
        "mu_used": mu_used,
        "max_form": res.max_form,
        "violations": res.violations,
        "samples": res.samples,
        "slack": slack,
        "passed": bool(res.violations == 0),
    }


def window_max(res: analysis.FastResidual, start: float, stop: float) -> tuple[float, float]:
    mask = (res.times >= start) & (res.times <= stop)
    if not np.any(mask):
        raise analysis.SamplingError(f"no residual samples in [{start:g}, {stop:g}]")
    return float(np.max(res.xi[mask])), float(np.max(res.eta[mask]))


def fd_order(plant, nominal, params: ControllerParams, cfg: SimConfig, window, min_order: float) -> dict:
    """Residual maxima over ``window`` (in units of tau) at h = tau/20 and tau/40."""
    tau = params.tau
    start, stop = window[0] * tau, window[1] * tau
    maxima = []
    for div in (20, 40):
        run = replace(cfg, step=tau / div, record_stride=1)
        traj = simulate_closed_loop(plant, nominal, params, run)
        if traj.aborted:
            raise RuntimeError(f"fast-residual run aborted: {traj.reason}")
        maxima.append(window_max(analysis.fast_dynamics_residual(traj, plant, nominal, params), start, stop))
    (x1, e1), (x2, e2) = maxima
    order_xi = math.log2(x1 / x2) if x2 > 0 else math.inf
    order_eta = math.log2(e1 / e2) if e2 > 0 else math.inf
    return {
        "window": [start, stop],
        "xi_max": [x1, x2],
        "eta_max": [e1, e2],
        "order_xi": order_xi,
        "order_eta": order_eta,
        "min_order": min_order,
        "passed": bool(order_xi >= min_order and order_eta >= min_order),
    }


def run_verification(
    spec: dict,
    plant: NormalFormPlant,
    nominal: NominalModel,
    params: ControllerParams,
    cfg: SimConfig,
) -> VerifyOutcome:
    ver = spec["verify"]
    mu = float(spec["controller"]["mu"])
    rng = np.random.default_rng(spec["seed"])
    out = VerifyOutcome()
    e = out.entries
    e["seed"] = spec["seed"]
    e["mu.design"] = mu
    e["mu.mode"] = ver["mu_mode"]
    states, times = sample_states(rng, ver["state_lower"], ver["state_upper"], ver["time_span"], ver["samples"])

    if ver["quasi_steady"]:
        qs = check_quasi_steady(plant, nominal, states, times, ver["quasi_steady_tol"])
        e.update({f"quasi_steady.{k}": v for k, v in qs.items()})
        if not qs["passed"]:
            out.failures.append("quasi_steady")

    gain_value = None
    if ver["gain_bound"]:
        gt = np.linspace(ver["time_span"][0], ver["time_span"][1], ver["gain_time_points"])
        gb = check_gain(plant, nominal, ver["state_lower"], ver["state_upper"], ver["gain_grid_points"], gt)
        gain_value = gb.value
        flagged = gb.flags(mu)
        e["gain_bound.max"] = gb.value
        e["gain_bound.argmax.z"] = gb.z
        e["gain_bound.argmax.x"] = gb.x
        e["gain_bound.argmax.t"] = gb.t
        e["gain_bound.points"] = gb.points
        e["gain_bound.flagged"] = flagged
        if flagged:
            msg = f"measured ||I - G Gbar^-1|| = {gb.value:.6g} exceeds design mu = {mu:g}"
            e["gain_bound.message"] = msg
            out.flags.append(msg)
            if ver["mu_mode"] == "enforce":
                out.failures.append("gain_bound")

    if ver["sector"]:
        s_states, s_times = sample_states(
            rng, ver["state_lower"], ver["state_upper"], ver["time_span"], ver["sector_samples"]
        )
        sc = check_sector(
            rng, plant, nominal, params, s_states, s_times, ver["sector_slack"], mu=gain_value
        )
        e.update({f"sector.{k}": v for k, v in sc.items()})
        if not sc["passed"]:
            out.failures.append("sector")

    if ver["fast_residual"]:
        fd_cfg = replace(cfg, t_end=ver["fd_t_end"])
        fr = fd_order(plant, nominal, params, fd_cfg, ver["fd_window"], ver["min_fd_order"])
        e.update({f"fast_residual.{k}": v for k, v in fr.items()})
        if not fr["passed"]:
            out.failures.append("fast_residual")

    e["failures"] = list(out.failures)
    e["passed"] = out.passed
    return out
