"""JSON run specification: schema, defaults and builders.

A RunSpec is a single JSON object. Unknown keys are rejected at every
level, and missing keys are filled from :data:`DEFAULTS`. Sections:

plant
    ``"satellite"`` or ``null``. Without a plant only ``synthesize`` works.
satellite
    Physical parameters and the attitude signals ``theta_known`` and
    ``theta_unknown`` (each ``{"amplitude", "angular_frequency"}``).
    ``poles`` holds the closed-loop poles per channel for the state feedback.
controller
    ``mu``, ``inner_roots`` or ``inner`` (a_i2..a_i,nu_i per channel),
    ``a1`` (per channel, ``null`` entries are searched in ``bracket``),
    ``tau``, ``phi_level``, ``Phi_level``, ``sat_margin``.
saturation_estimate
    Optional grid estimate of the saturation levels.
simulation
    ``t_end``, ``step`` (``null`` = tau/20), ``record_stride``, initial states.
    ``controller_init`` is ``"zero"`` or ``"quasi-steady"``.
sweep
    ``taus`` (descending) and the recording interval ``record_dt``.
verify
    Enabled checks, tolerances, sample counts and ``mu_mode``.
seed
    Seed of every random draw made by ``verify``.
output
    ``dir`` for all written files.
"""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .plant import NominalModel, NormalFormPlant, RelativeDegreeVector
from .satellite import (
    DEFAULT_POLES,
    SATELLITE_X0,
    SatelliteParams,
    satellite_plant,
    sinusoid,
)
from .synthesis import GainVector, decoupled_feedback_gain, inner_coeffs_from_roots, make_controller_params
from .simulator import SimConfig


class SpecError(ValueError):
    """The run specification is malformed; the message names the offending key."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_VEC = {"type": "array", "items": _NUM}
_OPT_VEC = {"oneOf": [{"type": "null"}, _VEC]}
_LEVEL = {"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


_SIGNAL = _obj({"amplitude": _NUM, "angular_frequency": _NUM}, ["amplitude", "angular_frequency"])

SCHEMA = _obj(
    {
        "plant": {"enum": ["satellite", None]},
        "satellite": _obj({
            "m_true": _POS,
            "m_nominal": _POS,
            "k": _POS,
            "r_star": _POS,
            "theta_known": _SIGNAL,
            "theta_unknown": _SIGNAL,
            "c_theta_bound": _NONNEG,
            "poles": {"type": "array", "items": _VEC, "minItems": 1},
        }),
        "controller": _obj({
            "degrees": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            "mu": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "inner_roots": {"oneOf": [{"type": "null"}, {"type": "array", "items": _VEC}]},
            "inner": {"oneOf": [{"type": "null"}, {"type": "array", "items": _VEC}]},
            "a1": {"oneOf": [{"type": "null"}, {"type": "array", "items": {"oneOf": [{"type": "null"}, _POS]}}]},
            "bracket": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
            "tau": _POS,
            "phi_level": _LEVEL,
            "Phi_level": _LEVEL,
            "sat_margin": _POS,
        }),
        "saturation_estimate": _obj({
            "enabled": {"type": "boolean"},
            "box_lower": _VEC,
            "box_upper": _VEC,
            "times": _VEC,
            "z_bound": _NONNEG,
            "grid_points": {"type": "integer", "minimum": 1},
            "delta_w": _NONNEG,
            "delta_1": _NONNEG,
            "safety": {"type": "number", "minimum": 1},
        }),
        "simulation": _obj({
            "t_end": _NONNEG,
            "step": {"oneOf": [{"type": "null"}, _POS]},
            "record_stride": {"type": "integer", "minimum": 1},
            "x0": _VEC,
            "z0": _VEC,
            "zbar0": _OPT_VEC,
            "q0": _OPT_VEC,
            "p0": _OPT_VEC,
            "controller_init": {"enum": ["zero", "quasi-steady"]},
            "blowup": _POS,
            "allow_coarse_step": {"type": "boolean"},
            "t_ss": {"oneOf": [{"type": "null"}, _NONNEG]},
        }),
        "sweep": _obj({
            "taus": {"type": "array", "items": _POS, "minItems": 1},
            "record_dt": {"oneOf": [{"type": "null"}, _POS]},
        }),
        "verify": _obj({
            "mu_mode": {"enum": ["report-only", "enforce"]},
            "quasi_steady": {"type": "boolean"},
            "sector": {"type": "boolean"},
            "gain_bound": {"type": "boolean"},
            "fast_residual": {"type": "boolean"},
            "samples": {"type": "integer", "minimum": 1},
            "sector_samples": {"type": "integer", "minimum": 1},
            "quasi_steady_tol": _POS,
            "sector_slack": _NONNEG,
            "min_fd_order": _NUM,
            "state_lower": _VEC,
            "state_upper": _VEC,
            "time_span": {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2},
            "gain_grid_points": {"type": "integer", "minimum": 2},
            "gain_time_points": {"type": "integer", "minimum": 1},
            "fd_t_end": _POS,
            "fd_window": {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2},
        }),
        "seed": {"type": "integer", "minimum": 0},
        "output": _obj({"dir": {"type": "string"}}),
    }
)

DEFAULTS: dict = {
    "plant": "satellite",
    "satellite": {
        "m_true": 1.2,
        "m_nominal": 1.0,
        "k": 5.0,
        "r_star": 1.5,
        "theta_known": {"amplitude": math.pi / 2, "angular_frequency": math.pi},
        "theta_unknown": {"amplitude": math.pi / 5, "angular_frequency": 4 * math.pi},
        "c_theta_bound": math.pi / 5,
        "poles": [list(p) for p in DEFAULT_POLES],
    },
    "controller": {
        "degrees": [2, 2],
        "mu": 0.001,
        "inner_roots": [[-8.0], [-8.0]],
        "inner": None,
        "a1": [15.0, 15.0],
        "bracket": [1e-6, 1e3],
        "tau": 1e-3,
        "phi_level": 25.0,
        "Phi_level": 100.0,
        "sat_margin": 1.0,
    },
    "saturation_estimate": {
        "enabled": False,
        "box_lower": [-0.5, -2.1, -0.6, -0.9],
        "box_upper": [1.1, 0.6, 0.6, 0.5],
        "times": [0.1 * k for k in range(21)],
        "z_bound": 0.0,
        "grid_points": 5,
        "delta_w": 0.1,
        "delta_1": 0.1,
        "safety": 1.25,
    },
    "simulation": {
        "t_end": 20.0,
        "step": None,
        "record_stride": 20,
        "x0": list(SATELLITE_X0),
        "z0": [],
        "zbar0": None,
        "q0": None,
        "p0": None,
        "controller_init": "zero",
        "blowup": 1e8,
        "allow_coarse_step": False,
        "t_ss": None,
    },
    "sweep": {"taus": [1e-1, 1e-2, 1e-3], "record_dt": 0.01},
    "verify": {
        "mu_mode": "report-only",
        "quasi_steady": True,
        "sector": True,
        "gain_bound": True,
        "fast_residual": True,
        "samples": 100,
        "sector_samples": 10000,
        "quasi_steady_tol": 1e-10,
        "sector_slack": 1e-12,
        "min_fd_order": 1.8,
        "state_lower": [-1.0, -2.5, -1.0, -1.0],
        "state_upper": [1.5, 1.0, 1.0, 1.0],
        "time_span": [0.0, 2.0],
        "gain_grid_points": 3,
        "gain_time_points": 81,
        "fd_t_end": 0.012,
        "fd_window": [5.0, 10.0],
    },
    "seed": 0,
    "output": {"dir": "out"},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _path(error: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in error.absolute_path) or "<root>"


def validate(raw: dict) -> dict:
    """Validate ``raw`` against the schema and return it merged with defaults."""
    if not isinstance(raw, dict):
        raise SpecError("run specification must be a JSON object")
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            where = _path(err)
            keys = ", ".join(extra if where == "<root>" else [f"{where}.{k}" for k in extra])
            raise SpecError(f"unknown key(s): {keys}")
        raise SpecError(f"invalid value at '{_path(err)}': {err.message}")
    spec = _merge(DEFAULTS, raw)
    _check_consistency(spec)
    return spec


def _check_consistency(spec: dict):
    ctl = spec["controller"]
    m = len(ctl["degrees"])
    if ctl["inner"] is None and ctl["inner_roots"] is None:
        raise SpecError("controller.inner or controller.inner_roots must be given")
    for key in ("inner", "inner_roots", "a1"):
        if ctl[key] is not None and len(ctl[key]) != m:
            raise SpecError(f"controller.{key} needs one entry per channel ({m})")
    lo, hi = ctl["bracket"]
    if not lo < hi:
        raise SpecError("controller.bracket must be increasing")
    taus = spec["sweep"]["taus"]
    if any(a < b for a, b in zip(taus, taus[1:])):
        raise SpecError("sweep.taus must be descending")
    if spec["plant"] == "satellite":
        if ctl["degrees"] != [2, 2]:
            raise SpecError("controller.degrees must be [2, 2] for the satellite plant")
        if len(spec["simulation"]["x0"]) != 4:
            raise SpecError("simulation.x0 must have 4 entries for the satellite plant")


def load(path) -> dict:
    """Read and validate a RunSpec file."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: not valid JSON ({exc})") from exc
    return validate(raw)


def dumps(spec: dict) -> str:
    return json.dumps(spec, indent=2, sort_keys=True) + "\n"


def dump(spec: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(spec))
    return path


def example_satellite() -> dict:
    """The satellite scenario with the reference parameters, fully expanded."""
    return copy.deepcopy(DEFAULTS)


# ---------------------------------------------------------------------------
# builders


def relative_degrees(spec: dict) -> RelativeDegreeVector:
    return RelativeDegreeVector(tuple(spec["controller"]["degrees"]))


def inner_coefficients(spec: dict) -> list[np.ndarray]:
    ctl = spec["controller"]
    if ctl["inner"] is not None:
        return [np.asarray(a, dtype=float) for a in ctl["inner"]]
    return [inner_coeffs_from_roots(r, d) for r, d in zip(ctl["inner_roots"], ctl["degrees"])]


def satellite_params(spec: dict) -> SatelliteParams:
    s = spec["satellite"]
    return SatelliteParams(
        m_true=s["m_true"],
        m_nominal=s["m_nominal"],
        k=s["k"],
        r_star=s["r_star"],
        theta_known=sinusoid(**s["theta_known"]),
        theta_unknown=sinusoid(**s["theta_unknown"]),
        c_theta_bound=s["c_theta_bound"],
    )


def build_plant(spec: dict) -> tuple[NormalFormPlant, NominalModel, SatelliteParams]:
    if spec["plant"] != "satellite":
        raise SpecError("this command needs plant = 'satellite'")
    params = satellite_params(spec)
    K = decoupled_feedback_gain(relative_degrees(spec), spec["satellite"]["poles"])
    plant, nominal = satellite_plant(params, K)
    return plant, nominal, params


def build_gains(spec: dict, a1=None) -> GainVector:
    """Gains from the spec; ``a1`` overrides the per-channel leading coefficients."""
    a1 = spec["controller"]["a1"] if a1 is None else a1
    if a1 is None or any(a is None for a in a1):
        raise SpecError("controller.a1 must be fully specified (run synthesize to search it)")
    return GainVector(tuple(np.concatenate(([a], inner)) for a, inner in zip(a1, inner_coefficients(spec))))


def build_controller(spec: dict, gains: GainVector | None = None, tau: float | None = None):
    ctl = spec["controller"]
    gains = build_gains(spec) if gains is None else gains
    return make_controller_params(
        gains,
        relative_degrees(spec),
        ctl["tau"] if tau is None else tau,
        ctl["phi_level"],
        ctl["Phi_level"],
        ctl["sat_margin"],
    )


def build_sim_config(spec: dict) -> SimConfig:
    sim = spec["simulation"]
    return SimConfig(
        t_end=sim["t_end"],
        x0=tuple(sim["x0"]),
        step=sim["step"],
        record_stride=sim["record_stride"],
        z0=tuple(sim["z0"]),
        zbar0=None if sim["zbar0"] is None else tuple(sim["zbar0"]),
        q0=None if sim["q0"] is None else tuple(sim["q0"]),
        p0=None if sim["p0"] is None else tuple(sim["p0"]),
        blowup=sim["blowup"],
        allow_coarse_step=sim["allow_coarse_step"],
    )
