"""Command-line entry point.

Subcommands: synthesize, simulate, nominal, sweep, verify, example-satellite.
Exit codes: 0 success, 2 config error, 3 numerical failure, 4 verification
failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, runspec
from .plant import SingularGainError
from .report import write_report
from .runspec import SpecError
from .satellite import satellite_gain_samples
from .simulator import simulate_closed_loop, simulate_nominal, sweep_tau
from .synthesis import SynthesisError, estimate_saturation_levels, synthesize
from .trajectory import write_csv
from .verification import run_verification

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4

log = logging.getLogger("robust_dob")


class CommandFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _say(args, msg: str):
    if not args.quiet:
        print(msg)


def _load_spec(args) -> dict:
    spec = runspec.load(args.config) if args.config else runspec.example_satellite()
    if args.seed is not None:
        spec["seed"] = args.seed
    if args.tau is not None:
        if args.tau <= 0:
            raise SpecError("--tau must be positive")
        spec["controller"]["tau"] = args.tau
    if args.out is not None:
        spec["output"]["dir"] = args.out
    return spec


def _out_dir(spec: dict) -> Path:
    path = Path(spec["output"]["dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _metrics_entries(metrics: analysis.Metrics, traj) -> dict:
    return {
        "ultimate_bound": metrics.ultimate_bound,
        "recovery_error": metrics.recovery_error,
        "effort_l1": metrics.effort_l1,
        "effort_l2": metrics.effort_l2,
        "settled": metrics.settled,
        "t_ss": metrics.t_ss,
        "samples": len(traj),
        "step": traj.step,
        "aborted": traj.aborted,
        "reason": traj.reason,
    }


def _closed_loop_setup(spec: dict):
    plant, nominal, _ = runspec.build_plant(spec)
    params = runspec.build_controller(spec)
    cfg = runspec.build_sim_config(spec)
    if spec["simulation"]["controller_init"] == "quasi-steady":
        z0 = np.asarray(cfg.z0, dtype=float)
        zbar0 = z0 if cfg.zbar0 is None else np.asarray(cfg.zbar0, dtype=float)
        state = analysis.quasi_steady_controller_state(
            z0, np.asarray(cfg.x0, dtype=float), zbar0, 0.0, plant, nominal, params
        )
        cfg = replace(cfg, zbar0=tuple(state.zbar), q0=tuple(state.q), p0=tuple(state.p))
    return plant, nominal, params, cfg


def _nominal_cfg(cfg, params):
    step = params.tau / 20 if cfg.step is None else cfg.step
    return replace(cfg, step=step, z0=cfg.zbar0 if cfg.zbar0 is not None else cfg.z0)


# ---------------------------------------------------------------------------
# commands


def cmd_synthesize(spec: dict, args) -> int:
    rd = runspec.relative_degrees(spec)
    ctl = spec["controller"]
    a1 = ctl["a1"]
    try:
        report = synthesize(rd, ctl["mu"], runspec.inner_coefficients(spec), a1, tuple(ctl["bracket"]))
    except SynthesisError as exc:
        raise CommandFailure(EXIT_NUMERIC, f"synthesis failed: {exc}") from exc
    entries = report.to_dict()
    est_cfg = spec["saturation_estimate"]
    if est_cfg["enabled"]:
        plant, nominal, sat_params = runspec.build_plant(spec)
        est = estimate_saturation_levels(
            plant,
            nominal,
            satellite_gain_samples(sat_params),
            (est_cfg["box_lower"], est_cfg["box_upper"]),
            times=est_cfg["times"],
            z_bound=est_cfg["z_bound"],
            delta_w=est_cfg["delta_w"],
            delta_1=est_cfg["delta_1"],
            grid_points=est_cfg["grid_points"],
            safety=est_cfg["safety"],
        )
        report.saturation = est
        entries = report.to_dict()
        entries["saturation.configured_Phi_level"] = ctl["Phi_level"]
        entries["saturation.configured_phi_level"] = ctl["phi_level"]
    path = write_report(entries, _out_dir(spec) / "synthesis_report.txt", "synthesis report")
    for ch in report.channels:
        _say(args, f"channel {ch.channel}: a={ch.coeffs} nyquist={'pass' if ch.nyquist.passed else 'FAIL'} "
                   f"(distance {ch.nyquist.min_distance:.4g}) spr margin {ch.spr.min_real_part:.4g}")
    _say(args, f"wrote {path}")
    if not report.passed:
        failing = [str(ch.channel) for ch in report.channels if not ch.passed]
        raise CommandFailure(EXIT_VERIFY, f"certification failed for channel(s) {', '.join(failing)}")
    return EXIT_OK


def cmd_simulate(spec: dict, args) -> int:
    plant, nominal, params, cfg = _closed_loop_setup(spec)
    traj = simulate_closed_loop(plant, nominal, params, cfg)
    nom = simulate_nominal(plant, nominal, replace(_nominal_cfg(cfg, params), step=traj.step))
    metrics = analysis.compute_metrics(traj, nom if not traj.aborted else None, spec["simulation"]["t_ss"])
    out = _out_dir(spec)
    csv_path = write_csv(traj, out / "trajectory.csv")
    entries = _metrics_entries(metrics, traj)
    entries["tau"] = params.tau
    entries["tau_note"] = "tau is a configured choice; the satellite example has no reference value"
    write_report(entries, out / "metrics.txt", "closed-loop metrics")
    _say(args, f"ultimate bound {metrics.ultimate_bound:.4g}, recovery error {metrics.recovery_error:.4g}, "
               f"effort {metrics.effort_l1:.4g}; wrote {csv_path}")
    if traj.aborted:
        raise CommandFailure(EXIT_NUMERIC, f"simulation aborted: {traj.reason}")
    return EXIT_OK


def cmd_nominal(spec: dict, args) -> int:
    plant, nominal, params, cfg = _closed_loop_setup(spec)
    traj = simulate_nominal(plant, nominal, _nominal_cfg(cfg, params))
    metrics = analysis.compute_metrics(traj, None, spec["simulation"]["t_ss"])
    out = _out_dir(spec)
    csv_path = write_csv(traj, out / "nominal.csv")
    write_report(_metrics_entries(metrics, traj), out / "nominal_metrics.txt", "nominal-loop metrics")
    _say(args, f"nominal ultimate bound {metrics.ultimate_bound:.4g}; wrote {csv_path}")
    if traj.aborted:
        raise CommandFailure(EXIT_NUMERIC, f"nominal simulation aborted: {traj.reason}")
    return EXIT_OK


def cmd_sweep(spec: dict, args) -> int:
    plant, nominal, params, cfg = _closed_loop_setup(spec)
    rep = sweep_tau(
        plant, nominal, params, cfg, spec["sweep"]["taus"],
        record_dt=spec["sweep"]["record_dt"], t_ss=spec["simulation"]["t_ss"],
    )
    path = _out_dir(spec) / "sweep.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(rep.FIELDS)
        for e in rep.entries:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(e, f) for f in rep.FIELDS)])
    for e in rep.entries:
        _say(args, f"tau={e.tau:g}: bound {e.ultimate_bound:.4g} recovery {e.recovery_error:.4g} "
                   f"effort {e.effort_l1:.4g}{' ERROR ' + e.error if e.error else ''}")
    _say(args, f"wrote {path}")
    if any(e.error for e in rep.entries):
        raise CommandFailure(EXIT_NUMERIC, "at least one sweep run failed (see sweep.csv)")
    return EXIT_OK


def cmd_verify(spec: dict, args) -> int:
    plant, nominal, params, cfg = _closed_loop_setup(spec)
    outcome = run_verification(spec, plant, nominal, params, cfg)
    path = write_report(outcome.entries, _out_dir(spec) / "verify_report.txt", "verification report")
    for flag in outcome.flags:
        _say(args, f"FLAG: {flag}")
    _say(args, f"verification {'passed' if outcome.passed else 'FAILED: ' + ', '.join(outcome.failures)}; wrote {path}")
    return EXIT_OK if outcome.passed else EXIT_VERIFY


def cmd_example(spec: dict, args) -> int:
    path = runspec.dump(runspec.example_satellite(), _out_dir(spec) / "satellite.json")
    _say(args, f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "nominal": cmd_nominal,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "example-satellite": cmd_example,
}

HELP = {
    "synthesize": "certify or search the filter gains and write synthesis_report.txt",
    "simulate": "integrate the uncertain closed loop and write trajectory.csv and metrics.txt",
    "nominal": "integrate the nominal closed loop and write nominal.csv",
    "sweep": "repeat the closed-loop run for each tau in sweep.taus and write sweep.csv",
    "verify": "run the numerical checks and write verify_report.txt",
    "example-satellite": "write the built-in satellite run specification to satellite.json",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-dob",
        description="Gain design and closed-loop simulation for the robust disturbance-observer controller.",
        epilog="exit codes: 0 success, 2 config error, 3 numerical failure, 4 verification failure",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run specification (default: built-in satellite)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="random seed (overrides seed)")
    common.add_argument("--tau", type=float, help="time-scale parameter (overrides controller.tau)")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        spec = _load_spec(args)
        return COMMANDS[args.command](spec, args)
    except (SpecError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SingularGainError, SynthesisError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
