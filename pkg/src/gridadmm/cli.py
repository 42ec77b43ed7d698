"""Command-line front end: ``gridadmm solve`` and ``gridadmm track``.

Settings come from flags, optionally layered over a JSON file given with
``--config`` (flags win).  Each run writes ``manifest.json`` (resolved
settings), ``solution.json`` and ``convergence.csv`` into ``--out-dir``;
track mode adds ``periods.csv``.

Exit status: 0 converged, 2 iteration limit, 3 diverged, 1 bad input.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .driver import (CONVERGED, DIVERGED, PRESETS, SolverConfig, SolveReport, default_workers,
                     solve)
from .kernels import branch_flows
from .netdata import CaseFormatError, PowerNetwork, case_path, load_case
from .tracking import (RampInfeasibleError, TrackingScenario, run_tracking,
                       write_periods_csv)

log = logging.getLogger("gridadmm")

# flag name -> (type, SolverConfig field or None)
_OPTIONS = {
    "rho_pq": (float, "rho_pq"),
    "rho_va": (float, "rho_va"),
    "beta0": (float, "beta0"),
    "eps": (float, "eps"),
    "max_outer": (int, "max_outer"),
    "max_inner": (int, "max_inner"),
    "workers": (int, "workers"),
    "inner_tol": (float, "inner_tol"),
    "ramp_frac": (float, None),
    "profile": (str, None),
    "preset": (str, None),
    "out_dir": (str, None),
    "ref_objective": (str, None),
    "case": (str, None),
    "mode": (str, None),
}


class InputError(Exception):
    pass


def report_gap(f: float, f_ref: float) -> float:
    """Relative objective gap ``|f - f_ref| / f_ref``."""
    if not f_ref > 0:
        raise ValueError("reference objective must be positive")
    return abs(f - f_ref) / f_ref


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gridadmm",
        description="Component-based two-level ADMM for AC optimal power flow.")
    p.add_argument("mode_pos", nargs="?", choices=("solve", "track"), metavar="{solve,track}",
                   help="run mode (same as --mode)")
    p.add_argument("--mode", choices=("solve", "track"))
    p.add_argument("--case", help="MATPOWER file or bundled case name")
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--preset", help="use the built-in settings of a case")
    p.add_argument("--rho-pq", type=float)
    p.add_argument("--rho-va", type=float)
    p.add_argument("--beta0", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--inner-tol", type=float)
    p.add_argument("--max-outer", type=int)
    p.add_argument("--max-inner", type=int)
    p.add_argument("--workers", type=int, help="default: $GRIDADMM_WORKERS or 1")
    p.add_argument("--profile", help="load profile CSV (track mode)")
    p.add_argument("--ramp-frac", type=float, help="ramp limit as a fraction of pmax (0.02)")
    p.add_argument("--out-dir", help="output directory (default .)")
    p.add_argument("--ref-objective",
                   help="reference objective for the gap; comma-separated per period in track mode")
    p.add_argument("--no-timing", action="store_true",
                   help="write elapsed/period times as nan so outputs are reproducible byte for byte")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise InputError(f"config file {path} must hold a JSON object")
    out = {}
    for key, value in raw.items():
        name = key.replace("-", "_")
        if name not in _OPTIONS:
            raise InputError(f"unknown setting {key!r} in {path}")
        kind = _OPTIONS[name][0]
        try:
            out[name] = kind(value) if value is not None else None
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad value for {key!r} in {path}: {value!r}") from exc
    return out


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge the config file (if any) and the flags; flags take precedence."""
    settings = _load_config_file(args.config) if args.config else {}
    if args.mode_pos and args.mode and args.mode_pos != args.mode:
        raise InputError(f"conflicting modes {args.mode_pos!r} and {args.mode!r}")
    for name in _OPTIONS:
        if name == "mode":
            value = args.mode_pos or args.mode
        else:
            value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    settings.setdefault("mode", "solve")
    if settings["mode"] not in ("solve", "track"):
        raise InputError(f"unknown mode {settings['mode']!r}")
    if not settings.get("case"):
        raise InputError("--case is required")
    if settings["mode"] == "track" and not settings.get("profile"):
        raise InputError("track mode needs --profile")
    return settings


def _case_settings(settings: dict, case_name: str) -> dict:
    preset = settings.get("preset")
    if preset is not None and preset not in PRESETS:
        raise InputError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    kw = dict(PRESETS.get(preset or case_name, {}))
    for name, (_, field_name) in _OPTIONS.items():
        if field_name and settings.get(name) is not None:
            kw[field_name] = settings[name]
    if "rho_pq" not in kw or "rho_va" not in kw:
        raise InputError(f"no preset for case {case_name!r}; give --rho-pq and --rho-va")
    return kw


def make_config(settings: dict, case_name: str) -> SolverConfig:
    kw = _case_settings(settings, case_name)
    kw.setdefault("workers", default_workers())
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _parse_refs(text, periods: int | None):
    if text is None:
        return None
    try:
        vals = [float(v) for v in str(text).split(",")]
    except ValueError as exc:
        raise InputError(f"bad --ref-objective {text!r}") from exc
    if any(not v > 0 for v in vals):
        raise InputError("reference objectives must be positive")
    if periods is None:
        if len(vals) != 1:
            raise InputError("solve mode takes a single --ref-objective")
        return vals[0]
    if len(vals) != periods:
        raise InputError(f"--ref-objective needs {periods} values in track mode, got {len(vals)}")
    return vals


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    return repr(float(v))


def write_convergence_csv(path, reports, timing: bool = True, periods: bool = False):
    cols = ["outer", "inner", "primal_res", "dual_res", "z_norm", "elapsed_s"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["period"] if periods else []) + cols)
        for t, rep in enumerate(reports, start=1):
            h = rep.history
            for k in range(len(h["outer"])):
                row = [int(h["outer"][k]), int(h["inner"][k]), _fmt(h["primal_res"][k]),
                       _fmt(h["dual_res"][k]), _fmt(h["z_norm"][k]),
                       _fmt(h["elapsed_s"][k]) if timing else "nan"]
                w.writerow(([t] if periods else []) + row)


def solution_record(network: PowerNetwork, report: SolveReport, ref=None) -> dict:
    sol = report.solution
    base = network.base_mva
    flows = branch_flows(network, np.asarray(sol.vm), np.asarray(sol.va))
    metrics = dict(report.metrics)
    if ref is not None:
        metrics["gap"] = report_gap(report.objective, ref)
    return {
        "case": network.name,
        "base_mva": base,
        "status": report.status,
        "outer_iterations": report.outer_iterations,
        "inner_iterations": report.inner_iterations,
        "objective": report.objective,
        "metrics": metrics,
        "generators": [
            {"index": g, "bus": int(network.bus_ids[network.gen_bus[g]]),
             "pg": float(sol.pg[g]), "qg": float(sol.qg[g]),
             "pg_mw": float(sol.pg[g] * base), "qg_mvar": float(sol.qg[g] * base)}
            for g in range(network.n_gen)],
        "buses": [
            {"id": int(network.bus_ids[i]), "vm": float(sol.vm[i]), "va": float(sol.va[i])}
            for i in range(network.n_bus)],
        "branches": [
            {"index": l, "from": int(network.bus_ids[network.br_from[l]]),
             "to": int(network.bus_ids[network.br_to[l]]),
             "pij": float(flows[l, 0]), "qij": float(flows[l, 1]),
             "pji": float(flows[l, 2]), "qji": float(flows[l, 3])}
            for l in range(network.n_branch)],
    }


def write_manifest(path, settings: dict, config: SolverConfig, network: PowerNetwork):
    """Record the resolved run settings next to the results."""
    cfg = dataclasses.asdict(config)
    record = {
        "version": __version__,
        "case": str(settings["case"]),
        "case_name": network.name,
        "mode": settings["mode"],
        "profile": settings.get("profile"),
        "ramp_frac": settings.get("ramp_frac", 0.02) if settings["mode"] == "track" else None,
        "ref_objective": settings.get("ref_objective"),
        "config": cfg,
    }
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1)


def _exit_code(reports) -> int:
    if all(r.status == CONVERGED for r in reports):
        return 0
    if any(r.status == DIVERGED for r in reports):
        return 3
    return 2


# ---------------------------------------------------------------------------


def run(settings: dict, timing: bool = True) -> int:
    path = settings["case"]
    try:
        network = load_case(path)
    except FileNotFoundError as exc:
        raise InputError(f"case file not found: {path}") from exc
    except (OSError, CaseFormatError) as exc:
        raise InputError(f"cannot read case {path}: {exc}") from exc
    case_name = Path(str(case_path(path))).stem
    config = make_config(settings, case_name)
    out_dir = Path(settings.get("out_dir") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir / "manifest.json", settings, config, network)

    if settings["mode"] == "solve":
        ref = _parse_refs(settings.get("ref_objective"), None)
        report = solve(network, config)
        write_convergence_csv(out_dir / "convergence.csv", [report], timing)
        record = solution_record(network, report, ref)
        log.info("%s: %s after %d inner iterations, objective %.6g, c_inf %.3e",
                 case_name, report.status, report.inner_iterations, report.objective,
                 report.metrics["c_inf"])
        with open(out_dir / "solution.json", "w") as fh:
            json.dump(record, fh, indent=1)
        return _exit_code([report])

    try:
        scenario = TrackingScenario.from_csv(settings["profile"], network,
                                             settings.get("ramp_frac", 0.02))
    except OSError as exc:
        raise InputError(f"cannot read profile {settings['profile']}: {exc}") from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    refs = _parse_refs(settings.get("ref_objective"), scenario.periods)

    def progress(t, rep):
        log.info("period %d: %s, %d inner iterations", t + 1, rep.status, rep.inner_iterations)

    try:
        result = run_tracking(network, config, scenario, callback=progress)
    except RampInfeasibleError as exc:
        raise InputError(str(exc)) from exc
    write_convergence_csv(out_dir / "convergence.csv", result.reports, timing, periods=True)
    rows = result.rows(refs)
    if not timing:
        for r in rows:
            r["time_s"] = math.nan
    write_periods_csv(out_dir / "periods.csv", rows)
    record = {
        "case": network.name,
        "periods": [solution_record(net, rep, None if refs is None else refs[t])
                    for t, (net, rep) in enumerate(zip(result.networks, result.reports))],
    }
    with open(out_dir / "solution.json", "w") as fh:
        json.dump(record, fh, indent=1)
    return _exit_code(result.reports)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args)
        return run(settings, timing=not args.no_timing)
    except InputError as exc:
        print(f"gridadmm: error: {exc}", file=sys.stderr)
        if "track mode needs --profile" in str(exc):
            parser.print_usage(sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
