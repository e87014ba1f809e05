"""Command-line driver: ``mflab {ns,mf,homog,equiv} --config run.json``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 failed assertion.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .constitutive import make_laws
from .grid import PeriodicGrid
from .homogenization import (YoungMeasureSpec, convergence_study, default_probes, make_profile,
                             weak_limit_report)
from .io import (NS_DIAG_HEADER, NS_FRAME_HEADER, mf_diag_header, mf_frame_header, mf_frame_rows,
                 ns_frame_rows, write_csv, write_json)
from .multifluid import equivalence_check_k2, mf_run
from .ns import horizon_estimate, ns_run

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ASSERT = 0, 2, 3, 4
EQUIV_TOL = 1e-12


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

LAW_KEYS = {"pressure", "viscosity", "mode", "mu0"}
GRID_KEYS = {"L", "N"}
RUN_KEYS = {"laws", "grid", "initial", "T", "cfl", "dt_max", "output_every", "output_times"}
ALLOWED = {
    "ns": RUN_KEYS,
    "mf": RUN_KEYS,
    "homog": {"laws", "initial", "L", "T", "cfl", "dt_max", "n_list", "grid_factor", "N_mf",
              "checkpoints", "C0", "assert_probes", "halving_probes"},
    "equiv": {"samples", "seed", "constant_mu"},
}


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _number(d: dict, key: str, where: str, default=None, lo=None, hi=None, lo_open=False, integer=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}.{key}: missing required field")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: must be a finite number")
    if integer and int(v) != v:
        raise ConfigError(f"{where}.{key}: must be an integer")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{where}.{key}: must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and v > hi:
        raise ConfigError(f"{where}.{key}: must be <= {hi}")
    return int(v) if integer else float(v)


def _laws(cfg: dict):
    if "laws" not in cfg:
        raise ConfigError("laws: missing required field")
    d = cfg["laws"]
    _reject_unknown(d, LAW_KEYS, "laws")
    for key in ("pressure", "viscosity"):
        if key not in d:
            raise ConfigError(f"laws.{key}: missing required field")
    mode = d.get("mode")
    if mode not in (None, "strict", "relaxed"):
        raise ConfigError("laws.mode: must be 'strict' or 'relaxed'")
    mu0 = _number(d, "mu0", "laws", lo=0, lo_open=True) if "mu0" in d else None
    try:
        return make_laws(d["pressure"], d["viscosity"], mu0=mu0, mode=mode)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"laws: {exc}") from exc


def _profile(desc, where: str, L: float):
    try:
        return make_profile(desc, L)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _grid(cfg: dict) -> PeriodicGrid:
    if "grid" not in cfg:
        raise ConfigError("grid: missing required field")
    d = cfg["grid"]
    _reject_unknown(d, GRID_KEYS, "grid")
    L = _number(d, "L", "grid", lo=0, lo_open=True)
    N = _number(d, "N", "grid", lo=4, integer=True)
    return PeriodicGrid(L, N)


def _run_options(cfg: dict) -> dict:
    T = _number(cfg, "T", "config", lo=0)
    opts = {
        "T": T,
        "cfl": _number(cfg, "cfl", "config", default=0.5, lo=0, hi=1, lo_open=True),
        "dt_max": _number(cfg, "dt_max", "config", default=1e-2, lo=0, lo_open=True),
        "output_every": _number(cfg, "output_every", "config", default=0, lo=0, integer=True),
    }
    times = cfg.get("output_times", [])
    if not isinstance(times, list) or not all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in times):
        raise ConfigError("config.output_times: must be a list of numbers")
    opts["output_times"] = [float(t) for t in times]
    return opts


def _phases(initial: dict, L: float):
    for key in ("alpha0", "rho0", "u0"):
        if key not in initial:
            raise ConfigError(f"initial.{key}: missing required field")
    a, r = initial["alpha0"], initial["rho0"]
    if not isinstance(a, list) or not isinstance(r, list) or not a or len(a) != len(r):
        raise ConfigError("initial.alpha0: must be a nonempty list matching initial.rho0")
    alpha0 = tuple(_profile(v, f"initial.alpha0[{i}]", L) for i, v in enumerate(a))
    rho0 = tuple(_profile(v, f"initial.rho0[{i}]", L) for i, v in enumerate(r))
    return alpha0, rho0, _profile(initial["u0"], "initial.u0", L)


def load_config(path, command: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _reject_unknown(cfg, ALLOWED[command], "config")
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _manifest(out: Path, command: str, cfg: dict, start: float, **extra) -> None:
    data = {"command": command, "config": cfg, "code_version": __version__,
            "wall_time_s": time.perf_counter() - start}
    data.update(extra)
    write_json(out / "manifest.json", data)


def run_ns(cfg: dict, out: Path, assert_mode: bool = True) -> int:
    start = time.perf_counter()
    laws = _laws(cfg)
    grid = _grid(cfg)
    opts = _run_options(cfg)
    initial = cfg.get("initial")
    if not isinstance(initial, dict):
        raise ConfigError("initial: missing required field")
    _reject_unknown(initial, {"rho0", "u0"}, "initial")
    for key in ("rho0", "u0"):
        if key not in initial:
            raise ConfigError(f"initial.{key}: missing required field")
    rho0 = grid.sample(_profile(initial["rho0"], "initial.rho0", grid.L))
    u0 = _profile(initial["u0"], "initial.u0", grid.L)
    if np.any(rho0.values <= 0):
        raise ConfigError("initial.rho0: density must be strictly positive")

    try:
        horizon = horizon_estimate(rho0, grid.sample(u0), laws).as_dict()
    except ValueError as exc:
        horizon = {"error": str(exc)}

    frames = []

    def on_frame(state, row):
        frames.extend(ns_frame_rows(state, laws))

    try:
        run = ns_run(rho0, u0, laws, opts["T"], output_every=opts["output_every"],
                     output_times=opts["output_times"], cfl=opts["cfl"], dt_max=opts["dt_max"],
                     keep_frames=False, on_frame=on_frame)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "frames.csv", NS_FRAME_HEADER, frames)
    write_csv(out / "diagnostics.csv", NS_DIAG_HEADER,
              [[row[h] for h in NS_DIAG_HEADER] for row in run.diagnostics])

    diag = run.diagnostics
    E0 = diag[0]["kinetic"] + diag[0]["potential"]
    excess = max((d["kinetic"] + d["potential"] + d["dissipation"]) - E0 for d in diag)
    bd = [d["bd_entropy"] for d in diag]
    bd_rise = max([b - a for a, b in zip(bd, bd[1:])], default=0.0)
    first, last = run.diagnostics[0], run.diagnostics[-1]
    summary = {
        "steps": run.steps,
        "energy_excess_relative": excess / max(abs(E0), 1e-300),
        "energy_inequality_holds": excess <= 1e-8 * max(abs(E0), 1e-300),
        "bd_max_rise": bd_rise,
        "mass_drift_relative": abs(run.final.mass() - rho0.grid.dx * float(np.sum(rho0.values)))
        / (rho0.grid.dx * float(np.sum(rho0.values))),
        "min_rho": min(d["min_rho"] for d in diag),
        "max_rho": max(d["max_rho"] for d in diag),
        "final_time": last["t"],
        "initial_time": first["t"],
    }
    _manifest(out, "ns", cfg, start, horizon_estimate=horizon, invariants=summary, failure=run.failure)
    if run.failure:
        print(f"solver failure: {run.failure}", file=sys.stderr)
        return EXIT_SOLVER
    if assert_mode and not (summary["energy_inequality_holds"] and summary["mass_drift_relative"] <= 1e-12):
        print("invariant check failed", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def run_mf(cfg: dict, out: Path, assert_mode: bool = True) -> int:
    start = time.perf_counter()
    laws = _laws(cfg)
    grid = _grid(cfg)
    opts = _run_options(cfg)
    initial = cfg.get("initial")
    if not isinstance(initial, dict):
        raise ConfigError("initial: missing required field")
    _reject_unknown(initial, {"alpha0", "rho0", "u0"}, "initial")
    alpha0, rho0, u0 = _phases(initial, grid.L)
    spec = YoungMeasureSpec(alpha0, rho0, u0, grid.L)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"initial: {exc}") from exc
    state0 = spec.as_state(grid)

    frames = []

    def on_frame(state, row):
        frames.extend(mf_frame_rows(state, laws))

    run = mf_run(state0, laws, opts["T"], output_every=opts["output_every"], output_times=opts["output_times"],
                 cfl=opts["cfl"], dt_max=opts["dt_max"], keep_frames=False, on_frame=on_frame)
    out.mkdir(parents=True, exist_ok=True)
    k = state0.k
    write_csv(out / "frames.csv", mf_frame_header(k), frames)
    head = mf_diag_header(k)
    write_csv(out / "diagnostics.csv", head, [[row[h] for h in head] for row in run.diagnostics])

    m0 = state0.phase_masses()
    m1 = run.final.phase_masses()
    summary = {
        "steps": run.steps,
        "max_step_drift": max(run.step_drifts, default=0.0),
        "max_closure_identity_residual": max(d["closure_identity_residual"] for d in run.diagnostics),
        "phase_mass_drift_relative": [abs(b - a) / a if a > 0 else abs(b) for a, b in zip(m0, m1)],
    }
    ok = (summary["max_step_drift"] <= 1e-10 and summary["max_closure_identity_residual"] <= 1e-12
          and max(summary["phase_mass_drift_relative"]) <= 1e-8)
    summary["invariants_hold"] = ok
    _manifest(out, "mf", cfg, start, invariants=summary, failure=run.failure)
    if run.failure:
        print(f"solver failure: {run.failure}", file=sys.stderr)
        return EXIT_SOLVER
    if assert_mode and not ok:
        print("invariant check failed", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def run_homog(cfg: dict, out: Path, assert_mode: bool = True, threads: int = 1) -> int:
    start = time.perf_counter()
    laws = _laws(cfg)
    L = _number(cfg, "L", "config", default=1.0, lo=0, lo_open=True)
    T = _number(cfg, "T", "config", lo=0)
    cfl = _number(cfg, "cfl", "config", default=0.5, lo=0, hi=1, lo_open=True)
    dt_max = _number(cfg, "dt_max", "config", default=1e-2, lo=0, lo_open=True)
    factor = _number(cfg, "grid_factor", "config", default=32, lo=8, integer=True)
    n_ckpt = _number(cfg, "checkpoints", "config", default=8, lo=0, integer=True)
    C0 = _number(cfg, "C0", "config", default=100.0, lo=1)
    n_list = cfg.get("n_list")
    if not isinstance(n_list, list) or not n_list or not all(isinstance(n, int) and n >= 1 for n in n_list):
        raise ConfigError("config.n_list: must be a nonempty list of positive integers")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("config.n_list: must be strictly increasing")
    N_mf = _number(cfg, "N_mf", "config", lo=4, integer=True) if "N_mf" in cfg else None
    initial = cfg.get("initial")
    if not isinstance(initial, dict):
        raise ConfigError("initial: missing required field")
    _reject_unknown(initial, {"alpha0", "rho0", "u0"}, "initial")
    alpha0, rho0, u0 = _phases(initial, L)
    spec = YoungMeasureSpec(alpha0, rho0, u0, L, C0)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"initial: {exc}") from exc

    probes = default_probes(laws, L)
    labels = [p.label for p in probes]
    assert_probes = cfg.get("assert_probes", [lab for lab in labels if lab.endswith("|1")])
    halving = cfg.get("halving_probes", ["xi|1"])
    for key, vals in (("assert_probes", assert_probes), ("halving_probes", halving)):
        if not isinstance(vals, list) or any(v not in labels for v in vals):
            raise ConfigError(f"config.{key}: must list probe labels from {labels}")

    report_only = not assert_mode or len(n_list) < 3
    if len(n_list) == 1:
        warnings.warn("a single resolution cannot show convergence; report-only", stacklevel=2)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        study = convergence_study(spec, laws, T, n_list, probes,
                                  grid_policy=lambda n, k: factor * n * k, N_mf=N_mf,
                                  n_checkpoints=n_ckpt, cfl=cfl, dt_max=dt_max, workers=max(1, threads))
        report = weak_limit_report(study, assert_probes, halving) if len(n_list) >= 2 else None
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for label in study.probes:
        for n, N, e in zip(study.n_list, study.N_list, study.errors[label]):
            rows.append((label, n, N, e))
    write_csv(out / "errors.csv", ["probe", "n", "N", "error"], rows)
    crow = []
    for label in study.probes:
        for n in study.n_list:
            crow.extend((label, n, t, e) for t, e in study.curves[label][n])
    write_csv(out / "error_curves.csv", ["probe", "n", "t", "error"], crow)
    study_json = {
        "measure": {"alpha0": initial["alpha0"], "rho0": initial["rho0"], "u0": initial["u0"], "L": L},
        "laws": cfg["laws"], "n_list": study.n_list, "N_list": study.N_list, "N_mf": study.N_mf,
        "T": T, "checkpoints": study.checkpoints, "run_hashes": study.run_hashes,
        "errors": study.errors, "failures": study.failures, "horizon_T0": study.horizon_T0,
        "report": report,
    }
    write_json(out / "study.json", study_json)
    passed = bool(report and report["monotone"])
    _manifest(out, "homog", cfg, start, invariants={"monotone": passed, "report_only": report_only},
              failures=study.failures, warnings=[str(w.message) for w in caught])
    if report:
        for row in report["rows"]:
            if row["checked"]:
                e = row["errors"]
                tag = "exact" if row["exact"] else f"{e[0]:.3e} -> {e[-1]:.3e}"
                print(f"{row['probe']:>14}  {tag}  {'PASS' if row['pass'] else 'FAIL'}")
    if study.failures and not report_only:
        return EXIT_SOLVER
    if not report_only and not passed:
        return EXIT_ASSERT
    return EXIT_OK


def run_equiv(cfg: dict, out: Path | None = None, assert_mode: bool = True) -> int:
    start = time.perf_counter()
    samples = _number(cfg, "samples", "config", default=100_000, lo=1, integer=True)
    seed = _number(cfg, "seed", "config", default=1, lo=0, integer=True)
    cmu = _number(cfg, "constant_mu", "config", lo=0, lo_open=True) if cfg.get("constant_mu") is not None else None
    rep = equivalence_check_k2(samples, seed, constant_mu=cmu)
    print(f"samples={rep.samples} relaxation={rep.relaxation:.3e} viscosity={rep.viscosity:.3e} "
          f"pressure={rep.pressure:.3e}"
          + (f" constant_viscosity={rep.constant_viscosity:.3e}" if rep.constant_viscosity is not None else ""))
    print(f"max_abs_difference={rep.max_abs_difference:.3e}")
    ok = rep.max_abs_difference <= EQUIV_TOL
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _manifest(out, "equiv", cfg, start, invariants={"max_abs_difference": rep.max_abs_difference,
                                                      "within_tolerance": ok})
    return EXIT_OK if ok or not assert_mode else EXIT_ASSERT


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mflab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("ns", "fine-scale run"), ("mf", "multifluid run"),
                           ("homog", "homogenization convergence study"),
                           ("equiv", "two-phase closure equivalence check")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=name != "equiv", help="JSON run configuration")
        p.add_argument("--output", default=None, help="artifact directory")
        mode = p.add_mutually_exclusive_group()
        mode.add_argument("--assert", dest="assert_mode", action="store_true", default=True,
                          help="exit 4 when a checked invariant fails (default)")
        mode.add_argument("--report-only", dest="assert_mode", action="store_false",
                          help="always exit 0 after a completed run")
        p.add_argument("--threads", type=int, default=1, help="parallel member runs (homog)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command) if args.config else {}
        if args.command == "equiv":
            return run_equiv(cfg, Path(args.output) if args.output else None, args.assert_mode)
        out = Path(args.output or f"runs/{args.command}")
        if args.command == "ns":
            return run_ns(cfg, out, args.assert_mode)
        if args.command == "mf":
            return run_mf(cfg, out, args.assert_mode)
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        return run_homog(cfg, out, args.assert_mode, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
