"""``vspline`` command line: fit, cv, simulate, benchmark, reconstruct, eval.

Exit status is 0 on success, 1 when a computation fails and 2 for usage
errors (bad flags, missing columns, malformed input files).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .core import (FittedVSpline, ObservationSet, SampledTrajectory, TimeGrid, VSplineError,
                   sample_columns, sample_spline)
from .geo import (DEDUPE_POLICIES, TrackFormatError, parse_track, project, reconstruct_track,
                  track_geojson, write_fitted_track_csv, write_geojson)
from .penalty import FAMILIES, PenaltySpec, interval_lambdas, write_penalties_csv
from .selection import (DEFAULT_GAMMA_GRID, DEFAULT_PARAMETER_GRID, SearchSpec, cv_oracle,
                        cv_score, select_parameters, write_trace_csv)
from .signals import (BENCHMARK_COLUMNS, METHODS, SIGNALS, canonical_method, run_benchmark,
                      simulate, summarize)
from .solver import fit, objective_terms
from .tabular import csv_text, read_csv, write_csv

log = logging.getLogger("vspline")


class UsageError(VSplineError):
    """Invalid invocation or input file; maps to exit status 2."""


# ---- argument helpers -------------------------------------------------------

def parse_grid(text: str) -> tuple:
    """``"0.1,1,10"`` or ``"log:-3:3:13"`` (log10 start, stop, count)."""
    text = text.strip()
    try:
        if text.startswith("log:"):
            start, stop, num = text[4:].split(":")
            return tuple(np.logspace(float(start), float(stop), int(num)))
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def load_observations(path, boom_column: str | None = None):
    """Read ``t,y,v`` (1-D) or ``t,y_<k>,v_<k>`` pairs (d-D) from a CSV.

    Extra columns are ignored. Returns ``(obs, coordinate names, boom)``
    where ``boom`` is per interval (left endpoint) or ``None``.
    """
    try:
        header, rows = read_csv(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None
    if "t" not in header:
        raise UsageError(f"{path}: missing column 't'")
    if "y" in header:
        names = [None]
    else:
        names = [h[2:] for h in header if h.startswith("y_")]
        if not names:
            raise UsageError(f"{path}: missing column 'y' (or y_<name> columns)")
    ycols = ["y" if k is None else f"y_{k}" for k in names]
    vcols = ["v" if k is None else f"v_{k}" for k in names]
    for col in vcols:
        if col not in header:
            raise UsageError(f"{path}: missing column '{col}' (velocities are required)")
    if not rows:
        raise UsageError(f"{path}: no data rows")
    wanted = ["t"] + ycols + vcols + ([boom_column] if boom_column else [])
    if boom_column and boom_column not in header:
        raise UsageError(f"{path}: missing column '{boom_column}'")
    idx = [header.index(c) for c in wanted]
    data = np.empty((len(rows), len(idx)))
    for r, (line, cells) in enumerate(rows):
        for c, j in enumerate(idx):
            try:
                data[r, c] = float(cells[j])
            except (IndexError, ValueError):
                raise UsageError(f"{path}: line {line}: bad value for column '{wanted[c]}'") from None
    d = len(names)
    try:
        obs = ObservationSet(TimeGrid(data[:, 0]), data[:, 1:1 + d], data[:, 1 + d:1 + 2 * d])
    except VSplineError as exc:
        raise UsageError(f"{path}: {exc}") from None
    boom = None
    if boom_column:
        flags = data[:-1, -1]
        if not np.all((flags == 0) | (flags == 1)):
            raise UsageError(f"{path}: column '{boom_column}' must hold 0 or 1")
        boom = flags.astype(np.int64)
    return obs, [k or "f" for k in names], boom


def _penalty_from_args(args) -> PenaltySpec:
    try:
        return _parse_penalty(args)
    except UsageError:
        raise
    except VSplineError as exc:
        raise UsageError(str(exc)) from None


def _parse_penalty(args) -> PenaltySpec:
    if args.penalty:
        text = args.penalty
        if Path(text).is_file():
            text = Path(text).read_text()
        try:
            return PenaltySpec.from_json(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--penalty is not valid JSON: {exc.msg}") from None
    if args.family is None or args.params is None:
        raise UsageError("give --penalty JSON, or --family together with --params")
    return PenaltySpec.from_values(args.family, _floats(args.params))


def _search_from_args(args, family: str) -> SearchSpec:
    gammas = parse_grid(args.gamma_grid) if args.gamma_grid else DEFAULT_GAMMA_GRID
    params = parse_grid(args.param_grid) if args.param_grid else DEFAULT_PARAMETER_GRID
    try:
        return SearchSpec(family, gammas, params, refine=args.refine)
    except VSplineError as exc:
        raise UsageError(str(exc)) from None


def _out(args, name: str) -> Path:
    return Path(args.output_dir) / name


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def _write_samples(path: Path, spline: FittedVSpline, resolution: int, names) -> None:
    header, table = sample_columns(sample_spline(spline, resolution), names)
    write_csv(path, header, table)


def _print(doc) -> None:
    print(json.dumps(doc, indent=2))


# ---- subcommands ------------------------------------------------------------

def cmd_fit(args) -> int:
    spec = _penalty_from_args(args)
    obs, names, boom = load_observations(args.input, args.boom_column)
    if spec.is_boom and boom is None:
        raise UsageError(f"family {spec.family!r} needs --boom-column")
    lambdas = interval_lambdas(spec, obs, boom if spec.is_boom else None)
    spline = fit(obs, args.gamma, lambdas)
    (_out(args, "spline.json")).write_text(spline.to_json() + "\n")
    _write_samples(_out(args, "samples.csv"), spline, args.resolution, names)
    terms = objective_terms(obs, spline)
    _print({"objective": terms["total"], "position_term": terms["position"],
            "velocity_term": terms["velocity"], "penalty_term": terms["penalty"],
            "gamma": args.gamma, "penalty": spec.to_dict()})
    return 0


def cmd_cv(args) -> int:
    obs, names, boom = load_observations(args.input, args.boom_column)
    spec = _search_from_args(args, args.family)
    if spec.family.startswith("boom_") and boom is None:
        raise UsageError(f"family {spec.family!r} needs --boom-column")
    boom = boom if spec.family.startswith("boom_") else None
    sel = select_parameters(obs, spec, boom=boom, jobs=args.jobs)
    write_trace_csv(_out(args, "cv_trace.csv"), sel, spec.family)
    doc = sel.to_dict()
    lambdas = interval_lambdas(sel.penalty, obs, boom)
    if args.oracle:
        fast = cv_score(obs, sel.gamma, lambdas)
        slow = cv_oracle(obs, sel.gamma, lambdas)
        ok = np.isfinite(fast.per_point_terms)
        gap = np.abs(fast.per_point_terms[ok] - slow.per_point_terms[ok])
        scale = np.maximum(np.abs(slow.per_point_terms[ok]), np.finfo(float).tiny)
        doc["oracle"] = {"cv_score": fast.value, "oracle_score": slow.value,
                         "max_relative_gap": float(np.max(gap / scale)) if gap.size else 0.0,
                         "score_relative_gap": abs(fast.value - slow.value) / abs(slow.value)}
    if args.refit:
        spline = fit(obs, sel.gamma, lambdas)
        (_out(args, "spline.json")).write_text(spline.to_json() + "\n")
        _write_samples(_out(args, "samples.csv"), spline, args.resolution, names)
    _write_json(_out(args, "best.json"), doc)
    _print(doc)
    return 0


def _snr(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("snr must be positive")
    return value


def cmd_simulate(args) -> int:
    sim = simulate(args.signal, args.n, args.snr, args.seed, args.sampling, args.k, args.scale)
    rows = np.column_stack([sim.grid.times, sim.true_g, sim.true_f, sim.y, sim.v])
    path = _out(args, args.output)
    write_csv(path, ["t", "g_true", "f_true", "y", "v"], rows)
    print(f"wrote {sim.n} rows to {path}")
    return 0


def cmd_benchmark(args) -> int:
    signals = [_signal(s) for s in _names(args.signals)]
    try:
        methods = [canonical_method(m) for m in _names(args.methods)]
    except VSplineError as exc:
        raise UsageError(str(exc)) from None
    snrs = _floats(args.snr)
    seeds = range(args.seed, args.seed + args.seeds)
    search = {"refine": args.refine}
    if args.gamma_grid:
        search["gamma_grid"] = parse_grid(args.gamma_grid)
    if args.param_grid:
        search["parameter_grid"] = parse_grid(args.param_grid)
    rows = run_benchmark(signals, snrs, methods, seeds, n=args.n, sampling=args.sampling,
                         k=args.k, scale=args.scale, jobs=args.jobs, **search)
    write_csv(_out(args, "benchmark.csv"), list(BENCHMARK_COLUMNS),
              [[getattr(r, c) for c in BENCHMARK_COLUMNS] for r in rows])
    summary = summarize(rows)
    cols = ["signal", "snr", "method", "mean_tmse", "mean_retrieved_snr", "cells"]
    write_csv(_out(args, "benchmark_summary.csv"), cols, [[s[c] for c in cols] for s in summary])
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"cell {r.signal}/{r.snr}/{r.method}/seed {r.seed} failed: {r.error}",
              file=sys.stderr)
    print(f"wrote {len(rows)} rows ({len(failed)} failed)")
    return 1 if len(failed) == len(rows) else 0


def _signal(name: str) -> str:
    for s in SIGNALS:
        if s.lower() == name.lower():
            return s
    raise UsageError(f"unknown signal {name!r}; expected one of {', '.join(SIGNALS)}")


def cmd_reconstruct(args) -> int:
    try:
        records = parse_track(args.input, args.columns, args.dedupe)
    except TrackFormatError as exc:
        raise UsageError(str(exc)) from None
    reference = tuple(_floats(args.reference)) if args.reference else None
    if reference is not None and len(reference) != 2:
        raise UsageError("--reference takes lon,lat")
    track = project(records, reference)
    if args.family.startswith("boom_") and track.boom is None:
        raise UsageError(f"family {args.family!r} needs a boom column in the track file")
    result = reconstruct_track(track, _search_from_args(args, args.family), jobs=args.jobs)
    write_geojson(_out(args, "track.geojson"),
                  track_geojson(result.spline, result.reference, args.resolution))
    write_fitted_track_csv(_out(args, "track.csv"), result.spline, args.resolution)
    write_penalties_csv(_out(args, "penalties.csv"), track.grid, result.lambdas)
    write_trace_csv(_out(args, "cv_trace.csv"), result.selection, args.family)
    (_out(args, "spline.json")).write_text(result.spline.to_json() + "\n")
    doc = {**result.selection.to_dict(), "reference": list(result.reference),
           "records": track.n}
    _write_json(_out(args, "params.json"), doc)
    _print(doc)
    return 0


def cmd_eval(args) -> int:
    try:
        spline = FittedVSpline.from_json(Path(args.spline).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {args.spline}: {exc.strerror or exc}") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"{args.spline} is not a fitted spline document: {exc}") from None
    chosen = [x is not None and x is not False for x in (args.times, args.at_knots, args.resolution)]
    if sum(chosen) != 1:
        raise UsageError("give exactly one of --times, --at-knots, --resolution")
    if args.resolution is not None:
        samples = sample_spline(spline, args.resolution)
    else:
        t = spline.grid.times if args.at_knots else _times(args.times)
        samples = SampledTrajectory(t, spline(t, 0), spline(t, 1), spline(t, 2))
    names = [str(k) for k in range(spline.dims)] if spline.dims > 1 else None
    header, table = sample_columns(samples, names)
    if args.output == "-":
        sys.stdout.write(csv_text(header, table))
    else:
        write_csv(_out(args, args.output), header, table)
    return 0


def _times(text: str) -> np.ndarray:
    if Path(text).is_file():
        header, rows = read_csv(text)
        if "t" not in header:
            raise UsageError(f"{text}: missing column 't'")
        j = header.index("t")
        try:
            return np.array([float(cells[j]) for _, cells in rows])
        except (IndexError, ValueError):
            raise UsageError(f"{text}: bad value in column 't'") from None
    values = np.array(_floats(text))
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise UsageError("--times needs finite values")
    return values


# ---- parser -----------------------------------------------------------------

def _global_flags(parser, suppress: bool):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0),
                        help="random seed (default 0)")
    parser.add_argument("--jobs", type=int, default=default(1),
                        help="worker threads for searches and benchmarks")
    parser.add_argument("--output-dir", default=default("."),
                        help="directory for output files (created if missing)")
    parser.add_argument("-v", "--verbose", action="count", default=default(0))


def _search_flags(p, refine_default: bool = False):
    p.add_argument("--gamma-grid", help="comma list or log:START:STOP:NUM (log10)")
    p.add_argument("--param-grid", help="comma list or log:START:STOP:NUM (log10)")
    p.add_argument("--refine", action=argparse.BooleanOptionalAction, default=refine_default,
                   help="Nelder-Mead polish of the best grid point")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vspline", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("fit", parents=[common], help="fit with given gamma and penalty")
    p.add_argument("--input", required=True, help="CSV with t,y,v or t,y_<k>,v_<k> columns")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--penalty", help='JSON such as {"family": "adaptive", "eta": 0.1}, or a file')
    p.add_argument("--family", choices=sorted(FAMILIES))
    p.add_argument("--params", help="comma-separated family parameters")
    p.add_argument("--boom-column", help="0/1 column for boom_* families")
    p.add_argument("--resolution", type=int, default=200)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", parents=[common], help="select gamma and penalty by cross-validation")
    p.add_argument("--input", required=True)
    p.add_argument("--family", choices=sorted(FAMILIES), default="adaptive")
    _search_flags(p)
    p.add_argument("--boom-column")
    p.add_argument("--oracle", action="store_true",
                   help="cross-check the closed-form score against leave-one-out refits")
    p.add_argument("--refit", action="store_true", help="also write the selected spline")
    p.add_argument("--resolution", type=int, default=200)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", parents=[common], help="simulate a test trajectory")
    p.add_argument("--signal", required=True, type=_signal_arg)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--snr", type=_snr, default=7.0, help="target SNR; 'inf' disables noise")
    p.add_argument("--sampling", choices=("full", "regular", "irregular"), default="full")
    p.add_argument("--k", type=int, help="kept samples for irregular sampling")
    p.add_argument("--scale", type=float, help="multiply the velocity signal")
    p.add_argument("--output", default="simulation.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", parents=[common], help="TMSE / retrieved SNR table")
    p.add_argument("--signals", default=",".join(SIGNALS))
    p.add_argument("--snr", default="3,7", help="comma-separated SNR values")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--seeds", type=int, default=1, help="number of seeds, counting up from --seed")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--sampling", choices=("full", "regular", "irregular"), default="full")
    p.add_argument("--k", type=int)
    p.add_argument("--scale", type=float)
    _search_flags(p, refine_default=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct a GPS track")
    p.add_argument("--input", required=True)
    p.add_argument("--columns", help="field=column mapping, e.g. timestamp=time,lon=x")
    p.add_argument("--dedupe", choices=DEDUPE_POLICIES, default="reject")
    p.add_argument("--family", choices=sorted(FAMILIES), default="adaptive")
    p.add_argument("--reference", help="projection origin lon,lat (default: first fix)")
    p.add_argument("--resolution", type=int, default=1000)
    _search_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", parents=[common], help="evaluate a fitted spline")
    p.add_argument("--spline", required=True)
    p.add_argument("--times", help="comma-separated times or a CSV with a t column")
    p.add_argument("--at-knots", action="store_true")
    p.add_argument("--resolution", type=int)
    p.add_argument("--output", default="eval.csv", help="file name, or - for stdout")
    p.set_defaults(func=cmd_eval)
    return parser


def _signal_arg(text: str) -> str:
    try:
        return _signal(text)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    for flag in ("resolution",):
        value = getattr(args, flag, None)
        if value is not None and value < 2:
            parser.error(f"--{flag} must be at least 2")
    try:
        Path(args.output_dir).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"vspline: error: cannot create output directory: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"vspline {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (VSplineError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"vspline {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head); exit quietly
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1
    except OSError as exc:
        print(f"vspline {args.command}: I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
