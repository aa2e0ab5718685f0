"""Command-line entry point: ``userlearn {ingest,nonstat,eval,simulate,report}``.

Exit codes: 0 success, 1 data or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Any, Sequence

import matplotlib
import numpy as np
import scipy
import yaml

from userlearn import __version__
from userlearn.core import LogFormatError, Study, UsageError, UserlearnError
from userlearn.environments import (
    DEFAULT_COARSE_THRESHOLD,
    build_traces,
    load_consolidation,
    load_ground_truth,
)
from userlearn.evaluation import (
    DEFAULT_ALGORITHMS,
    REPORT_COLUMNS,
    WORKERS_ENV,
    EvalPlan,
    EvalReport,
    default_workers,
    emit_report,
    run_eval,
)
from userlearn.ingest import LogFile, parse_log, validate_session, write_sessions
from userlearn.plotting import plot_pvalues, plot_threshold_curves
from userlearn.sim import SimScenario, simulate
from userlearn.stats import BATTERY_COLUMNS, DEFAULT_SPLIT, DEFAULT_WINDOW, nonstationarity_battery

log = logging.getLogger("userlearn")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


# --- shared helpers ------------------------------------------------------------

def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, seed: int | None, config: dict,
                   inputs: Sequence[Path] = ()) -> Path:
    """Record what produced the outputs; contains no timestamps."""
    config = dict(config, inputs={str(p): _digest(Path(p)) for p in inputs})
    canonical = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "seed": seed,
        "config": json.loads(canonical),
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "versions": {
            "userlearn": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
            "pyyaml": yaml.__version__,
        },
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_sessions(args):
    sessions = []
    for p in args.input:
        fmt = args.format if args.command == "ingest" else None
        sessions += parse_log(LogFile.infer(p, fmt, args.study))
    return sessions


def _study(args, sessions) -> Study:
    if args.study:
        study = Study(args.study)
    else:
        studies = {s.study for s in sessions}
        if len(studies) != 1:
            raise UsageError("sessions mix several studies; pass --study")
        study = studies.pop()
    if study == Study.SYNTHETIC:
        raise UsageError("study 'synthetic' has no formalization; pass --study")
    return study


def _traces(args, sessions):
    study = _study(args, sessions)
    consolidation = load_consolidation(args.consolidation) if args.consolidation else None
    truth = load_ground_truth(args.truth) if args.truth else None
    arms = [a.strip() for a in args.arms.split(",")] if args.arms else None
    return build_traces(sessions, study, coarse_threshold=args.coarse_threshold, arms=arms,
                        consolidation=consolidation, truth=truth)


def _write_rows(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _input_paths(args) -> list[Path]:
    return [Path(p) for p in args.input]


# --- commands --------------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = _out_dir(args)
    try:
        sessions = _load_sessions(args)
    except LogFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    diagnostics = [d for s in sessions for d in validate_session(s, args.max_zoom)]
    write_sessions(sessions, out / "sessions.jsonl", "jsonl")
    _write_rows(out / "validation.csv", ("session_id", "index", "message"),
                [{"session_id": d.session_id, "index": "" if d.index is None else d.index,
                  "message": d.message} for d in diagnostics])
    write_manifest(out, "ingest", args.seed, {"study": args.study, "format": args.format,
                                              "max_zoom": args.max_zoom}, _input_paths(args))
    for d in diagnostics:
        print(f"invalid: {d}", file=sys.stderr)
    print(f"{len(sessions)} sessions, {len(diagnostics)} errors")
    return EXIT_OK if not diagnostics else EXIT_DATA


def cmd_nonstat(args) -> int:
    out = _out_dir(args)
    sessions = _load_sessions(args)
    traces = _traces(args, sessions)
    targets = [t.strip() for t in args.targets.split(",")] if args.targets else None
    rows, diagnostics = nonstationarity_battery(traces, args.test, args.battery, args.split,
                                                args.window, targets)
    for d in diagnostics:
        print(f"skipped: {d}", file=sys.stderr)
    _write_rows(out / "nonstat.csv", BATTERY_COLUMNS, rows)
    write_manifest(out, "nonstat", args.seed,
                   {"study": _study(args, sessions).value, "test": args.test, "battery": args.battery,
                    "split": args.split, "window": args.window, "targets": targets,
                    "coarse_threshold": args.coarse_threshold, "arms": args.arms},
                   _input_paths(args) + _aux_paths(args))
    significant = sum(r["p_value"] < 0.05 for r in rows)
    print(f"{len(rows)} tests, {significant} with p < 0.05")
    return EXIT_OK if rows else EXIT_DATA


def _aux_paths(args) -> list[Path]:
    return [Path(p) for p in (args.consolidation, args.truth) if p]


def cmd_eval(args) -> int:
    out = _out_dir(args)
    sessions = _load_sessions(args)
    traces = _traces(args, sessions)
    if not traces:
        print("error: no sessions to evaluate", file=sys.stderr)
        return EXIT_DATA
    algs = [a.strip() for a in args.algs.split(",")] if args.algs else None
    if args.plan:
        plan = EvalPlan.from_file(args.plan, algorithms=algs, seed=args.seed)
    else:
        plan = EvalPlan(algorithms=algs or DEFAULT_ALGORITHMS[traces[0].kind],
                        seed=0 if args.seed is None else args.seed)
    report = run_eval(traces, plan, args.workers)
    for d in report.diagnostics:
        print(f"skipped: {d}", file=sys.stderr)
    if not report.rows:
        print("error: every evaluation cell was skipped", file=sys.stderr)
        return EXIT_DATA
    fmt = args.format if args.format in ("csv", "json") else "csv"
    emit_report(report, out, fmt)
    write_manifest(out, "eval", plan.seed,
                   {"plan": plan.to_mapping(), "study": _study(args, sessions).value, "format": fmt,
                    "coarse_threshold": args.coarse_threshold, "arms": args.arms},
                   _input_paths(args) + _aux_paths(args) + ([Path(args.plan)] if args.plan else []))
    print(f"{len(report.rows)} cells evaluated, {len(report.diagnostics)} skipped")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    overrides = {"seed": args.seed, "users": args.users, "horizon": args.horizon}
    if args.scenario:
        scenario = SimScenario.from_file(args.scenario, kind=args.kind, **overrides)
    elif args.kind:
        scenario = SimScenario.from_mapping({"kind": args.kind}, **overrides)
    else:
        raise UsageError("simulate needs --scenario or --kind")
    sessions = simulate(scenario)
    fmt = args.format if args.format in ("jsonl", "csv") else "jsonl"
    write_sessions(sessions, out / f"sessions.{fmt}", fmt)
    if scenario.kind == "tableau_synthetic":
        truth = {k: sorted(v) for k, v in scenario.ground_truth().items()}
        (out / "ground_truth.json").write_text(json.dumps(truth, indent=1) + "\n", encoding="utf-8")
        (out / "consolidation.json").write_text(
            json.dumps(scenario.consolidation(), indent=1) + "\n", encoding="utf-8")
    write_manifest(out, "simulate", scenario.seed, {"scenario": scenario.to_mapping(), "format": fmt},
                   [Path(args.scenario)] if args.scenario else [])
    print(f"{len(sessions)} sessions x {scenario.horizon} events")
    return EXIT_OK


def _read_table(path: Path) -> tuple[str, Any]:
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return "eval", EvalReport()
    if path.suffix.lower() == ".json":
        return "eval", EvalReport.from_json(text)
    header = text.split("\n", 1)[0].strip().split(",")
    if tuple(header) == REPORT_COLUMNS:
        return "eval", EvalReport.from_csv(text)
    if tuple(header) == BATTERY_COLUMNS:
        rows = list(csv.DictReader(io.StringIO(text)))
        for r in rows:
            r["p_value"] = float(r["p_value"])
        return "nonstat", rows
    raise UsageError(f"{path}: not an evaluation report or test table")


def cmd_report(args) -> int:
    out = _out_dir(args)
    merged: dict[tuple, Any] = {}
    tests: list[dict] = []
    for p in _input_paths(args):
        kind, table = _read_table(p)
        if kind == "nonstat":
            tests += table
            continue
        for row in table.rows:
            key = (row.algorithm, row.user, row.threshold, row.metric)
            if key in merged and merged[key] != row:
                print(f"error: conflicting rows for {key} in {p}", file=sys.stderr)
                return EXIT_DATA
            merged[key] = row
    if not merged and not tests:
        print("error: no rows in the given inputs", file=sys.stderr)
        return EXIT_DATA
    if merged:
        report = EvalReport([merged[k] for k in sorted(merged)])
        emit_report(report, out, "csv")
        aggregates = report.aggregates()
        _write_rows(out / "plot_data.csv", ("series", "metric", "x", "y", "n"),
                    [{"series": a["algorithm"], "metric": a["metric"], "x": a["threshold"],
                      "y": a["mean"], "n": a["n_users"]} for a in aggregates])
        plot_threshold_curves(aggregates, out / "threshold_curves.png")
    if tests:
        _write_rows(out / "pvalue_plot_data.csv", ("group", "unit", "target", "test", "p_value"), tests)
        plot_pvalues(tests, out / "pvalues.png")
    write_manifest(out, "report", None, {}, _input_paths(args))
    print(f"{len(merged)} report rows, {len(tests)} test rows")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------

def _add_mapping_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--study", choices=[s.value for s in Study if s != Study.SYNTHETIC],
                   help="formalization to use (default: the study recorded in the log)")
    p.add_argument("--coarse-threshold", type=int, default=DEFAULT_COARSE_THRESHOLD,
                   help="highest zoom level counted as coarse for ForeCache stages")
    p.add_argument("--arms", help="comma-separated imMens arm set (default: union over sessions)")
    p.add_argument("--consolidation", help="Tableau attribute consolidation map file")
    p.add_argument("--truth", help="Tableau ground-truth file mapping tasks to attributes")


class _DefaultsFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # skip flags without a default and help strings that already describe theirs
    def _get_help_string(self, action):
        text = action.help or ""
        if action.default is None or "default:" in text:
            return text
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _DefaultsFormatter
    parser = argparse.ArgumentParser(prog="userlearn", formatter_class=fmt,
                                     description="Model analysts' interaction logs with online learners.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", formatter_class=fmt, help="parse and validate interaction logs")
    p.add_argument("--input", nargs="+", required=True, help="log files (.jsonl or .csv)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--study", choices=[s.value for s in Study], help="study for records lacking one")
    p.add_argument("--format", choices=["jsonl", "csv"], help="input format (default: by suffix)")
    p.add_argument("--max-zoom", type=int, default=6, help="highest valid ForeCache zoom level")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("nonstat", formatter_class=fmt, help="non-stationarity test batteries")
    p.add_argument("--input", nargs="+", required=True, help="session logs")
    p.add_argument("--out", required=True, help="output directory")
    _add_mapping_flags(p)
    p.add_argument("--test", choices=["wilcoxon", "mannwhitney"], default="wilcoxon")
    p.add_argument("--battery", choices=["cohort", "user"],
                   help="cohort pairs users, user compares windows within a session "
                        "(default: cohort for wilcoxon, user for mannwhitney)")
    p.add_argument("--split", type=float, default=DEFAULT_SPLIT, help="session split fraction")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="moving-average window")
    p.add_argument("--targets", help="comma-separated labels to test (default: all observed)")
    p.add_argument("--format", choices=["csv"], default="csv", help="output format")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest")
    p.set_defaults(func=cmd_nonstat)

    p = sub.add_parser("eval", formatter_class=fmt, help="thresholded next-action prediction")
    p.add_argument("--input", nargs="+", required=True, help="session logs")
    p.add_argument("--out", required=True, help="output directory")
    _add_mapping_flags(p)
    p.add_argument("--plan", help="evaluation plan (JSON or YAML)")
    p.add_argument("--algs", help="comma-separated algorithms (overrides the plan)")
    p.add_argument("--seed", type=int, default=None, help="overrides the plan seed (plan default 0)")
    p.add_argument("--format", choices=["csv", "json"], default="csv", help="report format")
    p.add_argument("--workers", type=int, default=default_workers(),
                   help=f"worker processes (env {WORKERS_ENV})")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", formatter_class=fmt, help="generate synthetic session logs")
    p.add_argument("--scenario", help="scenario file (JSON or YAML)")
    p.add_argument("--kind", help="scenario kind when no file is given, or override")
    p.add_argument("--users", type=int, help="population size override")
    p.add_argument("--horizon", type=int, help="events per session override")
    p.add_argument("--seed", type=int, help="seed override (scenario default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl", help="log format")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", formatter_class=fmt, help="merge reports into plot-ready tables")
    p.add_argument("--input", nargs="+", required=True, help="report.csv/json or nonstat.csv files")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UserlearnError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
