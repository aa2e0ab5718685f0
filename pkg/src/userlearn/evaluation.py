"""Thresholded next-action prediction protocol.

For each (trace, algorithm, threshold) cell the first ceil(threshold * T)
steps are used to pick hyperparameters by teacher-forced accuracy and to
train a fresh learner; the remaining steps are then predicted one at a time,
each scored before the learner is allowed to observe it.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from userlearn.core import Step, UsageError, make_rng
from userlearn.environments import Trace
from userlearn.learners import DEFAULT_GRIDS, LEARNERS, Learner, LearnerConfig, make_learner

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
REPORT_COLUMNS = ("algorithm", "user", "threshold", "metric", "value", "hyperparameters")
AGGREGATE_COLUMNS = ("algorithm", "threshold", "metric", "mean", "n_users")
WORKERS_ENV = "USERLEARN_WORKERS"
MIN_TRACE = 3

DEFAULT_ALGORITHMS = {
    "mdp": ("random", "wsls", "greedy", "qlearning", "sarsa", "reinforce", "actor_critic"),
    "bandit": ("random", "wsls", "greedy", "epsilon_greedy", "epsilon_greedy_decay",
               "adaptive_epsilon_greedy", "mortal_budgeted", "mortal_timed", "contextual"),
    "cmab": ("random", "wsls", "greedy", "roth_erev", "bush_mosteller", "epsilon_greedy",
             "adaptive_epsilon_greedy", "combinatorial"),
}


def accuracy(hits: int, total: int) -> float:
    if total <= 0:
        raise UsageError("accuracy over zero predictions")
    return hits / total


def recall_at_k(predicted: Sequence, actual: Sequence) -> float:
    actual = set(actual)
    if not actual:
        raise UsageError("recall against an empty target set")
    return len(set(predicted) & actual) / len(actual)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class EvalPlan:
    algorithms: tuple[str, ...]
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    grid: Mapping[str, Mapping[str, Sequence]] = field(default_factory=dict)
    k: int | None = None
    online_update_in_test: bool = True
    seed: int = 0

    KEYS = ("algorithms", "thresholds", "grid", "k", "online_update_in_test", "seed")

    def __post_init__(self):
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if not self.algorithms:
            raise UsageError("algorithms: at least one algorithm is required")
        for alg in self.algorithms:
            if alg not in LEARNERS:
                raise UsageError(f"algorithms: unknown algorithm {alg!r}")
        if not self.thresholds:
            raise UsageError("thresholds: at least one threshold is required")
        for i, t in enumerate(self.thresholds):
            if not 0.0 < t < 1.0:
                raise UsageError(f"thresholds[{i}]: {t} outside (0, 1)")
        for alg, params in self.grid.items():
            if alg not in LEARNERS:
                raise UsageError(f"grid.{alg}: unknown algorithm")
            if not isinstance(params, Mapping):
                raise UsageError(f"grid.{alg}: expected a mapping of hyperparameter lists")
            for name, values in params.items():
                if isinstance(values, (str, bytes)) or not isinstance(values, Sequence) or not values:
                    raise UsageError(f"grid.{alg}.{name}: expected a non-empty list")
            try:
                for point in self._points(params):
                    LearnerConfig().replace(**point)
            except UsageError as exc:
                raise UsageError(f"grid.{alg}: {exc}") from None
        if self.k is not None and self.k < 1:
            raise UsageError("k: must be a positive integer")

    @staticmethod
    def _points(params: Mapping[str, Sequence]) -> list[dict]:
        names = list(params)
        return [dict(zip(names, combo)) for combo in itertools.product(*(params[n] for n in names))]

    def grid_for(self, algorithm: str) -> list[dict]:
        params = self.grid.get(algorithm, DEFAULT_GRIDS.get(algorithm, {}))
        return self._points(params)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], **overrides) -> "EvalPlan":
        if not isinstance(data, Mapping):
            raise UsageError("plan: expected a mapping at the top level")
        unknown = set(data) - set(cls.KEYS)
        if unknown:
            raise UsageError(f"plan: unknown keys {sorted(unknown)}")
        kwargs = dict(data)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        if "algorithms" not in kwargs:
            raise UsageError("algorithms: missing")
        for key, kind in (("algorithms", list), ("thresholds", list), ("grid", dict)):
            if key in kwargs and not isinstance(kwargs[key], (kind, tuple)):
                raise UsageError(f"{key}: expected a {kind.__name__}")
        if "seed" in kwargs and not isinstance(kwargs["seed"], int):
            raise UsageError("seed: expected an integer")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "EvalPlan":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
            data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
        except (OSError, json.JSONDecodeError, yaml.YAMLError) as exc:
            raise UsageError(f"plan {path}: {exc}") from None
        return cls.from_mapping(data or {}, **overrides)

    def to_mapping(self) -> dict:
        return {
            "algorithms": list(self.algorithms),
            "thresholds": list(self.thresholds),
            "grid": {a: {n: list(v) for n, v in p.items()} for a, p in self.grid.items()},
            "k": self.k,
            "online_update_in_test": self.online_update_in_test,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class EvalRow:
    algorithm: str
    user: str
    threshold: float
    metric: str
    value: float
    hyperparameters: str


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    def aggregates(self) -> list[dict]:
        cells: dict[tuple, list[float]] = defaultdict(list)
        for r in self.rows:
            cells[(r.algorithm, r.threshold, r.metric)].append(r.value)
        return [
            {"algorithm": a, "threshold": t, "metric": m, "mean": float(np.mean(v)), "n_users": len(v)}
            for (a, t, m), v in sorted(cells.items())
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.algorithm, r.user, _num(r.threshold), r.metric, _num(r.value),
                        r.hyperparameters])
        return buf.getvalue()

    def aggregate_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for a in self.aggregates():
            w.writerow([a["algorithm"], _num(a["threshold"]), a["metric"], _num(a["mean"]), a["n_users"]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows],
                           "aggregates": self.aggregates(),
                           "diagnostics": self.diagnostics}, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        data = json.loads(text)
        return cls([EvalRow(**r) for r in data["rows"]], list(data.get("diagnostics", [])))

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise UsageError(f"report CSV header must be {','.join(REPORT_COLUMNS)}")
        rows = [EvalRow(r["algorithm"], r["user"], float(r["threshold"]), r["metric"],
                        float(r["value"]), r["hyperparameters"]) for r in reader]
        return cls(rows)


def _num(v: float) -> str:
    return repr(float(v))


def format_hyperparameters(params: Mapping[str, Any]) -> str:
    return ";".join(f"{k}={params[k]}" for k in sorted(params))


def emit_report(report: EvalReport, out_dir: str | Path, fmt: str = "csv") -> dict[str, Path]:
    if not report.rows:
        raise UsageError("refusing to write an empty report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        main = out_dir / "report.csv"
        main.write_text(report.to_csv(), encoding="utf-8")
    elif fmt == "json":
        main = out_dir / "report.json"
        main.write_text(report.to_json(), encoding="utf-8")
    else:
        raise UsageError(f"unsupported report format {fmt!r}")
    agg = out_dir / "aggregate.csv"
    agg.write_text(report.aggregate_csv(), encoding="utf-8")
    return {"report": main, "aggregate": agg}


# --- protocol ----------------------------------------------------------------

def _metric_name(space, k: int) -> str:
    return f"recall@{k}" if space.kind == "subset" else "accuracy"


def walk(learner: Learner, steps: Sequence[Step], k: int, *, score: bool = True,
         update: bool = True, seed: int = 0, offset: int = 0) -> list[float]:
    """Predict-then-observe over ``steps``; returns one score per scored step.

    Each prediction uses a generator derived from (seed, step position), so
    results do not depend on how many random draws earlier steps consumed.
    """
    scores: list[float] = []
    observed_before = learner.t
    for i, step in enumerate(steps):
        if score:
            # the step being scored must not have been observed yet
            assert learner.t == observed_before + (i if update else 0)
            rng = make_rng([seed, 2, offset + i])
            pred = learner.predict(k, state=step.state, context=step.context, rng=rng)
            if learner.space.kind == "subset":
                if step.items:
                    scores.append(recall_at_k(pred.ids, step.items))
            else:
                scores.append(1.0 if step.action in pred.ids else 0.0)
        if update:
            learner.observe(step)
    return scores


def grid_search(prefix: Sequence[Step], algorithm: str, grid: Sequence[Mapping[str, Any]],
                seed: int, space, k: int = 1) -> tuple[dict, float]:
    """Best grid point by teacher-forced accuracy on the prefix; ties keep grid order."""
    if not grid:
        raise UsageError(f"empty hyperparameter grid for {algorithm}")
    if len(prefix) < 2:
        raise UsageError("grid search needs a prefix of at least 2 steps")
    best, best_score = None, -math.inf
    for point in grid:
        learner = make_learner(algorithm, space, LearnerConfig().replace(**point), seed)
        scores = walk(learner, prefix, k, seed=seed)
        value = float(np.mean(scores)) if scores else 0.0
        if value > best_score:
            best, best_score = dict(point), value
    return best, best_score


def _cell_seed(seed: int, user: str, algorithm: str, threshold: float) -> int:
    digest = hashlib.sha256(f"{seed}|{user}|{algorithm}|{threshold!r}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def train_size(threshold: float, total: int) -> int:
    n = math.ceil(threshold * total - 1e-9)
    return min(max(n, 2), total - 1)


def run_cell(trace: Trace, user: str, algorithm: str, threshold: float, plan: EvalPlan
             ) -> tuple[list[EvalRow], list[str]]:
    steps = trace.steps
    where = f"{algorithm}/{user}/{threshold}"
    if len(steps) < MIN_TRACE:
        return [], [f"{where}: skipped, trace has {len(steps)} steps"]
    space = trace.space
    if space.kind == "subset" and not LEARNERS[algorithm].supports_subset:
        return [], [f"{where}: skipped, {algorithm} does not handle subset actions"]
    k = plan.k or (space.subset_size if space.kind == "subset" else 1)
    seed = _cell_seed(plan.seed, user, algorithm, threshold)
    n_train = train_size(threshold, len(steps))
    prefix, rest = steps[:n_train], steps[n_train:]
    params, _ = grid_search(prefix, algorithm, plan.grid_for(algorithm), seed, space, k)
    learner = make_learner(algorithm, space, LearnerConfig().replace(**params), seed)
    walk(learner, prefix, k, score=False)
    learner.end_episode()
    scores = walk(learner, rest, k, update=plan.online_update_in_test, seed=seed, offset=n_train)
    if not scores:
        return [], [f"{where}: skipped, no scorable test steps"]
    row = EvalRow(algorithm, user, threshold, _metric_name(space, k), float(np.mean(scores)),
                  format_hyperparameters(params))
    return [row], []


def _run_cell_args(args):
    return run_cell(*args)


def _user_keys(traces: Sequence[Trace]) -> list[str]:
    counts = defaultdict(int)
    for tr in traces:
        counts[tr.user_id] += 1
    return [tr.user_id if counts[tr.user_id] == 1 else f"{tr.user_id}/{tr.session_id}" for tr in traces]


def run_eval(traces: Sequence[Trace], plan: EvalPlan, workers: int | None = None) -> EvalReport:
    if not traces:
        raise UsageError("no traces to evaluate")
    users = _user_keys(traces)
    cells = [(tr, user, alg, tau, plan)
             for tr, user in zip(traces, users)
             for alg in plan.algorithms
             for tau in plan.thresholds]
    workers = workers or default_workers()
    if workers > 1 and len(cells) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_args, cells, chunksize=max(1, len(cells) // (4 * workers))))
    else:
        results = [run_cell(*c) for c in cells]
    report = EvalReport()
    for rows, diags in results:
        report.rows.extend(rows)
        report.diagnostics.extend(diags)
    report.rows.sort(key=lambda r: (r.algorithm, r.user, r.threshold))
    report.diagnostics.sort()
    return report
