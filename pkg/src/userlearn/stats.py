"""Non-stationarity analysis: session splits, preference series, rank tests.

Both rank tests compute exact two-sided p-values from the permutation
distribution of the statistic (over sign flips, resp. group assignments)
for small samples, and a tie- and continuity-corrected normal approximation
otherwise. Exact distributions are built by dynamic programming over doubled
mid-ranks, which keeps the support integral when ties produce half ranks.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Hashable, Sequence

import numpy as np
from scipy.stats import rankdata

from userlearn.core import UsageError

WILCOXON_EXACT_LIMIT = 20
MANN_WHITNEY_EXACT_LIMIT = 50
# below this smaller-group size the normal approximation is too coarse
MANN_WHITNEY_SMALL_GROUP = 8
MANN_WHITNEY_EXACT_CAP = 400
DEFAULT_WINDOW = 5
DEFAULT_SPLIT = 0.5


@dataclass(frozen=True)
class TestResult:
    test: str
    statistic: float
    p_value: float
    n: tuple[int, ...]
    method: str
    degenerate: bool = False
    params: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")


def split_session(trace: Sequence, fraction: float = DEFAULT_SPLIT) -> tuple[list, list]:
    """Split at round(fraction * T), rounding halves up, keeping both parts non-empty."""
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"split fraction {fraction} outside (0, 1)")
    items = list(trace)
    if len(items) < 2:
        raise UsageError("cannot split a trace with fewer than 2 steps")
    cut = math.floor(fraction * len(items) + 0.5)
    cut = min(max(cut, 1), len(items) - 1)
    return items[:cut], items[cut:]


def _hit(label: Any, target: Hashable) -> bool:
    if isinstance(label, (set, frozenset)):
        return target in label
    return label == target


def preference_probability(segment: Sequence, target: Hashable) -> float:
    if not segment:
        raise UsageError("empty segment")
    return sum(_hit(x, target) for x in segment) / len(segment)


def preference_series(segment: Sequence, target: Hashable, window: int = DEFAULT_WINDOW) -> np.ndarray:
    if window < 1:
        raise UsageError("window must be at least 1")
    if len(segment) < window:
        raise UsageError(f"segment of length {len(segment)} shorter than window {window}")
    ind = np.array([_hit(x, target) for x in segment], dtype=float)
    return np.convolve(ind, np.ones(window) / window, mode="valid")


def _normal_two_sided(z: float) -> float:
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def _tie_term(values: np.ndarray) -> float:
    _, counts = np.unique(values, return_counts=True)
    return float(np.sum(counts.astype(float) ** 3 - counts))


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float] | None = None,
                         exact_limit: int = WILCOXON_EXACT_LIMIT) -> TestResult:
    x = np.asarray(x, dtype=float)
    d = x if y is None else x - np.asarray(y, dtype=float)
    if y is not None and len(x) != len(y):
        raise UsageError("paired samples must have equal length")
    if d.size == 0:
        raise UsageError("wilcoxon needs at least one pair")
    d = d[d != 0]
    n = d.size
    if n == 0:
        return TestResult("wilcoxon_signed_rank", 0.0, 1.0, (0,), "exact", degenerate=True)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)
    if n <= exact_limit:
        r2 = np.rint(2 * ranks).astype(np.int64)
        total = int(r2.sum())
        # probabilities rather than counts so large n cannot overflow
        dist = np.zeros(total + 1)
        dist[0] = 1.0
        for r in r2:
            shifted = np.zeros_like(dist)
            shifted[r:] = dist[:-r]
            dist = 0.5 * (dist + shifted)
        s_obs = int(np.rint(2 * w_plus))
        sums = np.arange(total + 1)
        extreme = np.abs(2 * sums - total) >= abs(2 * s_obs - total)
        p = float(dist[extreme].sum()) / float(dist.sum())
        return TestResult("wilcoxon_signed_rank", stat, min(1.0, p), (n,), "exact")
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(np.abs(d)) / 48.0
    if var <= 0:
        return TestResult("wilcoxon_signed_rank", stat, 1.0, (n,), "normal_approx", degenerate=True)
    z = max(abs(stat - mean) - 0.5, 0.0) / math.sqrt(var)
    return TestResult("wilcoxon_signed_rank", stat, _normal_two_sided(z), (n,), "normal_approx")


def mann_whitney_u(x: Sequence[float], y: Sequence[float],
                   exact_limit: int = MANN_WHITNEY_EXACT_LIMIT) -> TestResult:
    """Two-sided Mann-Whitney U; the statistic reported is min(U_x, U_y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n1, n2 = x.size, y.size
    if n1 == 0 or n2 == 0:
        raise UsageError("mann-whitney needs two non-empty samples")
    joint = np.concatenate([x, y])
    ranks = rankdata(joint)
    u1 = float(ranks[:n1].sum()) - n1 * (n1 + 1) / 2.0
    stat = min(u1, n1 * n2 - u1)
    if np.all(joint == joint[0]):
        return TestResult("mann_whitney_u", stat, 1.0, (n1, n2), "exact", degenerate=True)
    N = n1 + n2
    small = min(n1, n2) < MANN_WHITNEY_SMALL_GROUP and N <= MANN_WHITNEY_EXACT_CAP
    if N <= exact_limit or small:
        # enumerate over the smaller group; the two-sided p-value is symmetric
        m = min(n1, n2)
        obs_ranks = ranks[:n1] if n1 <= n2 else ranks[n1:]
        r2 = np.rint(2 * ranks).astype(np.int64)
        total = int(r2.sum())
        # ways[j, s]: number of size-j subsets with doubled rank sum s
        ways = np.zeros((m + 1, total + 1))
        ways[0, 0] = 1.0
        for r in r2:
            ways[1:, r:] += ways[:-1, : total + 1 - r].copy()
        dist = ways[m]
        s_obs = int(np.rint(2 * obs_ranks.sum()))
        center = m * total  # N * doubled mean rank sum, kept integral
        sums = np.arange(total + 1)
        extreme = np.abs(N * sums - center) >= abs(N * s_obs - center)
        p = float(dist[extreme].sum()) / float(dist.sum())
        return TestResult("mann_whitney_u", stat, min(1.0, p), (n1, n2), "exact")
    mean = n1 * n2 / 2.0
    var = n1 * n2 / 12.0 * ((N + 1) - _tie_term(joint) / (N * (N - 1)))
    z = max(abs(u1 - mean) - 0.5, 0.0) / math.sqrt(var)
    return TestResult("mann_whitney_u", stat, _normal_two_sided(z), (n1, n2), "normal_approx")


# --- batteries ---------------------------------------------------------------

BATTERY_COLUMNS = ("group", "unit", "target", "test", "statistic", "p_value", "method", "n",
                   "split", "window", "degenerate")


def _row(group, unit, target, res: TestResult, split, window) -> dict:
    return {
        "group": "" if group is None else str(group),
        "unit": unit,
        "target": str(target),
        "test": res.test,
        "statistic": res.statistic,
        "p_value": res.p_value,
        "method": res.method,
        "n": "/".join(str(v) for v in res.n),
        "split": split,
        "window": window,
        "degenerate": res.degenerate,
    }


def nonstationarity_battery(traces: Sequence, test: str = "wilcoxon", battery: str | None = None,
                            split: float = DEFAULT_SPLIT, window: int = DEFAULT_WINDOW,
                            targets: Sequence[Hashable] | None = None,
                            ) -> tuple[list[dict], list[str]]:
    """Run a test battery over traces grouped by dataset.

    ``battery="cohort"`` pairs one preference probability per trace across
    the group (one row per target); ``battery="user"`` compares windowed
    preference series within each trace (one row per trace and target).
    Defaults: cohort for Wilcoxon, user for Mann-Whitney.
    """
    if test not in ("wilcoxon", "mannwhitney"):
        raise UsageError(f"unknown test {test!r}")
    battery = battery or ("cohort" if test == "wilcoxon" else "user")
    if battery not in ("cohort", "user"):
        raise UsageError(f"unknown battery {battery!r}")
    groups: dict[Any, list] = defaultdict(list)
    for tr in traces:
        groups[tr.meta.get("dataset")].append(tr)
    rows: list[dict] = []
    diagnostics: list[str] = []
    for group in sorted(groups, key=lambda g: "" if g is None else str(g)):
        members = groups[group]
        splits = []
        for tr in members:
            try:
                splits.append((tr, *split_session(tr.labels(), split)))
            except UsageError as exc:
                diagnostics.append(f"{tr.session_id}: skipped ({exc})")
        group_targets = targets
        if group_targets is None:
            group_targets = sorted({lab for tr in members for labs in tr.labels() for lab in labs},
                                   key=str)
        for target in group_targets:
            if battery == "cohort":
                if not splits:
                    continue
                a = [preference_probability(s1, target) for _, s1, _ in splits]
                b = [preference_probability(s2, target) for _, _, s2 in splits]
                res = wilcoxon_signed_rank(a, b) if test == "wilcoxon" else mann_whitney_u(a, b)
                rows.append(_row(group, "cohort", target, res, split, window))
                continue
            for tr, s1, s2 in splits:
                try:
                    a = preference_series(s1, target, window)
                    b = preference_series(s2, target, window)
                except UsageError as exc:
                    diagnostics.append(f"{tr.session_id}/{target}: skipped ({exc})")
                    continue
                if test == "wilcoxon":
                    m = min(a.size, b.size)
                    res = wilcoxon_signed_rank(a[:m], b[:m])
                else:
                    res = mann_whitney_u(a, b)
                rows.append(_row(group, tr.user_id, target, res, split, window))
    return rows, diagnostics
