"""Static figures for report output (rendered off-screen to PNG)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_threshold_curves(aggregates: Iterable[Mapping], path: str | Path) -> Path:
    """One line per algorithm: mean metric against training threshold."""
    series = defaultdict(list)
    metrics = set()
    for row in aggregates:
        series[row["algorithm"]].append((float(row["threshold"]), float(row["mean"])))
        metrics.add(row["metric"])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for alg in sorted(series):
        xs, ys = zip(*sorted(series[alg]))
        ax.plot(xs, ys, marker="o", label=alg)
    ax.set_xlabel("training threshold")
    ax.set_ylabel(" / ".join(sorted(metrics)) or "value")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(fontsize="small", ncol=2)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_pvalues(rows: Iterable[Mapping], path: str | Path, alpha: float = 0.05) -> Path:
    """Bar chart of test p-values per (group, unit, target) with the alpha line."""
    rows = list(rows)
    labels = ["/".join(str(r[k]) for k in ("group", "unit", "target") if r.get(k) not in (None, ""))
              for r in rows]
    values = [float(r["p_value"]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(rows) + 2), 4.5))
    ax.bar(range(len(values)), values, color=["tab:red" if v < alpha else "tab:gray" for v in values])
    ax.axhline(alpha, color="black", linestyle="--", linewidth=1)
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, rotation=90, fontsize="x-small")
    ax.set_ylabel("p-value")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
