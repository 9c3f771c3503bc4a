"""Figures for the ``report`` subcommand. Uses the Agg backend; never opens a window."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .costmodel import CostReport  # noqa: E402
from .runtime.events import concurrency_series  # noqa: E402

STAGES = (
    ("map", "map_start", ("map_end", "map_fail")),
    ("merge", "merge_start", ("merge_end", "merge_fail")),
    ("reduce", "reduce_start", ("reduce_end", "reduce_fail")),
)
COLORS = {"map": "#4c72b0", "merge": "#dd8452", "reduce": "#55a868"}


def _step_grid(series, workers: Sequence[int], grid: np.ndarray) -> np.ndarray:
    """Sample each worker's step function of live tasks on ``grid``."""
    out = np.zeros((len(workers), len(grid)))
    for row, w in enumerate(workers):
        pts = [(ts, n) for ts, wk, n in series if wk == w]
        if not pts:
            continue
        ts = np.array([p[0] for p in pts])
        ns = np.array([p[1] for p in pts])
        idx = np.searchsorted(ts, grid, side="right") - 1
        out[row] = np.where(idx >= 0, ns[np.clip(idx, 0, None)], 0)
    return out


def plot_concurrency(events: List[dict], path: Union[str, Path], samples: int = 400) -> Path:
    """Running tasks per worker over time: median line, min/max band."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    if events:
        t0 = min(e["ts"] for e in events)
        t1 = max(e["ts"] for e in events)
        grid = np.linspace(t0, t1 if t1 > t0 else t0 + 1e-3, samples)
        workers = sorted({e["worker"] for e in events if e["worker"] is not None})
        for stage, start, ends in STAGES:
            series = concurrency_series(events, start, ends)
            if not series:
                continue
            live = _step_grid(series, workers, grid)
            x = grid - t0
            ax.plot(x, np.median(live, axis=0), color=COLORS[stage], label=stage, drawstyle="steps-post")
            ax.fill_between(x, live.min(axis=0), live.max(axis=0), color=COLORS[stage], alpha=0.2, step="post")
    ax.set_xlabel("time since job start (s)")
    ax.set_ylabel("running tasks per worker")
    ax.legend(frameon=False, loc="upper right")
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_durations(durations: Dict[str, Sequence[float]], path: Union[str, Path], bins: int = 20) -> Path:
    path = Path(path)
    names = [k for k, v in durations.items() if len(v)]
    fig, axes = plt.subplots(1, max(1, len(names)), figsize=(3.5 * max(1, len(names)), 3), squeeze=False)
    for ax, name in zip(axes[0], names):
        ax.hist(durations[name], bins=bins, color=COLORS.get(name, "grey"))
        ax.set_title(f"{name} tasks (n={len(durations[name])})")
        ax.set_xlabel("seconds")
        ax.spines[["top", "right"]].set_visible(False)
    axes[0][0].set_ylabel("tasks")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_cost(report: CostReport, path: Union[str, Path], title: Optional[str] = None) -> Path:
    path = Path(path)
    items = report.line_items()
    fig, ax = plt.subplots(figsize=(6, 3))
    y = np.arange(len(items))
    ax.barh(y, [li.total for li in items], color="#8172b3")
    ax.set_yticks(y, [li.service for li in items])
    ax.invert_yaxis()
    ax.set_xlabel("USD")
    ax.set_title(title or f"total ${report.total:.2f}")
    for yi, li in zip(y, items):
        ax.text(li.total, yi, f" {li.total:.4g}", va="center", fontsize=8)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
