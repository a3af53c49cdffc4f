"""Matplotlib figures for value maps, simulation reports and comparisons.

Everything renders off-screen to files through the Agg backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import LabeledMdp  # noqa: E402

# fixed metadata keeps PNG bytes independent of the matplotlib build
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def value_grid(m: LabeledMdp, values) -> np.ndarray:
    """Per-cell values on the workspace raster; cells without a state are NaN."""
    if m.coords is None:
        raise ValueError("model has no cell coordinates")
    xy = np.asarray(m.coords, dtype=int)
    grid = np.full((xy[:, 1].max() + 1, xy[:, 0].max() + 1), np.nan)
    grid[xy[:, 1], xy[:, 0]] = np.asarray(values, dtype=float)
    return grid


def value_heatmap(m: LabeledMdp, values, path, title: str = "return value") -> Path:
    grid = value_grid(m, values)
    fig, ax = plt.subplots(figsize=(1.0 + 0.4 * grid.shape[1], 0.8 + 0.4 * grid.shape[0]))
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("0.25")
    im = ax.imshow(np.ma.masked_invalid(grid), cmap=cmap, vmin=0.0, vmax=1.0)
    for x, (c, r) in enumerate(m.coords):
        if m.labels[x]:
            ax.text(c, r, ",".join(sorted(m.labels[x])), ha="center", va="center", fontsize=6, color="w")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, path)


def visit_heatmap(m: LabeledMdp, visits, path, title: str = "outbound visits") -> Path:
    v = np.asarray(visits, dtype=float)
    top = v.max() if v.size and v.max() > 0 else 1.0
    return value_heatmap(m, v / top, path, title)


def report_figures(report, stem, m: LabeledMdp | None = None) -> list:
    """Cost histogram, outcome rates and (given the model) a visit map."""
    stem = str(stem)
    out = []
    costs = np.array([r.total_cost for r in report.runs])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(costs, bins=min(30, max(5, costs.size // 5)), color="tab:blue")
    ax.set_xlabel("trajectory cost")
    ax.set_ylabel("runs")
    fig.tight_layout()
    out.append(_save(fig, stem + "_costs.png"))

    names = ["sat", "safe", "trapped"]
    vals = [report.sat_rate, np.nan if report.safe_rate is None else report.safe_rate, report.trapped_rate]
    fig, ax = plt.subplots(figsize=(4, 3.2))
    ax.bar(names, np.nan_to_num(vals), color=["tab:green", "tab:blue", "tab:red"])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("fraction of runs")
    fig.tight_layout()
    out.append(_save(fig, stem + "_rates.png"))

    if m is not None and m.coords is not None:
        out.append(visit_heatmap(m, report.outbound_visits, stem + "_visits.png"))
    return out


def comparison_figure(table, path) -> Path:
    """Mean cost and trapped rate per row of a comparison table."""
    labels = [f"{r[0]}\n{r[1]}" for r in table.rows]
    cost = [np.nan if r[5] is None else r[5] for r in table.rows]
    trap = [np.nan if r[4] is None else r[4] for r in table.rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(2 + 1.2 * len(labels), 3.5))
    a1.bar(labels, np.nan_to_num(cost), color="tab:blue")
    a1.set_title("mean cost")
    a2.bar(labels, np.nan_to_num(trap), color="tab:red")
    a2.set_title("trapped rate")
    for ax in (a1, a2):
        ax.tick_params(axis="x", labelsize=7)
    fig.tight_layout()
    return _save(fig, path)
