"""Matplotlib rendering of report figures, written next to the data files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# strip the writer version so repeated runs produce identical bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def estimate_figure(report: dict, path) -> None:
    """Two panels: outcome means by exposure cell, and the interval ladder."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))

    cells = report["group_cells"]
    order = ["w0_x0", "w0_x1", "w1_x0", "w1_x1"]
    labels = ["W=0\nX=0", "W=0\nX=1", "W=1\nX=0", "W=1\nX=1"]
    means = [cells[k]["mean_outcome"] for k in order]
    sizes = [cells[k]["n_units"] for k in order]
    colors = ["#888888", "#4477aa", "#888888", "#4477aa"]
    bars = ax1.bar(labels, [m if m is not None else 0 for m in means], color=colors)
    for bar, n_cell in zip(bars, sizes):
        ax1.text(
            bar.get_x() + bar.get_width() / 2,
            bar.get_height(),
            f"n={n_cell}",
            ha="center",
            va="bottom",
            fontsize=8,
        )
    ax1.set_ylabel("mean outcome")
    ax1.set_title("outcomes by exposure and treatment")

    n = report["data"]["n_units"]
    point = report["point_estimate"]["fraction"]
    levels = [b["one_sided_level"] for b in report["bounds"]]
    lowers = [b["lower_bound_fraction"] for b in report["bounds"]]
    ypos = np.arange(len(levels))
    ax2.barh(ypos, [1.0 - lo for lo in lowers], left=lowers, color="#cccccc")
    ax2.plot([point] * len(ypos), ypos, "kd", label="point estimate")
    for y_k, lo in zip(ypos, lowers):
        ax2.plot(lo, y_k, "|", color="#222222", markersize=16)
    ax2.set_yticks(ypos)
    ax2.set_yticklabels([f"{lvl:.0%} one-sided" for lvl in levels])
    ax2.set_xlim(0, 1)
    ax2.set_xlabel(f"fraction of {n} units affected by others' treatment")
    ax2.set_title("lower confidence bounds")
    ax2.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def simulation_figure(report: dict, path) -> None:
    kind = report.get("kind", "coverage")
    rows = [r for r in report["rows"] if r.get("n") is not None]
    if not rows:
        return
    if kind == "coverage":
        _coverage_figure(report, rows, path)
    elif kind == "normality":
        _trend_figure(
            rows, "ks_distance", "KS distance to standard normal", path, logy=False
        )
    else:
        _trend_figure(
            rows, "median_scaled_error", "median |estimate - bound| / N", path, logy=True
        )


def _coverage_figure(report, rows, path):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    alphas = sorted({r["alpha"] for r in rows})
    for alpha in alphas:
        sub = [r for r in rows if r["alpha"] == alpha]
        ns = [r["n"] for r in sub]
        cov = [r["coverage"] for r in sub]
        se = [r["coverage_se"] for r in sub]
        level = 1 - 2 * alpha
        ax1.errorbar(ns, cov, yerr=[2 * s for s in se], marker="o", label=f"{level:.0%}")
        ax1.axhline(level, linestyle=":", color="#999999")
        ax2.plot(ns, [r["mean_lower_bound"] for r in sub], marker="o", label=f"bound {level:.0%}")
    ax2.plot(
        [r["n"] for r in rows],
        [r["mean_affected"] for r in rows],
        marker="s",
        color="#222222",
        label="true affected",
    )
    ax1.set_xlabel("units")
    ax1.set_ylabel("empirical coverage")
    ax1.set_ylim(0.8, 1.01)
    ax1.legend(fontsize=8)
    ax1.set_title("one-sided coverage")
    ax2.set_xlabel("units")
    ax2.set_ylabel("units")
    ax2.legend(fontsize=8)
    ax2.set_title("mean bound vs truth")
    fig.tight_layout()
    _save(fig, path)


def _trend_figure(rows, key, ylabel, path, logy=False):
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ns = [r["n"] for r in rows]
    vals = [r[key] for r in rows]
    ax.plot(ns, vals, marker="o")
    if logy and all(v is not None and v > 0 for v in vals):
        ax.set_xscale("log")
        ax.set_yscale("log")
        anchor = vals[0] * np.sqrt(ns[0])
        ax.plot(ns, [anchor / np.sqrt(n) for n in ns], ":", color="#999999",
                label="inverse square root")
        ax.legend(fontsize=8)
    ax.set_xlabel("units")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    _save(fig, path)
