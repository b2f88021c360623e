"""Figure rendering for the CLI report paths.

All functions write a PNG next to the delimited outputs and close the
figure; nothing is shown interactively.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PolyCollection

_CLASS_COLORS = plt.cm.tab20.colors


def plot_tower_levels(tower, path, max_span: float = None) -> None:
    """Tile diagram of the tower: one row per level, segments (d=1) or
    cell polygons (d=2) colored by class."""
    if tower.dim == 1:
        _plot_tower_1d(tower, path, max_span)
    else:
        _plot_tower_2d(tower, path, max_span)


def _plot_tower_1d(tower, path, max_span):
    n_levels = tower.n_levels
    if max_span is None:
        max_span = min(40.0 * tower.level(min(1, n_levels - 1)).s_n,
                       float(np.min(tower.source.window.span)) * 0.45)
    fig, ax = plt.subplots(figsize=(11, 0.9 * n_levels + 1.2))
    for n in range(n_levels):
        lvl = tower.level(n)
        x = lvl.punctures[:, 0]
        sel = np.flatnonzero((np.abs(x) <= max_span) & (lvl.labels >= 0))
        for v in sel:
            s = lvl.shapes[lvl.labels[v]]
            a, b = x[v] + s.bbox_lo[0], x[v] + s.bbox_hi[0]
            ax.fill_between([a, b], n - 0.35, n + 0.35,
                            color=_CLASS_COLORS[lvl.labels[v] % 20],
                            edgecolor="black", linewidth=0.4)
        ax.plot(x[sel], np.full(sel.size, n), "k.", markersize=2)
    ax.set_yticks(range(n_levels))
    ax.set_yticklabels([f"level {n} (t={tower.level(n).t})"
                        for n in range(n_levels)])
    ax.set_xlabel("position")
    ax.set_xlim(-max_span, max_span)
    ax.set_title("tower tiles by level (colors = classes)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_tower_2d(tower, path, max_span):
    lvl0 = tower.level(0)
    if max_span is None:
        max_span = min(12.0 * tower.level(min(1, tower.n_levels - 1)).s_n,
                       float(np.min(tower.source.window.span)) * 0.45)
    fig, axes = plt.subplots(1, tower.n_levels,
                             figsize=(5 * tower.n_levels, 5))
    if tower.n_levels == 1:
        axes = [axes]
    sel0 = np.flatnonzero(
        np.all(np.abs(lvl0.punctures) <= max_span, axis=1) & (lvl0.labels >= 0))
    chains = tower.chains()
    for n, ax in enumerate(axes):
        lvl = tower.level(n)
        polys, colors = [], []
        for i0 in sel0:
            idx = chains[n][i0]
            if idx < 0 or lvl.labels[idx] < 0:
                continue
            cell = tower.complex0.canonical_cell(int(i0))
            polys.append(cell.vertices + lvl0.punctures[i0])
            colors.append(_CLASS_COLORS[lvl.labels[idx] % 20])
        ax.add_collection(PolyCollection(polys, facecolors=colors,
                                         edgecolors="black", linewidths=0.2))
        pts = lvl.punctures[np.all(np.abs(lvl.punctures) <= max_span, axis=1)]
        ax.plot(pts[:, 0], pts[:, 1], "k.", markersize=2)
        ax.set_xlim(-max_span, max_span)
        ax.set_ylim(-max_span, max_span)
        ax.set_aspect("equal")
        ax.set_title(f"level {n} (t={lvl.t})")
    fig.suptitle("tower tiles colored by class of their containing tile")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_mixing(report: dict, path) -> None:
    """Per-level contraction coefficients against c_T, plus the measured
    conditional-vs-marginal gaps against the geometric bound."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    c_q = report["c_Q"]
    ax1.bar(range(1, len(c_q) + 1), c_q, color="steelblue",
            label="c(Q_n) = 1 - min entry")
    ax1.axhline(report["c_T"], color="crimson", linestyle="--",
                label=f"c_T = {report['c_T']:.6f}")
    ax1.set_xlabel("level n")
    ax1.set_ylabel("contraction")
    ax1.set_ylim(0, 1.05)
    ax1.legend(fontsize=8)
    ax1.set_title(f"delta_T = {report['delta_T']:.3g} (base K = {report['K']:g})")

    gaps = report["empirical_gaps"]
    steps = sorted({int(k.split(",")[1]) - int(k.split(",")[0])
                    for k in gaps})
    for s in steps:
        xs, ys = [], []
        for k, v in gaps.items():
            m, n = (int(t) for t in k.split(","))
            if n - m == s:
                xs.append(m)
                ys.append(v["gap"])
        ax2.plot(xs, ys, "o-", label=f"gap n-m={s}")
    bound = [report["c_T"] ** s for s in steps]
    ax2.plot(steps, bound, "k--", label="c_T^(n-m)")
    ax2.set_xlabel("m (lower level)")
    ax2.set_ylabel("max |cond - marginal|")
    ax2.legend(fontsize=8)
    ax2.set_title("measured mixing gaps vs bound")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_deviation_loglog(fit: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    n = np.asarray(fit["N"])
    dev = np.asarray(fit["max_abs_dev"])
    ax.loglog(n, np.maximum(dev, 1e-12), "o-", label="max |dev| over anchors")
    span = np.array([n[0], n[-1]])
    ax.loglog(span, np.exp(fit["intercept"]) * span ** fit["slope"], "-",
              color="gray", label=f"fit slope {fit['slope']:.3f}")
    if "d_minus_delta" in fit:
        ref = dev[0] * (span / span[0]) ** fit["d_minus_delta"]
        ax.loglog(span, ref, "--", color="crimson",
                  label=f"slope d-delta = {fit['d_minus_delta']:.4f}")
    refd = dev[0] * (span / span[0]) ** fit["trivial_exponent"]
    ax.loglog(span, np.maximum(refd, 1e-12), ":", color="green",
              label=f"slope d-1 = {fit['trivial_exponent']:.0f}")
    ax.set_xlabel("cube side N")
    ax.set_ylabel("max |deviation|")
    ax.legend(fontsize=8)
    ax.set_title("patch-count deviation growth")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_deviation_ratio(fit: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    n = np.asarray(fit["N"])
    if "ratio_series" in fit:
        ax.semilogx(n, fit["ratio_series"], "o-",
                    label="|dev| / N^(d-delta_T)")
    ax.semilogx(n, fit["ratio_trivial"], "s--",
                label="|dev| / N^(d-1)")
    ax.set_xlabel("cube side N")
    ax.set_ylabel("ratio")
    trend = fit.get("ratio_trend", fit["trivial_trend"])
    ax.set_title("deviation ratio series (Mann-Kendall upward trend: "
                 f"{'no' if trend['no_upward'] else 'YES'})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
