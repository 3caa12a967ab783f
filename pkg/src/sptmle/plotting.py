"""Optional figures for ``--figures``. Data files remain the primary output."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

ESTIMATOR_COLORS = {"tmle": "tab:blue", "ols": "tab:gray", "aipw": "tab:orange"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def simulation_figure(table, out_dir: str) -> list:
    """Grouped bars of RMSE, coverage and width per scenario and estimator."""
    scenarios = list(dict.fromkeys(r.scenario for r in table.rows))
    estimators = list(dict.fromkeys(r.estimator for r in table.rows))
    if not scenarios:
        return []
    fig, axes = plt.subplots(1, 3, figsize=(4 + 2.2 * len(scenarios), 4))
    step = 0.8 / max(len(estimators), 1)
    for ax, metric, label in zip(axes, ("rmse", "coverage", "width"), ("RMSE", "Coverage", "Mean CI width")):
        for j, est in enumerate(estimators):
            xs, ys = [], []
            for i, sc in enumerate(scenarios):
                try:
                    ys.append(getattr(table.row(sc, est), metric))
                except KeyError:
                    continue
                xs.append(i - 0.4 + step * (j + 0.5))
            ax.bar(xs, ys, width=step, label=est, color=ESTIMATOR_COLORS.get(est))
        if metric == "coverage":
            ax.axhline(0.95, color="k", lw=0.8, ls="--")
            ax.set_ylim(0, 1.05)
        ax.set_xticks(range(len(scenarios)))
        ax.set_xticklabels(scenarios, rotation=30, ha="right", fontsize=8)
        ax.set_title(label)
    axes[0].legend(fontsize=8)
    return [_save(fig, os.path.join(out_dir, "metrics.png"))]


def intervals_figure(report, out_dir: str) -> list:
    """Point estimates with 95% intervals, one row per estimator."""
    fig, ax = plt.subplots(figsize=(6, 1 + 0.6 * len(report.rows)))
    for i, r in enumerate(report.rows):
        color = ESTIMATOR_COLORS.get(r.estimator)
        ax.plot([r.ci_lo, r.ci_hi], [i, i], color=color, lw=2)
        ax.plot([r.estimate], [i], "o", color=color)
    ax.axvline(0.0, color="k", lw=0.8, ls=":")
    ax.set_yticks(range(len(report.rows)))
    ax.set_yticklabels([r.estimator for r in report.rows])
    ax.invert_yaxis()
    ax.set_xlabel("Average treatment effect")
    return [_save(fig, os.path.join(out_dir, "intervals.png"))]
