"""Figures for CLI reports.  Uses the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_estimates(rows, path, title=""):
    """Error bars for paired estimates.  ``rows``: dicts with label, a, a_se, b, b_se."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        idx = np.arange(len(rows))
        a = [r["a"] for r in rows]
        b = [r["b"] for r in rows]
        ax.errorbar(idx - 0.1, a, yerr=[3 * r["a_se"] for r in rows], fmt="o",
                    label=rows[0].get("a_name", "lhs") if rows else "lhs")
        ax.errorbar(idx + 0.1, b, yerr=[3 * r["b_se"] for r in rows], fmt="s",
                    label=rows[0].get("b_name", "rhs") if rows else "rhs")
        if rows and "oracle" in rows[0]:
            ax.plot(idx, [r["oracle"] for r in rows], "k_", ms=20, label="quadrature")
        ax.set_xticks(idx)
        ax.set_xticklabels([r["label"] for r in rows], rotation=20, ha="right")
        ax.set_ylabel("Re estimate (±3 s.e.)")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_weights(weights, path, title="per-path weights"):
    w = np.asarray(weights, float)
    w = w[np.isfinite(w)]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if w.size:
            ax.hist(w, bins=60, color="C0", alpha=0.8)
        ax.set_xlabel("weight")
        ax.set_ylabel("paths")
        ax.set_title(title)
        return _save(fig, path)


def plot_trajectories(times, coords, path, labels=None, title="trajectories"):
    """``coords``: (steps+1, paths, dim)."""
    coords = np.asarray(coords)
    dim = coords.shape[-1]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(dim, 1, sharex=True, figsize=(6.0, 1.6 * dim + 0.6),
                                 squeeze=False)
        for k in range(dim):
            ax = axes[k, 0]
            ax.plot(times, coords[:, :, k], lw=0.8)
            ax.set_ylabel(labels[k] if labels else f"y{k}")
        axes[-1, 0].set_xlabel("t")
        axes[0, 0].set_title(title)
        return _save(fig, path)


def plot_generator_errors(rows, path):
    """Log-log error against dt for each generator check."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for r in rows:
            ax.loglog(r["dts"], r["errors"], "o-", label=f'{r["model"]} {r["irrep"]} {r["mode"]}')
        if rows:
            dts = np.asarray(rows[0]["dts"])
            ref = rows[0]["errors"][0] * dts / dts[0]
            ax.loglog(dts, ref, "k--", lw=0.8, label="slope 1")
        ax.set_xlabel("dt")
        ax.set_ylabel("max generator error")
        ax.legend(fontsize=6)
        return _save(fig, path)


def plot_residuals(rows, path, title="identity residuals"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 0.22 * len(rows) + 1.2))
        res = [max(r["residual"], 1e-18) if np.isfinite(r["residual"]) else 1.0 for r in rows]
        colors = ["C2" if r["ok"] else "C3" for r in rows]
        ax.barh(np.arange(len(rows)), res, color=colors)
        ax.set_xscale("log")
        ax.set_yticks(np.arange(len(rows)))
        ax.set_yticklabels([r["identity"] for r in rows], fontsize=6)
        ax.invert_yaxis()
        ax.set_xlabel("max residual")
        ax.set_title(title)
        return _save(fig, path)
