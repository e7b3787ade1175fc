"""Figure rendering for study and audit reports.

Figures are written next to the delimited outputs; they are a reporting
convenience and are excluded from the byte-determinism contract (which
covers CSV/JSON only).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_study(result, path):
    """Two panels: RMSE per condition for both arms, and mean set size."""
    conditions = [row["condition"] for row in result.summary]
    labels = [str(c) for c in conditions]
    conf = [row["conformal_rmse"] for row in result.summary]
    classical = [row["classical_rmse"] for row in result.summary]
    sizes = [row["mean_set_size"] for row in result.summary]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    x = np.arange(len(conditions))
    width = 0.38
    ax1.bar(x - width / 2, conf, width, label="conformal + reasoning", color="#2c7fb8")
    ax1.bar(x + width / 2, classical, width, label="classical regression", color="#d95f0e")
    ax1.set_xticks(x)
    ax1.set_xticklabels(labels)
    ax1.set_ylabel("position RMSE (m)")
    ax1.set_title(f"{result.study}: median RMSE")
    ax1.legend(fontsize=8)

    ax2.plot(x, sizes, "o-", color="#2c7fb8")
    ax2.set_xticks(x)
    ax2.set_xticklabels(labels)
    ax2.set_ylabel("mean prediction-set size")
    ax2.set_title("uncertainty adaptivity")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_coverage(audit, path):
    """Per-head mean coverage with Monte-Carlo error bars and the target band."""
    heads = sorted(audit["heads"].items(), key=lambda kv: int(kv[0]))
    names = [h for h, _ in heads]
    means = [v["mean_coverage"] for _, v in heads]
    errs = [3 * v["std_error"] for _, v in heads]
    lo = 1.0 - audit["alpha"]
    hi = lo + 1.0 / (audit["n_calib"] + 1)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.axhspan(lo, hi, color="#cccccc", alpha=0.5, label="guaranteed band")
    ax.errorbar(names, means, yerr=errs, fmt="o", color="#2c7fb8", capsize=3)
    ax.set_xlabel("head (pose dimension index)")
    ax.set_ylabel("empirical coverage")
    ax.set_title(f"marginal coverage, alpha={audit['alpha']}, n={audit['n_calib']}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_trajectory(predicted, truth, path):
    """Top-down (x, y) view of a predicted rollout against ground truth."""
    p = np.stack([pose.position for pose in predicted.poses])
    t = np.stack([pose.position for pose in truth.poses])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(t[:, 0], t[:, 1], "-", color="#555555", label="ground truth")
    ax.plot(p[:, 0], p[:, 1], ".", color="#2c7fb8", markersize=4, label="predicted")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
