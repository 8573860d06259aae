"""Figure rendering for run reports. Everything is written to files (Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable between identical runs
_PNG_META = {"Software": None}


def set_style(fontsize=10):
    plt.rcParams.update({
        "font.size": fontsize,
        "axes.labelsize": fontsize,
        "axes.titlesize": fontsize + 1,
        "legend.fontsize": fontsize - 1,
        "xtick.labelsize": fontsize - 1,
        "ytick.labelsize": fontsize - 1,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "figure.dpi": 100,
        "savefig.bbox": "tight",
    })


def _save(fig, path):
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def plot_history(history, path):
    """Loss and accuracy per epoch for the training and validation masks."""
    set_style()
    epoch = np.array([h["epoch"] for h in history])
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_loss.plot(epoch, [h["train_loss"] for h in history], label="train")
    ax_loss.plot(epoch, [h["val_loss"] for h in history], label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy loss")
    ax_loss.legend(frameon=False)
    ax_acc.plot(epoch, [h["train_acc"] for h in history], label="train")
    ax_acc.plot(epoch, [h["val_acc"] for h in history], label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(-0.02, 1.02)
    _save(fig, path)


def plot_roc(points, auc, path):
    set_style()
    pts = np.asarray(points)
    fig, ax = plt.subplots(figsize=(3.6, 3.6))
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
    ax.plot(pts[:, 0], pts[:, 1], drawstyle="default", marker=".", label=f"AUC = {auc:.3f}")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right", frameon=False)
    _save(fig, path)


def plot_metric_summary(agg, path):
    """Bar chart of mean +/- sd per metric across seeds."""
    set_style()
    keys = list(agg["metrics"])
    means = [agg["metrics"][k]["mean"] for k in keys]
    sds = [agg["metrics"][k]["sd"] for k in keys]
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.bar(range(len(keys)), means, yerr=sds, color="0.55", capsize=3)
    ax.set_xticks(range(len(keys)), [k.upper() for k in keys])
    ax.set_ylim(0, 1.05)
    ax.set_title(f"test metrics over {agg['n_seeds']} seed(s)")
    _save(fig, path)
