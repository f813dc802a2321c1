"""SVG renderings of reports: confusion matrix, ROC, curves, PCA, saliency."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp, so reruns give identical files
plt.rcParams["svg.hashsalt"] = "ropesat"
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META, bbox_inches="tight")
    plt.close(fig)


def confusion_svg(confusion, class_names, path: str | Path, title: str = "") -> None:
    cm = np.asarray(confusion)
    fig, ax = plt.subplots(figsize=(4 + 0.4 * len(class_names), 3.5 + 0.4 * len(class_names)))
    ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(class_names)), class_names, rotation=30, ha="right")
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    hi = cm.max() if cm.size else 0
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center",
                    color="white" if cm[i, j] > hi / 2 else "black")
    if title:
        ax.set_title(title)
    _save(fig, path)


def roc_svg(roc: dict, auc: dict, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for name, r in roc.items():
        a = auc.get(name)
        label = f"{name} (AUC={a:.3f})" if a is not None else name
        ax.plot(r["fpr"], r["tpr"], label=label)
    ax.plot([0, 1], [0, 1], "k--", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right", fontsize=8)
    _save(fig, path)


def curves_svg(rows: dict, path: str | Path) -> None:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(rows["epoch"], rows["train_acc"], label="train")
    a1.plot(rows["epoch"], rows["val_acc"], label="val")
    a1.set_ylabel("accuracy")
    a2.plot(rows["epoch"], rows["train_loss"], label="train")
    a2.plot(rows["epoch"], rows["val_loss"], label="val")
    a2.set_ylabel("loss")
    for a in (a1, a2):
        a.set_xlabel("epoch")
        a.legend()
    _save(fig, path)


def pca_svg(report: dict, path: str | Path) -> None:
    """Scatter of PC1/PC2 scores with per-class marginal densities."""
    scores = np.asarray(report["scores"])
    labels = np.asarray(report["labels"])
    ratio = report["explained_variance_ratio"]
    fig = plt.figure(figsize=(5.5, 5.5))
    grid = fig.add_gridspec(2, 2, width_ratios=(4, 1), height_ratios=(1, 4),
                            wspace=0.05, hspace=0.05)
    ax = fig.add_subplot(grid[1, 0])
    top = fig.add_subplot(grid[0, 0], sharex=ax)
    right = fig.add_subplot(grid[1, 1], sharey=ax)
    dens = report.get("densities", {})
    for lab in dict.fromkeys(labels):
        sel = labels == lab
        ax.scatter(scores[sel, 0], scores[sel, 1], s=10, label=lab)
        d1 = dens.get("pc1", {}).get("density", {}).get(lab)
        if d1 is not None:
            top.plot(dens["pc1"]["x"], d1)
        d2 = dens.get("pc2", {}).get("density", {}).get(lab)
        if d2 is not None:
            right.plot(d2, dens["pc2"]["x"])
    ax.set_xlabel(f"PC1 ({100 * ratio[0]:.1f}%)")
    if len(ratio) > 1:
        ax.set_ylabel(f"PC2 ({100 * ratio[1]:.1f}%)")
    ax.legend(fontsize=8)
    top.axis("off")
    right.axis("off")
    _save(fig, path)


def saliency_svg(wavenumbers, mean_spectrum, weights, bands: dict, path: str | Path,
                 beta: float = 0.2, title: str = "") -> None:
    """Saliency over a mean spectrum with shaded bands and the beta line."""
    w = np.asarray(wavenumbers)
    fig, ax = plt.subplots(figsize=(8, 3.5))
    for name, (hi, lo) in bands.items():
        ax.axvspan(lo, hi, alpha=0.12)
        ax.text((hi + lo) / 2, 1.02, name, ha="center", fontsize=7,
                transform=ax.get_xaxis_transform())
    ax.plot(w, weights, color="crimson", label="saliency")
    ax.axhline(beta, ls=":", color="gray")
    ax.set_ylim(0, 1.05)
    ax.set_xlim(w.max(), w.min())
    ax.set_xlabel("wavenumber (cm$^{-1}$)")
    ax.set_ylabel("importance")
    ax2 = ax.twinx()
    ax2.plot(w, mean_spectrum, color="k", lw=0.8)
    ax2.set_yticks([])
    if title:
        ax.set_title(title, pad=14)
    _save(fig, path)


def overlap_bars_svg(table: dict, path: str | Path, title: str = "") -> None:
    """Grouped bars of gamma per band for each class (``{class: {band: gamma}}``)."""
    classes = list(table)
    bands = list(next(iter(table.values()))) if table else []
    fig, ax = plt.subplots(figsize=(8, 3.5))
    width = 0.8 / max(len(classes), 1)
    x = np.arange(len(bands))
    for i, c in enumerate(classes):
        ax.bar(x + i * width, [table[c][b] for b in bands], width, label=c)
    ax.set_xticks(x + width * (len(classes) - 1) / 2, bands, rotation=20)
    ax.set_ylabel("overlap ratio")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    _save(fig, path)
