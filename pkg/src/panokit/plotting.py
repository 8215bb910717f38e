"""Report figures rendered to files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.titlesize": 8,
    "axes.labelsize": 8,
    "legend.fontsize": 7,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def training_curves(history: Sequence[dict], path) -> Path:
    """Loss terms and held-out IoU per epoch."""
    with plt.rc_context(STYLE):
        fig, (ax_l, ax_i) = plt.subplots(1, 2, figsize=(7.0, 2.6))
        ep = [r["epoch"] for r in history]
        for key in ("loss", "corner", "boundary"):
            if key in history[0]:
                ax_l.plot(ep, [r[key] for r in history], label=key, lw=1)
        ax_l.set_xlabel("epoch")
        ax_l.set_ylabel("loss")
        ax_l.set_yscale("log")
        ax_l.legend(frameon=False)
        for key, style in (("val_iou2d", "-"), ("val_iou3d", "--"), ("train_iou2d", ":")):
            if key in history[0]:
                ax_i.plot(ep, [r[key] for r in history], style, label=key.replace("_", " "), lw=1)
        ax_i.set_xlabel("epoch")
        ax_i.set_ylabel("IoU")
        ax_i.set_ylim(0, 1)
        if ax_i.lines:
            ax_i.legend(frameon=False)
        return _save(fig, path)


def iou_by_group(groups: Dict[str, Dict[str, float]], path) -> Path:
    """Grouped bars of mean 2D/3D IoU per corner-count bucket."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.4))
        names = list(groups)
        x = np.arange(len(names))
        ax.bar(x - 0.18, [groups[n]["iou2d"] for n in names], 0.36, label="2D IoU", color="0.35")
        ax.bar(x + 0.18, [groups[n]["iou3d"] for n in names], 0.36, label="3D IoU", color="0.7")
        ax.set_xticks(x, [f"{n}\n(n={groups[n]['count']})" for n in names])
        ax.set_ylim(0, 1)
        ax.set_xlabel("corners")
        ax.legend(frameon=False, loc="lower right")
        return _save(fig, path)


def gradcheck_errors(names: Sequence[str], errors: Sequence[float], tol: float, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 0.18 * len(names) + 0.8))
        y = np.arange(len(names))
        err = np.maximum(np.asarray(errors, dtype=float), 1e-18)
        ax.barh(y, err, color=["0.4" if e < tol else "tab:red" for e in err])
        ax.axvline(tol, color="tab:red", lw=0.8, ls="--")
        ax.set_xscale("log")
        ax.set_yticks(y, names)
        ax.invert_yaxis()
        ax.set_xlabel("max relative error")
        return _save(fig, path)


def edge_maps(image: np.ndarray, e_v: np.ndarray, e_h: np.ndarray, path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, figsize=(5.0, 6.0))
        rgb = np.clip(np.moveaxis(image, 0, -1), 0, 1) if image.ndim == 3 else image
        axes[0].imshow(rgb, cmap="gray")
        axes[0].set_title("input")
        axes[1].imshow(e_v, cmap="magma")
        axes[1].set_title("vertical edges")
        axes[2].imshow(e_h, cmap="magma")
        axes[2].set_title("horizontal edges")
        for ax in axes:
            ax.set_axis_off()
        return _save(fig, path)


def layout_overlay(image: np.ndarray, y_c: np.ndarray, y_f: np.ndarray, path,
                   corners: Optional[Sequence[int]] = None, gt: Optional[tuple] = None,
                   floor: Optional[tuple] = None) -> Path:
    """Panorama with boundary curves; ``floor`` adds a top-down plan ``(pred_xy, gt_xy)``."""
    H, W = image.shape[1:]
    cols = np.arange(W) + 0.5

    def rows(lat):
        return (0.5 - np.asarray(lat) / np.pi) * H

    with plt.rc_context(STYLE):
        ncols = 2 if floor is not None else 1
        fig, axes = plt.subplots(1, ncols, figsize=(5.5 + 2.4 * (ncols - 1), 2.6),
                                 gridspec_kw={"width_ratios": [2.2, 1][:ncols]})
        ax = axes[0] if ncols == 2 else axes
        ax.imshow(np.clip(np.moveaxis(image, 0, -1), 0, 1), extent=(0, W, H, 0))
        if gt is not None:
            ax.plot(cols, rows(gt[0]), color="white", lw=0.8, ls="--")
            ax.plot(cols, rows(gt[1]), color="white", lw=0.8, ls="--")
        ax.plot(cols, rows(y_c), color="tab:orange", lw=1)
        ax.plot(cols, rows(y_f), color="tab:cyan", lw=1)
        for c in corners or ():
            ax.axvline(c + 0.5, color="tab:red", lw=0.6)
        ax.set_axis_off()
        if floor is not None:
            ax2 = axes[1]
            for xy, color, label in ((floor[1], "0.5", "truth"), (floor[0], "tab:red", "predicted")):
                if xy is None:
                    continue
                closed = np.vstack([xy, xy[:1]])
                ax2.plot(closed[:, 0], closed[:, 1], color=color, lw=1, label=label)
            ax2.plot([0], [0], "k+")
            ax2.set_aspect("equal")
            ax2.set_xlabel("x")
            ax2.set_ylabel("z")
            ax2.legend(frameon=False)
        return _save(fig, path)
