"""Matplotlib figures for run reports. Always renders off-screen with Agg."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no software tag or timestamp, so reruns give identical bytes
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_history(path, histories: dict, metric_label: str = "metric", log_metric: bool = False) -> Path:
    """Loss and metric against iteration for one or more labelled runs."""
    fig, (ax_l, ax_m) = plt.subplots(1, 2, figsize=(9, 3.5))
    for label, hist in histories.items():
        its = [r.iteration for r in hist]
        ax_l.semilogy(its, [max(r.loss, 1e-300) for r in hist], label=label)
        ax_m.plot(its, [r.metric for r in hist], label=label)
    ax_l.set_xlabel("iteration")
    ax_l.set_ylabel("loss")
    ax_m.set_xlabel("iteration")
    ax_m.set_ylabel(metric_label)
    if log_metric:
        ax_m.set_yscale("log")
    ax_m.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_spectra(path, spectra: dict) -> Path:
    """Sorted NTK eigenvalues on a log axis; non-positive values are dropped."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, ev in spectra.items():
        ev = np.asarray(ev, dtype=np.float64)
        idx = np.flatnonzero(ev > 0)
        ax.semilogy(idx, ev[idx], marker=".", ms=3, lw=1, label=label)
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_images(path, images: dict, cmap: str = "gray") -> Path:
    """Side-by-side panels; 2-D arrays use ``cmap``, RGB arrays are clipped to [0, 1]."""
    k = len(images)
    fig, axes = plt.subplots(1, k, figsize=(3 * k, 3.2), squeeze=False)
    for ax, (title, img) in zip(axes[0], images.items()):
        img = np.asarray(img, dtype=np.float64)
        if img.ndim == 3 and img.shape[2] == 1:
            img = img[:, :, 0]
        if img.ndim == 3:
            ax.imshow(np.clip(img, 0.0, 1.0), interpolation="nearest")
        else:
            ax.imshow(img, cmap=cmap, interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(path, report: dict) -> Path:
    """Metric against split count per width, with the predicted optimum marked."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    widths = sorted({r["width"] for r in report["rows"]})
    for c in widths:
        rows = sorted((r for r in report["rows"] if r["width"] == c), key=lambda r: r["splits"])
        line, = ax.plot([r["splits"] for r in rows], [r["metric"] for r in rows], marker="o", label=f"C={c}")
        best = next(b for b in report["best"] if b["width"] == c)
        ax.axvline(best["n_star"], color=line.get_color(), ls=":", lw=1)
    ax.set_xlabel("splits N (1 = baseline)")
    ax.set_ylabel("metric")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_boundary(path, points: dict, max_points: int = 4000) -> Path:
    """3-D scatter of boundary point sets, evenly subsampled."""
    fig = plt.figure(figsize=(4 * len(points), 4))
    for i, (title, pts) in enumerate(points.items()):
        ax = fig.add_subplot(1, len(points), i + 1, projection="3d")
        pts = np.asarray(pts)
        if len(pts) > max_points:
            pts = pts[:: int(np.ceil(len(pts) / max_points))]
        ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=1)
        ax.set_title(title, fontsize=9)
        for setter in (ax.set_xlim, ax.set_ylim, ax.set_zlim):
            setter(-1, 1)
    fig.tight_layout()
    return _save(fig, path)
