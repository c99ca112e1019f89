"""
SVG figures for the laboratory outputs

All figures are drawn with matplotlib on the Agg backend and written as SVG
with a fixed hash salt and no date stamp, so identical data give byte-identical
files. Axis limits are set explicitly from the data with 5% padding.
"""

import io
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Circle, Rectangle  # noqa: E402

from .persistence import atomic_write_bytes  # noqa: E402

plt.rcParams.update({
    "svg.hashsalt": "gravicav",
    "svg.fonttype": "path",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
})

PANEL_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _padded_limits(values: Iterable[float], fraction: float = 0.05) -> Tuple[float, float]:
    """Finite data range widened by fraction of its span on both sides"""
    data = np.asarray([v for v in np.ravel(np.asarray(list(values), dtype=float)) if math.isfinite(v)])
    if data.size == 0:
        return 0.0, 1.0
    lo, hi = float(data.min()), float(data.max())
    span = hi - lo
    if span <= 0.0:
        span = max(abs(lo), 1.0)
        return lo - 0.5 * span, hi + 0.5 * span
    return lo - fraction * span, hi + fraction * span


def save_svg(fig, path) -> Path:
    """Render a figure to SVG, write it atomically and close the figure"""
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    return atomic_write_bytes(Path(path), buffer.getvalue())


def plot_series(path, panels: Sequence[Dict], xlabel: str = "t",
                title: Optional[str] = None, sharey: bool = True) -> Path:
    """
    Stacked time-series panels

    Args:
        path: Output SVG path
        panels: One dict per panel with keys "label", "x", "y" and optional
            "ylabel", "hlines" (list of y values) and "vlines" (list of x values)
        xlabel: Shared x-axis label
        title: Figure title
        sharey: Use one y range for all panels

    Returns:
        The written path
    """
    fig, axes = plt.subplots(len(panels), 1, figsize=(8.0, 2.2 * len(panels) + 0.6),
                             sharex=True, squeeze=False)
    x_lim = _padded_limits(np.concatenate([np.asarray(p["x"], dtype=float) for p in panels]))
    shared_y = _padded_limits(np.concatenate([np.asarray(p["y"], dtype=float) for p in panels]))
    for k, (ax, panel) in enumerate(zip(axes[:, 0], panels)):
        ax.plot(panel["x"], panel["y"], color=PANEL_COLORS[k % len(PANEL_COLORS)], linewidth=0.7)
        for level in panel.get("hlines", []):
            ax.axhline(level, color="gray", linestyle="--", linewidth=0.8)
        for position in panel.get("vlines", []):
            ax.axvline(position, color="black", linestyle=":", linewidth=0.8)
        ax.set_xlim(*x_lim)
        ax.set_ylim(*(shared_y if sharey else _padded_limits(panel["y"])))
        ax.set_ylabel(panel.get("ylabel", ""))
        ax.text(0.01, 0.92, panel["label"], transform=ax.transAxes, va="top", fontweight="bold")
    axes[-1, 0].set_xlabel(xlabel)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return save_svg(fig, path)


def plot_scan(path, lambdas: Sequence[float], heights: Sequence[Optional[float]],
              threshold: float, lambda_u: Optional[float] = None,
              times: Optional[Sequence[Optional[float]]] = None,
              predicted: Optional[Sequence[Optional[float]]] = None,
              title: Optional[str] = None) -> Path:
    """Revival height (and optionally revival times) against lambda"""
    def clean(values):
        return np.asarray([np.nan if v is None else v for v in values], dtype=float)

    lam = np.asarray(lambdas, dtype=float)
    n_rows = 2 if times is not None else 1
    fig, axes = plt.subplots(n_rows, 1, figsize=(7.0, 3.0 * n_rows), sharex=True, squeeze=False)
    ax = axes[0, 0]
    h = clean(heights)
    ax.plot(lam, h, "o-", color=PANEL_COLORS[0], label="revival height")
    ax.axhline(threshold, color="gray", linestyle="--", linewidth=0.8, label=f"threshold {threshold:g}")
    if lambda_u is not None:
        ax.axvline(lambda_u, color=PANEL_COLORS[1], linestyle=":", label=f"lambda_u = {lambda_u:g}")
    ax.set_xlim(*_padded_limits(lam))
    ax.set_ylim(*_padded_limits(np.concatenate([h, [0.0, threshold]])))
    ax.set_ylabel("smoothed C^2 at revival")
    ax.legend(loc="upper right", fontsize=8)

    if times is not None:
        ax = axes[1, 0]
        t = clean(times)
        ax.plot(lam, t, "s-", color=PANEL_COLORS[2], label="measured")
        limits = [t]
        if predicted is not None:
            tp = clean(predicted)
            ax.plot(lam, tp, "^--", color=PANEL_COLORS[3], label="predicted")
            limits.append(tp)
        ax.set_ylim(*_padded_limits(np.concatenate(limits)))
        ax.set_ylabel("revival time")
        ax.legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("lambda")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return save_svg(fig, path)


def plot_heatmap(path, z: np.ndarray, p: np.ndarray, values: np.ndarray,
                 title: Optional[str] = None,
                 markers: Sequence[Tuple[float, float, str]] = ()) -> Path:
    """Husimi-style map with rows indexed by p and columns by z"""
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    dz = (z[-1] - z[0]) / max(len(z) - 1, 1)
    dp = (p[-1] - p[0]) / max(len(p) - 1, 1)
    extent = [z[0] - dz / 2, z[-1] + dz / 2, p[0] - dp / 2, p[-1] + dp / 2]
    image = ax.imshow(values, origin="lower", extent=extent, aspect="auto",
                      cmap="magma", interpolation="nearest")
    fig.colorbar(image, ax=ax, label="Q(z, p)")
    for mz, mp, label in markers:
        ax.plot([mz], [mp], "c+", markersize=10)
        ax.annotate(label, (mz, mp), xytext=(5, 5), textcoords="offset points", color="cyan")
    ax.set_xlim(extent[0], extent[1])
    ax.set_ylim(extent[2], extent[3])
    ax.set_xlabel("z")
    ax.set_ylabel("p")
    ax.grid(False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return save_svg(fig, path)


def plot_poincare(path, points: Dict[str, np.ndarray],
                  circles: Sequence[Tuple[float, float, float, str]] = (),
                  unit_cell: Optional[Tuple[float, float, float]] = None,
                  title: Optional[str] = None) -> Path:
    """
    Stroboscopic section with optional wavepacket circles and a unit cell

    Args:
        path: Output SVG path
        points: Seed id -> (n, 2) array of (z, p) strobe points
        circles: (z, p, radius, label) wavepacket extents
        unit_cell: (z, p, side) square of area side^2 centered at (z, p)
        title: Axes title
    """
    fig, ax = plt.subplots(figsize=(8.0, 6.0))
    all_z: List[np.ndarray] = []
    all_p: List[np.ndarray] = []
    for seed_id in sorted(points):
        pts = np.asarray(points[seed_id], dtype=float).reshape(-1, 2)
        ax.plot(pts[:, 0], pts[:, 1], ",", color="black", alpha=0.6, rasterized=False)
        all_z.append(pts[:, 0])
        all_p.append(pts[:, 1])
    for cz, cp, radius, label in circles:
        ax.add_patch(Circle((cz, cp), radius, fill=False, color=PANEL_COLORS[1], linewidth=1.2))
        ax.annotate(label, (cz, cp), xytext=(4, 4), textcoords="offset points", color=PANEL_COLORS[1])
        all_z.append(np.array([cz - radius, cz + radius]))
        all_p.append(np.array([cp - radius, cp + radius]))
    if unit_cell is not None:
        uz, up, side = unit_cell
        ax.add_patch(Rectangle((uz - side / 2, up - side / 2), side, side,
                               fill=False, color=PANEL_COLORS[2], linewidth=1.2))
        all_z.append(np.array([uz - side / 2, uz + side / 2]))
        all_p.append(np.array([up - side / 2, up + side / 2]))
    ax.set_xlim(*_padded_limits(np.concatenate(all_z) if all_z else []))
    ax.set_ylim(*_padded_limits(np.concatenate(all_p) if all_p else []))
    ax.set_xlabel("z")
    ax.set_ylabel("p")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return save_svg(fig, path)
