"""
Static SVG figures: toy trajectories and smoothed score curves.
"""

import os
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from utils.helpers import Helpers  # noqa: E402

# stable element ids across runs
plt.rcParams["svg.hashsalt"] = "ppl"

Curve = Sequence[Tuple[int, float]]


def _save_svg(fig, path: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def render_trajectories(x_grid: Sequence[float], experts: Sequence[Sequence[float]],
                        trajectories: Mapping[str, np.ndarray], path: str,
                        title: Optional[str] = None) -> str:
    """
    Expert curves in black, one line per policy trajectory (``baseline``,
    ``ppl``, ...) and a vertical grid line at every x-position.
    """
    if not experts and not trajectories:
        raise ValueError("nothing to plot: no expert curves and no trajectories")
    if not trajectories:
        raise ValueError("report holds no policy trajectories")

    grid = np.asarray(x_grid, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(8, 5))
    for i, x in enumerate(grid):
        ax.axvline(x, color="0.9", linewidth=0.5, zorder=0, gid=f"grid-{i}")
    for i, ys in enumerate(experts):
        ax.plot(grid, ys, color="black", linewidth=1.0, gid=f"expert-{i}",
                label="behaviour data" if i == 0 else "_nolegend_")

    colors = {"baseline": "tab:orange", "ppl": "tab:blue", "bc": "tab:green"}
    for label, positions in trajectories.items():
        pts = np.asarray(positions, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise ValueError(f"trajectory {label!r} must be a nonempty (n, 2) array")
        ax.plot(pts[:, 0], pts[:, 1], color=colors.get(label), linewidth=2.0, gid=label, label=label)

    ax.plot([grid[0]], [0.0], "o", color="green", gid="start")
    ax.plot([grid[-1]], [0.0], "*", color="red", markersize=12, gid="target")
    ax.set_xlim(grid[0] - 0.05, grid[-1] + 0.05)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower left")
    return _save_svg(fig, path)


def render_score_curves(curves: Mapping[str, Sequence[Curve]], path: str, ema_coef: float = 0.3,
                        title: Optional[str] = None) -> str:
    """
    One line per label: the seed-mean of the EMA-smoothed curves, with a
    one-standard-deviation band.
    """
    if not curves or not any(curves.values()):
        raise ValueError("no score curves to plot")

    fig, ax = plt.subplots(figsize=(8, 6))
    for label, seed_curves in curves.items():
        smoothed = smooth_curves(seed_curves, ema_coef)
        if smoothed is None:
            continue
        steps, values = smoothed
        mean, std = values.mean(axis=0), values.std(axis=0)
        ax.plot(steps, mean, linewidth=1.5, gid=f"curve-{label}", label=str(label))
        ax.fill_between(steps, mean - std, mean + std, alpha=0.1)

    ax.set_xlabel("training step")
    ax.set_ylabel("discounted return")
    if title:
        ax.set_title(title)
    ax.legend()
    return _save_svg(fig, path)


def smooth_curves(seed_curves: Sequence[Curve], ema_coef: float = 0.3) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """EMA-smooth each seed's curve and stack them, truncated to the shortest one."""
    usable = [list(c) for c in seed_curves if len(c) > 0]
    if not usable:
        return None
    length = min(len(c) for c in usable)
    steps = np.array([step for step, _ in usable[0][:length]], dtype=np.float64)
    values: List[List[float]] = [
        Helpers.exponential_moving_average([v for _, v in c[:length]], ema_coef) for c in usable
    ]
    return steps, np.array(values)


def curve_summary(curves: Mapping[str, Sequence[Curve]], ema_coef: float = 0.3) -> Dict[str, Dict[str, List[float]]]:
    """Smoothed seed-mean curves as plain lists, for JSON reports."""
    summary: Dict[str, Dict[str, List[float]]] = {}
    for label, seed_curves in curves.items():
        smoothed = smooth_curves(seed_curves, ema_coef)
        if smoothed is None:
            continue
        steps, values = smoothed
        summary[str(label)] = {"steps": steps.tolist(), "mean": values.mean(axis=0).tolist()}
    return summary
