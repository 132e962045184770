"""Deterministic SVG rendering of maze trajectories."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .envs import DISK_RADIUS, MAZE_SIZE, REWARD_DISKS, FourRewardMaze, evaluate

PX_PER_UNIT = 25.0
MARGIN = 10.0
PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


class UnsupportedEnvironmentError(ValueError):
    pass


def _xy(p) -> tuple[float, float]:
    # y axis points up in the maze, down in SVG
    return MARGIN + p[0] * PX_PER_UNIT, MARGIN + (MAZE_SIZE - p[1]) * PX_PER_UNIT


def render_svg(paths_per_policy: Sequence[Sequence[np.ndarray]]) -> str:
    side = MAZE_SIZE * PX_PER_UNIT
    size = side + 2 * MARGIN
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:g}" height="{size:g}" '
        f'viewBox="0 0 {size:g} {size:g}">',
        f'<rect x="{MARGIN:g}" y="{MARGIN:g}" width="{side:g}" height="{side:g}" '
        'fill="white" stroke="black" stroke-width="2"/>',
    ]
    for name, (center, reward) in REWARD_DISKS.items():
        cx, cy = _xy(center)
        out.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{DISK_RADIUS * PX_PER_UNIT:g}" '
            f'fill="#ffd70080" stroke="#b8860b"><title>{name} +{reward:g}</title></circle>'
        )
    for k, paths in enumerate(paths_per_policy):
        color = PALETTE[k % len(PALETTE)]
        for path in paths:
            pts = " ".join("{:.2f},{:.2f}".format(*_xy(p)) for p in path)
            out.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_trajectories(
    policies: Sequence,
    env,
    n_episodes: int,
    output_path,
    rng: np.random.Generator,
) -> list[list[np.ndarray]]:
    """Roll out ``n_episodes`` per policy and write the maze figure as SVG.

    Returns the plotted paths, one list per policy.
    """
    if not isinstance(env, FourRewardMaze) or env.spec.state_dim != 2:
        raise UnsupportedEnvironmentError("trajectory plots need a 2-D maze environment")
    all_paths = []
    for policy in policies:
        if n_episodes > 0:
            all_paths.append(evaluate(policy, env, n_episodes, rng, record_paths=True).paths)
        else:
            all_paths.append([])
    Path(output_path).write_text(render_svg(all_paths))
    return all_paths
