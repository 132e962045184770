import numpy as np
import pytest

from conftest import scripted
from novelty_rl.envs import FourRewardMaze
from novelty_rl.nn import make_policy
from novelty_rl.plotting import UnsupportedEnvironmentError, plot_trajectories


def test_empty_plot_has_map_only(tmp_path):
    out = tmp_path / "empty.svg"
    plot_trajectories([make_policy(2, 2, np.random.default_rng(0))], FourRewardMaze(), 0, out,
                      np.random.default_rng(0))
    text = out.read_text()
    assert text.count("<circle") == 4 and text.count("<rect") == 1
    assert "<polyline" not in text


def test_straight_left_is_collinear(tmp_path):
    out = tmp_path / "left.svg"
    paths = plot_trajectories([scripted([-1.0, 0.0])], FourRewardMaze(start=(8.0, 8.0)), 1, out,
                              np.random.default_rng(0))
    path = paths[0][0]
    assert np.all(path[:, 1] == 8.0)
    assert np.hypot(path[-1, 0] - 0.0, path[-1, 1] - 8.0) <= 1.0
    assert out.read_text().count("<polyline") == 1


def test_plot_deterministic(tmp_path):
    pols = [make_policy(2, 2, np.random.default_rng(s)) for s in (1, 2)]
    for name in ("a.svg", "b.svg"):
        plot_trajectories(pols, FourRewardMaze(), 3, tmp_path / name, np.random.default_rng(5))
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert (tmp_path / "a.svg").read_text().count("<polyline") == 6


def test_non_maze_rejected(tmp_path):
    with pytest.raises(UnsupportedEnvironmentError):
        plot_trajectories([], object(), 1, tmp_path / "x.svg", np.random.default_rng(0))
