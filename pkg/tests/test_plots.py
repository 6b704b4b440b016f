import numpy as np
import pytest

from rl.data import ToyPathConfig, toy_expert_curves
from rl.plots import curve_summary, render_score_curves, render_trajectories, smooth_curves


@pytest.fixture
def toy_figure_data():
    """
    Gitter, Expertenkurven und zwei Trajektorien
    """
    config = ToyPathConfig()
    grid = np.linspace(config.x_start, config.x_end, config.n_points)
    straight = np.stack([grid, np.zeros_like(grid)], axis=1)
    wavy = np.stack([grid, 0.2 * np.sin(grid * 5.0)], axis=1)
    return grid, toy_expert_curves(config), {"baseline": wavy, "ppl": straight}


def test_trajectory_figure_has_tagged_elements(toy_figure_data, tmp_path):
    """
    Test für SVG-Elemente: Gitterlinien, Experten, Trajektorien
    """
    grid, experts, trajectories = toy_figure_data
    path = render_trajectories(grid, experts, trajectories, str(tmp_path / "traj.svg"), title="seed 0")
    svg = open(path, encoding="utf-8").read()
    for gid in ("grid-0", "grid-49", "expert-0", "expert-2", "baseline", "ppl", "start", "target"):
        assert f'id="{gid}"' in svg


def test_trajectory_figure_is_reproducible(toy_figure_data, tmp_path):
    """
    Test für byte-identische SVGs bei gleicher Eingabe
    """
    grid, experts, trajectories = toy_figure_data
    a = render_trajectories(grid, experts, trajectories, str(tmp_path / "a.svg"))
    b = render_trajectories(grid, experts, trajectories, str(tmp_path / "b.svg"))
    assert open(a, "rb").read() == open(b, "rb").read()


def test_trajectory_figure_needs_trajectories(toy_figure_data, tmp_path):
    """
    Test für fehlende Trajektorien
    """
    grid, experts, _ = toy_figure_data
    with pytest.raises(ValueError):
        render_trajectories(grid, experts, {}, str(tmp_path / "empty.svg"))
    with pytest.raises(ValueError):
        render_trajectories(grid, experts, {"ppl": np.zeros((0, 2))}, str(tmp_path / "bad.svg"))


def test_score_curves_figure(tmp_path):
    """
    Test für Score-Kurven mit mehreren Seeds
    """
    curves = {"w=1": [[(5, 0.1), (10, 0.3)], [(5, 0.2), (10, 0.4)]], "w=8": [[(5, 0.5), (10, 0.6)]]}
    path = render_score_curves(curves, str(tmp_path / "scores.svg"))
    svg = open(path, encoding="utf-8").read()
    assert 'id="curve-w=1"' in svg and 'id="curve-w=8"' in svg
    with pytest.raises(ValueError):
        render_score_curves({}, str(tmp_path / "none.svg"))


def test_smoothing_truncates_to_shortest_seed():
    """
    Test für EMA-Glättung und Kürzung auf die kürzeste Kurve
    """
    steps, values = smooth_curves([[(0, 1.0), (1, 0.0), (2, 0.0)], [(0, 1.0), (1, 0.0)]], ema_coef=0.3)
    assert steps.tolist() == [0.0, 1.0]
    np.testing.assert_allclose(values, [[1.0, 0.3], [1.0, 0.3]])
    assert smooth_curves([[]]) is None

    summary = curve_summary({"ppl": [[(0, 1.0), (1, 0.0)]]})
    assert summary["ppl"]["steps"] == [0.0, 1.0]
    assert summary["ppl"]["mean"] == pytest.approx([1.0, 0.3])
