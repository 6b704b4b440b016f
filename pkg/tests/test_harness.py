import json
import os

import pytest

from rl.data import OfflineDataset
from rl.harness import (
    ExperimentSpec,
    env_for_dataset,
    render_report_trajectories,
    run_experiment,
    w_sweep,
)
from rl.training import TrainConfig, TrainMode
from utils.errors import TrainingError
from utils.helpers import Helpers
from utils.logger import PPLLogger


@pytest.fixture
def logger():
    """
    Konsolen-Logger ohne Log-Dateien
    """
    return PPLLogger(log_dir=None, log_level="WARNING")


@pytest.fixture
def spec(tmp_path):
    """
    Kleines Toy-Experiment mit zwei Seeds
    """
    return ExperimentSpec(
        name="tiny",
        dataset="toy",
        algorithm="ppl",
        train=TrainConfig.toy(steps_bc=10, steps_critic=10, steps_ppl=10, batch_size=32, log_every=5),
        seeds=[0, 1],
        output_dir=str(tmp_path / "run"),
        config_text="TRAIN_W=8\n",
    )


@pytest.mark.asyncio
async def test_toy_run_writes_artifacts(spec, logger):
    """
    Test für vollständigen Lauf: Report, Metriken, Checkpoints, Abbildung
    """
    report = await run_experiment(spec, logger)
    assert not report.failed
    assert [r.index for r in report.rows] == [0, 1]
    for name in ("report.json", "metrics.csv", "trajectories.svg"):
        assert os.path.isfile(os.path.join(spec.output_dir, name))
    seed_dir = os.path.join(spec.output_dir, "run_00_seed_0")
    for name in ("trainlog.csv", "policy.ckpt", "critic.ckpt", "potential.ckpt", "baseline.ckpt"):
        assert os.path.isfile(os.path.join(seed_dir, name))

    row = report.rows[0]
    assert len(row.discounted_returns) == 1
    assert row.grid_deviation is not None
    assert row.baseline_discounted_return is not None
    assert row.trajectory and row.baseline_trajectory

    with open(os.path.join(spec.output_dir, "report.json"), encoding="utf-8") as file:
        saved = json.load(file)
    assert saved["config_text"] == "TRAIN_W=8\n"
    assert saved["config"]["w"] == 8.0
    assert len(saved["x_grid"]) == 50 and len(saved["experts"]) == 3


@pytest.mark.asyncio
async def test_aggregate_matches_rows(spec, logger):
    """
    Test für Aggregat = Mittelwert/Std der Seed-Zeilen
    """
    report = await run_experiment(spec, logger)
    mean, std = Helpers.mean_std([r.mean_discounted_return for r in report.rows])
    aggregate = report.aggregate()
    assert aggregate["mean_discounted_return"] == pytest.approx(mean, abs=1e-12)
    assert aggregate["std_discounted_return"] == pytest.approx(std, abs=1e-12)
    assert aggregate["evaluated_seeds"] == 2


@pytest.mark.asyncio
async def test_duplicate_seeds_give_identical_rows(spec, logger):
    """
    Test für doppelte Seeds: identische Ergebnisse, getrennte Zeilen
    """
    spec.seeds = [3, 3]
    report = await run_experiment(spec, logger)
    first, second = report.rows
    assert (first.index, second.index) == (0, 1)
    assert first.discounted_returns == second.discounted_returns
    assert first.trajectory == second.trajectory


@pytest.mark.asyncio
async def test_rerun_is_byte_identical(spec, logger):
    """
    Test für Idempotenz: gleiche metrics.csv bei erneutem Lauf
    """
    await run_experiment(spec, logger)
    with open(os.path.join(spec.output_dir, "metrics.csv"), "rb") as file:
        first = file.read()
    await run_experiment(spec, logger)
    with open(os.path.join(spec.output_dir, "metrics.csv"), "rb") as file:
        assert file.read() == first


@pytest.mark.asyncio
async def test_zero_eval_episodes(spec, logger):
    """
    Test für eval_episodes = 0: Training ja, Evaluation nein
    """
    spec.eval_episodes = 0
    spec.seeds = [0]
    report = await run_experiment(spec, logger)
    assert report.rows[0].discounted_returns == []
    assert os.path.isfile(os.path.join(spec.output_dir, "run_00_seed_0", "trainlog.csv"))
    assert not os.path.exists(os.path.join(spec.output_dir, "trajectories.svg"))


@pytest.mark.asyncio
async def test_failed_seed_is_reported(spec, logger, mocker):
    """
    Test für Fehler in einem Seed: markiert, Lauf geht weiter
    """
    mocker.patch("rl.harness.train", side_effect=TrainingError("non-finite value produced by tanh"))
    report = await run_experiment(spec, logger)
    assert report.failed
    assert all(r.status == "failed" for r in report.rows)
    assert "tanh" in report.rows[0].error
    assert report.aggregate()["failed_seeds"] == 2
    with open(os.path.join(spec.output_dir, "metrics.csv"), encoding="utf-8") as file:
        assert file.read().count(",failed,") == 2


@pytest.mark.asyncio
async def test_qbc_algorithm_has_no_separate_baseline(spec, logger):
    """
    Test für den Q+BC-Algorithmus
    """
    spec.algorithm = "qbc"
    spec.seeds = [0]
    report = await run_experiment(spec, logger)
    seed_dir = os.path.join(spec.output_dir, "run_00_seed_0")
    assert os.path.isfile(os.path.join(seed_dir, "policy.ckpt"))
    assert not os.path.exists(os.path.join(seed_dir, "baseline.ckpt"))
    assert report.rows[0].baseline_discounted_return is None


@pytest.mark.asyncio
async def test_tabular_ppl_records_covered_actions(spec, logger):
    """
    Test für tabellarischen Lauf auf der Stitching-Kette
    """
    spec.dataset = "stitching"
    spec.seeds = [0]
    spec.tabular_episodes = 40
    spec.train = spec.train.replace(gamma=0.9)
    report = await run_experiment(spec, logger)
    row = report.rows[0]
    assert row.ok
    assert row.covered_actions is not None and 1.0 <= row.covered_actions <= 2.0
    assert len(row.discounted_returns) == 1
    assert row.grid_deviation is None


def test_spec_validation(spec):
    """
    Test für ungültige Experiment-Spezifikationen
    """
    spec.algorithm = "sac"
    with pytest.raises(ValueError):
        spec.validate()
    spec.algorithm = "qbc"
    spec.train = spec.train.replace(mode=TrainMode.JOINT)
    with pytest.raises(ValueError):
        spec.validate()
    spec.algorithm = "ppl"
    spec.dataset = "missing.jsonl"
    with pytest.raises(ValueError):
        spec.validate()
    spec.dataset = "toy"
    spec.seeds = []
    with pytest.raises(ValueError):
        spec.validate()


@pytest.mark.asyncio
async def test_sweep_rejects_invalid_w(spec, logger):
    """
    Test für w < 1 und leere Sweep-Liste
    """
    with pytest.raises(ValueError):
        await w_sweep(spec, [1.0, 0.5], logger)
    with pytest.raises(ValueError):
        await w_sweep(spec, [], logger)
    assert not os.path.exists(os.path.join(spec.output_dir, "w_1"))


@pytest.mark.asyncio
async def test_sweep_writes_comparison(spec, logger):
    """
    Test für Sweep über zwei w-Werte mit Score-Kurven
    """
    spec.seeds = [0]
    spec.train = spec.train.replace(eval_every=5)
    sweep = await w_sweep(spec, [1, 8], logger)
    rows = sweep.rows()
    assert [r["w"] for r in rows] == [1.0, 8.0]
    for name in ("sweep.json", "sweep.csv", "sweep_scores.svg"):
        assert os.path.isfile(os.path.join(spec.output_dir, name))
    assert os.path.isfile(os.path.join(spec.output_dir, "w_8", "metrics.csv"))
    assert set(sweep.curves()) == {"w=1", "w=8"}
    assert [step for step, _ in sweep.reports[0].rows[0].score_curve] == [5, 10]


def test_report_without_trajectories(tmp_path):
    """
    Test für Plot-Anfrage ohne Trajektorien
    """
    with pytest.raises(ValueError):
        render_report_trajectories({"rows": [], "x_grid": [0.0, 1.0]}, str(tmp_path / "t.svg"))


def test_dataset_without_environment():
    """
    Test für Datensätze ohne ausführbare Umgebung
    """
    ds = OfflineDataset([[0.0]], [[0.0]], [0.0], [[1.0]], [False], [-1.0], [1.0], {"generator": "custom"})
    with pytest.raises(ValueError):
        env_for_dataset(ds)
