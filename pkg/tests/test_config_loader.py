import pytest

from rl.training import TrainConfig, TrainMode
from utils.config_loader import ConfigLoader


@pytest.fixture
def config_file(tmp_path):
    """
    Flache KEY=VALUE-Datei mit einigen Überschreibungen
    """
    path = tmp_path / "experiment.env"
    path.write_text(
        "# toy sweep\n"
        "TRAIN_W=12\n"
        "TRAIN_MODE=joint\n"
        "TRAIN_HIDDEN_SIZES=64,64\n"
        "EXPERIMENT_SEEDS=0,1,2\n"
        "SWEEP_W_VALUES=1,8\n",
        encoding="utf-8",
    )
    return str(path)


def test_defaults_without_file():
    """
    Test für Standardwerte ohne Konfigurationsdatei
    """
    config = ConfigLoader(env_file=None)
    assert config.get("train.w") == 8.0
    assert config.get("experiment.dataset") == "toy"
    assert config.get_list("experiment.seeds", int) == [0]
    assert config.validate()
    train = config.train_config()
    assert train.hidden_sizes == (32,)
    assert train.conservative_coef == 0.0
    assert train == TrainConfig.toy()


def test_file_overrides_defaults(config_file):
    """
    Test für Werte aus der Datei
    """
    config = ConfigLoader(config_file=config_file, env_file=None)
    assert config.get("train.w") == 12.0
    assert config.get_list("experiment.seeds", int) == [0, 1, 2]
    assert config.get_list("sweep.w_values") == [1.0, 8.0]
    train = config.train_config()
    assert train.mode == TrainMode.JOINT
    assert train.hidden_sizes == (64, 64)
    assert "TRAIN_W=12" in config.raw_text


def test_environment_beats_file(config_file, monkeypatch):
    """
    Test für Vorrang der Umgebungsvariablen
    """
    monkeypatch.setenv("PPL_TRAIN_W", "3")
    config = ConfigLoader(config_file=config_file, env_file=None)
    assert config.get("train.w") == 3.0


def test_experiment_spec_overrides(config_file, tmp_path):
    """
    Test für ExperimentSpec mit CLI-Überschreibungen
    """
    config = ConfigLoader(config_file=config_file, env_file=None)
    spec = config.experiment_spec(output_dir=str(tmp_path / "out"), seeds=None, algorithm="bc")
    assert spec.output_dir == str(tmp_path / "out")
    assert spec.seeds == [0, 1, 2]
    assert spec.algorithm == "bc"
    assert spec.train.w == 12.0
    assert spec.config_text == config.raw_text


def test_unknown_key_fails_validation(tmp_path):
    """
    Test für unbekannte Schlüssel
    """
    path = tmp_path / "bad.env"
    path.write_text("TRAIN_WW=3\n", encoding="utf-8")
    config = ConfigLoader(config_file=str(path), env_file=None)
    with pytest.raises(ValueError):
        config.validate()


@pytest.mark.parametrize("line", ["TRAIN_W=0.5", "TRAIN_GAMMA=1.0", "TRAIN_STEPS_BC=abc", "SWEEP_W_VALUES=1,0.5"])
def test_invalid_values_fail_validation(tmp_path, line):
    """
    Test für ungültige Werte
    """
    path = tmp_path / "bad.env"
    path.write_text(line + "\n", encoding="utf-8")
    config = ConfigLoader(config_file=str(path), env_file=None)
    with pytest.raises(ValueError):
        config.validate()


def test_missing_file():
    """
    Test für nicht vorhandene Konfigurationsdatei
    """
    with pytest.raises(ValueError):
        ConfigLoader(config_file="does-not-exist.env", env_file=None)
