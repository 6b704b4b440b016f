import math

import pytest

from utils.helpers import Helpers
from utils.logger import PPLLogger


def test_logger_writes_daily_file(tmp_path):
    """
    Test für Log-Datei inklusive Trainingsschritten
    """
    logger = PPLLogger(log_dir=str(tmp_path), log_level="WARNING")
    logger.info("📊 Datensatz geladen")
    logger.train_log("critic", 5, critic_loss=0.5)
    files = list(tmp_path.glob("ppl_*.log"))
    assert len(files) == 1
    content = files[0].read_text(encoding="utf-8")
    assert "Datensatz geladen" in content
    assert "TRAIN - CRITIC step=5 critic_loss=0.5" in content


def test_logger_console_output(capsys):
    """
    Test für Konsolenausgabe über stderr
    """
    logger = PPLLogger(log_dir=None, log_level="INFO")
    logger.warning("⚠ nur Konsole")
    assert "nur Konsole" in capsys.readouterr().err


def test_mean_std():
    """
    Test für Populations-Mittelwert und -Standardabweichung
    """
    mean, std = Helpers.mean_std([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert std == pytest.approx(math.sqrt(2.0 / 3.0))
    assert Helpers.mean_std([]) == (0.0, 0.0)


def test_exponential_moving_average():
    """
    Test für EMA mit Koeffizient 0.3
    """
    assert Helpers.exponential_moving_average([1.0, 0.0, 0.0]) == pytest.approx([1.0, 0.3, 0.09])
    assert Helpers.exponential_moving_average([]) == []


def test_json_round_trip(tmp_path):
    """
    Test für JSON speichern/laden inklusive Fehlerfälle
    """
    path = str(tmp_path / "sub" / "data.json")
    Helpers.save_json(path, {"w": 8.0, "seeds": [0, 1]})
    assert Helpers.load_json(path) == {"w": 8.0, "seeds": [0, 1]}
    assert Helpers.load_json(str(tmp_path / "missing.json")) == {}
    (tmp_path / "broken.json").write_text("{", encoding="utf-8")
    with pytest.raises(ValueError):
        Helpers.load_json(str(tmp_path / "broken.json"))


def test_logger_console_has_single_sink(capsys):
    """
    Test für mehrere Logger mit verschiedenen Levels: jede Zeile nur einmal
    """
    PPLLogger(log_dir=None, log_level="INFO")
    logger = PPLLogger(log_dir=None, log_level="WARNING")
    logger.warning("einmalige Warnung")
    logger.info("unterdrückte Info")
    err = capsys.readouterr().err
    assert err.count("einmalige Warnung") == 1
    assert "unterdrückte Info" not in err
