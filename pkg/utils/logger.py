import os
import sys
from datetime import datetime
from typing import Any, Optional, Set, Tuple

from loguru import logger as _loguru


class PPLLogger:
    """
    Zentrales Logging für Trainingsläufe, Experimente und Oracle-Checks.
    Unterstützt tagesbasierte Log-Dateien und schrittweises Trainings-Logging.
    """

    _FORMAT = "{time:YYYY-MM-DD HH:mm:ss} - {extra[name]} - {level} - {message}"
    _registered: Set[Tuple[str, str]] = set()
    _default_removed = False
    _console_level = 20

    def __init__(self, log_dir: Optional[str] = "logs", log_level: str = "INFO", name: str = "ppl"):
        """
        Initialisiert den Logger.

        Args:
            log_dir: Verzeichnis für Log-Dateien (None = nur Konsole).
            log_level: Level der Konsolenausgabe (DEBUG, INFO, WARNING, ...).
            name: Komponentenname, der in jeder Zeile erscheint.
        """
        self.log_dir = log_dir
        self.log_level = log_level
        self.name = name
        self._configure_defaults()
        self.logger = _loguru.bind(name=name)

        self._setup_console_handler()
        if self.log_dir:
            os.makedirs(self.log_dir, exist_ok=True)
            self._setup_file_handler()

    @classmethod
    def _configure_defaults(cls) -> None:
        if not cls._default_removed:
            # loguru ships a DEBUG stderr sink without our format
            _loguru.remove()
            _loguru.configure(extra={"name": "ppl"})
            cls._default_removed = True

    def _setup_file_handler(self) -> None:
        """Konfiguriert die Tages-Log-Datei."""
        date_str = datetime.now().strftime("%Y-%m-%d")
        file_path = os.path.abspath(os.path.join(self.log_dir, f"ppl_{date_str}.log"))
        key = ("file", file_path)
        if key in self._registered:
            return
        _loguru.add(file_path, level="DEBUG", format=self._FORMAT, encoding="utf-8")
        self._registered.add(key)

    def _setup_console_handler(self) -> None:
        """Konfiguriert die Konsolenausgabe: eine Senke, Level der zuletzt erzeugten Instanz."""
        PPLLogger._console_level = _loguru.level(self.log_level).no
        key = ("console", "stderr")
        if key in self._registered:
            return
        # resolve sys.stderr at write time so captured streams keep working
        _loguru.add(lambda message: sys.stderr.write(message), level=0, format=self._FORMAT,
                    filter=lambda record: record["level"].no >= PPLLogger._console_level)
        self._registered.add(key)

    def train_log(self, phase: str, step: int, **metrics: Any) -> None:
        """
        Spezielles Logging für einen protokollierten Trainingsschritt.

        Args:
            phase: Trainingsphase (bc, critic, ppl, joint, qbc).
            step: Schrittzähler innerhalb der Phase.
            metrics: Benannte Kennzahlen des Schritts.
        """
        parts = " ".join(f"{key}={value:.6g}" for key, value in metrics.items())
        self.logger.debug(f"TRAIN - {phase.upper()} step={step} {parts}")

    def info(self, message: str) -> None:
        """Info-Level Log."""
        self.logger.info(message)

    def warning(self, message: str) -> None:
        """Warning-Level Log."""
        self.logger.warning(message)

    def error(self, message: str) -> None:
        """Error-Level Log."""
        self.logger.error(message)

    def exception(self, message: str) -> None:
        """Fehler samt Stacktrace, z. B. für abgebrochene Seeds."""
        self.logger.exception(message)
