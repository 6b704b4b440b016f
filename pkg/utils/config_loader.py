import copy
import os
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values, load_dotenv

ENV_PREFIX = "PPL_"


def _flat_key(key: str) -> str:
    return key.replace(".", "_").upper()


class ConfigLoader:
    """
    Lädt die Experiment-Konfiguration aus .env und einer flachen KEY=VALUE-Datei.

    Schlüssel werden gepunktet angesprochen (``train.w``) und in Dateien flach
    geschrieben (``TRAIN_W=8``). Umgebungsvariablen mit Präfix ``PPL_``
    überschreiben jeden Wert (``PPL_TRAIN_W=12``).
    """

    def __init__(self, config_file: Optional[str] = None, env_file: str = ".env"):
        """
        Initialisiert den ConfigLoader und lädt Konfigurationen.
        """
        self.env_file = env_file
        self.config_file = config_file

        # Lade Umgebungsvariablen
        if env_file and os.path.exists(env_file):
            load_dotenv(env_file)

        # Standard-Konfiguration (Toy-Experiment)
        self.default_config: Dict[str, Dict[str, Any]] = {
            "train": {
                "w": 8.0,
                "gamma": 0.99,
                "lr_policy": 1e-3,
                "lr_critic": 1e-3,
                "lr_potential": 1e-3,
                "batch_size": 256,
                "steps_bc": 5000,
                "steps_critic": 5000,
                "steps_ppl": 5000,
                "mode": "one-step",
                "conservative_coef": 0.0,
                "polyak_tau": 0.05,
                "behavior_radius": 0.04,
                "seed": 0,
                "hidden_sizes": "32",
                "bc_weight": 1.0,
                "log_every": 100,
                "eval_every": 0,
            },
            "experiment": {
                "name": "toy-ppl",
                "dataset": "toy",
                "algorithm": "ppl",
                "eval_episodes": 1,
                "seeds": "0",
                "output_dir": "runs",
                "dataset_seed": 0,
                "tabular_episodes": 200,
                "max_concurrency": 4,
            },
            "sweep": {
                "w_values": "1,3,8,12",
            },
            "logging": {
                "level": "INFO",
                "dir": "logs",
            },
        }
        self._flat_index = {
            _flat_key(f"{section}.{name}"): (section, name)
            for section, values in self.default_config.items()
            for name in values
        }

        self.raw_text = ""
        self.unknown_keys: List[str] = []
        self.config_data = self._load_file_config()

    def _load_file_config(self) -> Dict[str, Any]:
        """
        Lädt die KEY=VALUE-Datei und merged sie mit den Defaults.
        """
        config = copy.deepcopy(self.default_config)
        if not self.config_file:
            return config
        if not os.path.exists(self.config_file):
            raise ValueError(f"Konfigurationsdatei nicht gefunden: {self.config_file}")

        with open(self.config_file, "r", encoding="utf-8") as file:
            self.raw_text = file.read()
        updates: Dict[str, Dict[str, Any]] = {}
        for key, value in dotenv_values(self.config_file).items():
            if value is None:
                continue
            target = self._flat_index.get(key.upper())
            if target is None:
                self.unknown_keys.append(key)
                continue
            section, name = target
            updates.setdefault(section, {})[name] = value
        self._deep_update(config, updates)
        return config

    def _deep_update(self, base: Dict, updates: Dict) -> None:
        """
        Aktualisiert rekursiv ein verschachteltes Dictionary.
        """
        for key, value in updates.items():
            if isinstance(value, dict) and key in base:
                self._deep_update(base[key], value)
            else:
                base[key] = value

    def get(self, key: str, default: Any = None) -> Any:
        """
        Holt einen Wert aus ENV > Datei > Default-Werten, typisiert wie der Default.
        """
        keys = key.split(".")
        fallback = self.default_config
        for k in keys:
            fallback = fallback.get(k, None) if isinstance(fallback, dict) else None

        env_value = os.getenv(ENV_PREFIX + _flat_key(key))
        if env_value is not None:
            return self._coerce(key, env_value, fallback)

        value: Any = self.config_data
        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return self._coerce(key, value, fallback)

    @staticmethod
    def _coerce(key: str, value: Any, like: Any) -> Any:
        if like is None or not isinstance(value, str):
            return value
        try:
            if isinstance(like, bool):
                return value.strip().lower() in ("1", "true", "yes", "on")
            if isinstance(like, int):
                return int(value)
            if isinstance(like, float):
                return float(value)
        except ValueError:
            raise ValueError(f"Ungültiger Wert für {key}: {value!r}")
        return value.strip()

    def get_list(self, key: str, cast=float) -> List[Any]:
        """
        Komma-separierte Liste (z. B. ``EXPERIMENT_SEEDS=0,1,2``).
        """
        raw = str(self.get(key, ""))
        try:
            return [cast(item) for item in raw.split(",") if item.strip()]
        except ValueError:
            raise ValueError(f"Ungültige Liste für {key}: {raw!r}")

    def train_config(self):
        """
        Baut die TrainConfig aus den ``train.*``-Schlüsseln.
        """
        from rl.training import TrainConfig

        values = {name: self.get(f"train.{name}") for name in self.default_config["train"]}
        values["hidden_sizes"] = tuple(self.get_list("train.hidden_sizes", int))
        return TrainConfig(**values)

    def experiment_spec(self, **overrides: Any):
        """
        Baut die ExperimentSpec; ``overrides`` (z. B. aus CLI-Flags) haben Vorrang.
        """
        from rl.harness import ExperimentSpec

        values = {name: self.get(f"experiment.{name}") for name in self.default_config["experiment"]}
        values["seeds"] = self.get_list("experiment.seeds", int)
        values["train"] = self.train_config()
        values["config_text"] = self.raw_text
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentSpec(**values)

    def validate(self) -> bool:
        """
        Validiert die Konfiguration auf Vollständigkeit und Konsistenz.
        """
        if self.unknown_keys:
            raise ValueError(f"Unbekannte Konfigurationsschlüssel: {', '.join(sorted(self.unknown_keys))}")

        for section, values in self.default_config.items():
            for name in values:
                self.get(f"{section}.{name}")

        if self.get("train.w") < 1.0:
            raise ValueError("train.w muss >= 1 sein.")
        if not 0.0 < self.get("train.gamma") < 1.0:
            raise ValueError("train.gamma muss in (0, 1) liegen.")
        if not self.get_list("experiment.seeds", int):
            raise ValueError("experiment.seeds darf nicht leer sein.")
        if any(w < 1.0 for w in self.get_list("sweep.w_values")):
            raise ValueError("sweep.w_values: jedes w muss >= 1 sein.")
        self.train_config()
        return True
