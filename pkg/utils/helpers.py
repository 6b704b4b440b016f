import json
import math
import os
from typing import Any, Dict, List, Sequence, Tuple


class Helpers:
    """
    Kleine Hilfsfunktionen für Reports, Sweeps und Kurven.
    """

    @staticmethod
    def load_json(filepath: str) -> Dict[str, Any]:
        """
        Liest einen gespeicherten Report; fehlende Datei ergibt ein leeres Dict.
        """
        try:
            with open(filepath, "r", encoding="utf-8") as file:
                return json.load(file)
        except FileNotFoundError:
            return {}
        except json.JSONDecodeError as e:
            raise ValueError(f"Report {filepath} ist kein gültiges JSON: {e}")

    @staticmethod
    def save_json(filepath: str, data: Dict[str, Any]) -> None:
        """
        Schreibt einen Report mit sortierten Schlüsseln (byte-stabil bei gleichem Inhalt).
        """
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(filepath, "w", encoding="utf-8") as file:
            json.dump(data, file, indent=4, sort_keys=True)

    @staticmethod
    def mean_std(values: Sequence[float]) -> Tuple[float, float]:
        """
        Mittelwert und (Populations-)Standardabweichung; (0, 0) für leere Listen.
        """
        if not values:
            return 0.0, 0.0
        mean = math.fsum(values) / len(values)
        variance = math.fsum((v - mean) ** 2 for v in values) / len(values)
        return mean, math.sqrt(variance)

    @staticmethod
    def exponential_moving_average(values: Sequence[float], coef: float = 0.3) -> List[float]:
        """
        Glättet eine Kurve: ema_t = coef * ema_{t-1} + (1 - coef) * x_t.
        """
        smoothed: List[float] = []
        for value in values:
            if not smoothed:
                smoothed.append(float(value))
            else:
                smoothed.append(coef * smoothed[-1] + (1.0 - coef) * float(value))
        return smoothed
