"""
Scores for probabilistic forecasts and state estimates against a reference.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DegenerateStdError

__all__ = [
    "EvalSeries",
    "log_predictive_probability",
    "coverage",
    "rmse",
    "MetricRow",
    "evaluate",
    "write_metrics_csv",
    "read_metrics_csv",
]


@dataclass
class EvalSeries:
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        self.reference = np.asarray(self.reference, dtype=float)
        n = len(self.times)
        if n < 1 or not (len(self.mean) == len(self.std) == len(self.reference) == n):
            raise ContractError("evaluation series must be non-empty and of equal length")
        if np.any(self.std < 0):
            raise ContractError("standard deviations must be non-negative")

    def window(self, mask) -> "EvalSeries":
        return EvalSeries(self.times[mask], self.mean[mask], self.std[mask], self.reference[mask])


def log_predictive_probability(s: EvalSeries) -> float:
    """Sum of Gaussian log-densities of the reference values; larger is better."""
    if np.any(s.std <= 0):
        raise DegenerateStdError("log predictive probability needs strictly positive std")
    var = s.std ** 2
    err = s.mean - s.reference
    return float(-np.sum(err ** 2 / (2.0 * var) + 0.5 * np.log(2.0 * math.pi * var)))


def coverage(s: EvalSeries, multiplier: float = 2.0) -> float:
    """Fraction of points with |reference - mean| <= multiplier * std."""
    return float(np.mean(np.abs(s.reference - s.mean) <= multiplier * s.std))


def rmse(s: EvalSeries) -> float:
    return float(np.sqrt(np.mean((s.mean - s.reference) ** 2)))


@dataclass
class MetricRow:
    method: str
    quantity: str
    generator: int
    window: str
    n: int
    lpp: float
    coverage: float
    rmse: float
    replicate: int = 0
    cadence: float = float("nan")
    noise_pct: float = 0.0


def evaluate(method, quantity, generator, window, s: EvalSeries, **tags) -> MetricRow:
    try:
        lpp = log_predictive_probability(s)
    except DegenerateStdError:
        lpp = float("nan")
    return MetricRow(method, quantity, generator, window, len(s.times), lpp, coverage(s), rmse(s), **tags)


_FIELDS = ["method", "generator", "quantity", "window", "n", "lpp", "coverage", "rmse",
           "replicate", "cadence", "noise_pct"]


def write_metrics_csv(rows, path) -> Path:
    """One line per (method, quantity, window) in the layout of the LPP tables."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_FIELDS)
        for r in rows:
            writer.writerow([r.method, r.generator, r.quantity, r.window, r.n,
                             repr(r.lpp), repr(r.coverage), repr(r.rmse),
                             r.replicate, repr(r.cadence), repr(r.noise_pct)])
    return path


def read_metrics_csv(path):
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(MetricRow(rec["method"], rec["quantity"], int(rec["generator"]), rec["window"],
                                  int(rec["n"]), float(rec["lpp"]), float(rec["coverage"]),
                                  float(rec["rmse"]), int(rec.get("replicate", 0)),
                                  float(rec.get("cadence", "nan")), float(rec.get("noise_pct", 0.0))))
    return rows
