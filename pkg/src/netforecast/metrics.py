"""Forecast error metrics: NRMSE series and valid prediction time."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError


def nrmse_series(truth, pred) -> np.ndarray:
    """``E(t) = ||u(t) - u~(t)|| / sqrt(<||u||^2>)`` with the average over ``truth``.

    1-D inputs are treated as scalar series (norm = absolute value).
    """
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape:
        raise InvalidArgumentError(f"shape mismatch: truth {truth.shape} vs prediction {pred.shape}")
    if truth.ndim == 1:
        truth, pred = truth[:, None], pred[:, None]
    norm = np.sqrt(np.mean(np.sum(truth ** 2, axis=1)))
    if not norm > 0:
        raise InvalidArgumentError("truth series has zero norm")
    return np.linalg.norm(truth - pred, axis=1) / norm


class ValidTime(NamedTuple):
    lyapunov_times: float
    censored: bool
    index: int


def valid_time(e_series, f: float = 0.1, dt_sample: float = 0.05, lambda_max: float = 1.0) -> ValidTime:
    """Time before ``E`` first exceeds ``f``, in units of ``1 / lambda_max``.

    If ``E`` never exceeds ``f`` the full horizon is returned with
    ``censored=True``.
    """
    if not 0 < f < 1:
        raise InvalidArgumentError(f"f must lie in (0, 1), got {f}")
    if not lambda_max > 0:
        raise InvalidArgumentError("lambda_max must be positive")
    e = np.asarray(e_series, dtype=float)
    above = np.flatnonzero(~(e <= f))  # NaN counts as a crossing
    if above.size == 0:
        return ValidTime(lambda_max * dt_sample * e.size, True, int(e.size))
    k = int(above[0])
    return ValidTime(lambda_max * dt_sample * k, False, k)


@dataclass
class ForecastResult:
    predicted: np.ndarray
    truth: np.ndarray
    nrmse: np.ndarray
    valid_time_lyap: float
    censored: bool
    f_threshold: float
    lambda_max: float
    dt_sample: float

    @classmethod
    def evaluate(cls, truth, predicted, dt_sample: float, lambda_max: float, f: float = 0.1) -> ForecastResult:
        e = nrmse_series(truth, predicted)
        vt = valid_time(e, f, dt_sample, lambda_max)
        return cls(np.asarray(predicted), np.asarray(truth), e, vt.lyapunov_times, vt.censored, f,
                   lambda_max, dt_sample)

    def summary(self) -> dict:
        return {"valid_time_lyap": self.valid_time_lyap, "f": self.f_threshold,
                "lambda_max": self.lambda_max, "censored": self.censored}

    def save(self, csv_path: str | Path, summary_path: str | Path | None = None) -> None:
        csv_path = Path(csv_path)
        vt = valid_time(self.nrmse, self.f_threshold, self.dt_sample, self.lambda_max)
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "E", "valid_flag"])
            for k, e in enumerate(self.nrmse):
                w.writerow([repr(k * self.dt_sample), repr(float(e)), int(k < vt.index)])
        summary_path = Path(summary_path) if summary_path else csv_path.with_suffix(".json")
        summary_path.write_text(json.dumps(self.summary(), indent=1))
