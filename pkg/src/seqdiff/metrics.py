"""Continuous ranked probability score over feature-summed forecasts.

The forecast CDF is the right-continuous empirical step function of the
sorted quantile estimates, and the score integral is evaluated exactly
piecewise between the breakpoints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

QUANTILE_LEVELS = np.arange(1, 20) * 0.05       # 19 levels, 0.05 .. 0.95


@dataclass
class QuantileForecast:
    """Per-step quantile estimates (T, Q), nondecreasing within each step."""
    quantiles: np.ndarray
    sample_count: int

    def validate(self):
        if np.any(np.diff(self.quantiles, axis=-1) < 0):
            raise ContractError("quantiles must be nondecreasing within each step")


def crps_point(quantiles: np.ndarray, y: float) -> float:
    """Exact integral of (F(z) - 1{y <= z})^2 dz for the step CDF of
    `quantiles` (F jumps by 1/Q at each sorted quantile)."""
    q = np.asarray(quantiles, dtype=np.float64)
    if np.any(np.diff(q) < 0):
        raise ContractError("quantiles must be nondecreasing")
    y = float(y)
    points = np.concatenate([q, [y]])
    order = np.argsort(points, kind="stable")
    points = points[order]
    # F just right of each breakpoint: +1/Q per quantile passed, 0 per y
    is_q = (order < q.size).astype(np.float64)
    f_right = np.cumsum(is_q) / q.size
    ind_right = (points >= y).astype(np.float64)
    gaps = np.diff(points)
    return float(np.sum((f_right[:-1] - ind_right[:-1]) ** 2 * gaps))


def crps_average(forecast: QuantileForecast, truth: np.ndarray) -> float:
    """Mean crps_point over a prediction window."""
    truth = np.asarray(truth, dtype=np.float64)
    if forecast.quantiles.shape[0] != truth.shape[0]:
        raise ContractError("forecast and truth windows differ in length")
    forecast.validate()
    return float(np.mean([crps_point(forecast.quantiles[t], truth[t])
                          for t in range(truth.shape[0])]))


def crps_sum(samples: np.ndarray, truth: np.ndarray) -> tuple[float, QuantileForecast]:
    """Feature-summed CRPS over a window.

    samples: (N, T, D) forecast trajectories; truth: (T, D). Features are
    summed per step, 19 quantiles estimated from the N samples, and
    crps_point averaged over the window.
    """
    samples = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[0] < 2:
        raise ContractError("crps_sum needs at least two (N, T, D) sample trajectories")
    if samples.shape[1:] != truth.shape:
        raise ContractError(f"window mismatch: samples {samples.shape[1:]} vs truth {truth.shape}")
    sums = samples.sum(axis=2)                   # (N, T)
    truth_sum = truth.sum(axis=1)                # (T,)
    quantiles = np.quantile(sums, QUANTILE_LEVELS, axis=0).T   # (T, 19)
    forecast = QuantileForecast(quantiles, samples.shape[0])
    return crps_average(forecast, truth_sum), forecast


def persistence_crps_sum(last_context: np.ndarray, truth: np.ndarray) -> float:
    """Baseline: a point forecast repeating the last context value."""
    point = float(np.sum(last_context))
    quantiles = np.full((truth.shape[0], QUANTILE_LEVELS.size), point)
    return crps_average(QuantileForecast(quantiles, 1), np.asarray(truth).sum(axis=1))
