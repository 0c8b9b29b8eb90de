"""Rolling-origin evaluation over the test split, plus the seasonal-naive
reference forecaster used as an accuracy yardstick."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import TimeSeries, mae, mse
from .errors import ConfigError


@dataclass(frozen=True)
class MetricsRow:
    dataset: str
    horizon: int
    mse: float
    mae: float
    seed: int


def forecast_origins(split_length: int, backcast: int, horizon: int,
                     stride: int) -> list[int]:
    """Origin indices (last observed step) spaced by stride inside a split."""
    first = backcast - 1
    last = split_length - 1 - horizon
    if last < first:
        raise ConfigError(
            f"test split of {split_length} cannot host backcast {backcast} + "
            f"horizon {horizon}"
        )
    return list(range(first, last + 1, stride))


def seasonal_naive(series_values: np.ndarray, origin_idx: int, horizon: int,
                   period: int) -> np.ndarray:
    """Repeat the value one period earlier: prediction[s] = y[origin+1+s-period]."""
    start = origin_idx + 1 - period
    if start < 0:
        raise ConfigError(f"origin {origin_idx} has no history one period back")
    idx = np.arange(start, start + horizon)
    wrapped = np.where(idx <= origin_idx, idx, idx - period)
    if np.any(wrapped < 0):
        raise ConfigError("horizon exceeds available seasonal history")
    return series_values[wrapped]


def evaluate_forecasts(predict: Callable[[TimeSeries, int, int], np.ndarray],
                       series: list[TimeSeries], origins: list[int],
                       horizon: int) -> tuple[float, float]:
    """Pooled MSE/MAE of `predict(series, origin, horizon)` across all
    (series, origin) pairs; errors are averaged over every step and channel."""
    preds, truths = [], []
    for ts in series:
        for origin in origins:
            pred = predict(ts, origin, horizon)
            truth = ts.values[origin + 1:origin + 1 + horizon]
            if pred.shape != truth.shape:
                raise ConfigError(
                    f"prediction shape {pred.shape} does not match truth "
                    f"{truth.shape} at origin {origin}"
                )
            preds.append(pred)
            truths.append(truth)
    stacked_p = np.concatenate(preds, axis=0)
    stacked_t = np.concatenate(truths, axis=0)
    return mse(stacked_p, stacked_t), mae(stacked_p, stacked_t)
