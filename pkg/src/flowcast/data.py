"""Series ingestion, chronological splitting, window sampling, normalization,
covariate encoding, and point-forecast metrics."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation, DataError

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TimeSeries:
    """Fixed-stride series: values (T, F) plus per-timestamp covariates (T, C)."""

    series_id: str
    timestamps: np.ndarray
    values: np.ndarray
    covariates: np.ndarray = field(default=None)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        covs = self.covariates
        covs = np.zeros((len(ts), 0)) if covs is None else np.asarray(covs, np.float64)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "covariates", covs)
        if len(ts) != len(vals) or len(ts) != len(covs):
            raise ContractViolation(
                f"series {self.series_id!r}: timestamps/values/covariates misaligned"
            )
        if len(ts) >= 2:
            deltas = np.diff(ts)
            if np.any(deltas <= 0):
                raise DataError(f"series {self.series_id!r}: timestamps not increasing")
            if np.any(deltas != deltas[0]):
                raise DataError(f"series {self.series_id!r}: non-constant stride")
        if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(covs)):
            raise DataError(f"series {self.series_id!r}: non-finite values")

    @property
    def length(self) -> int:
        return len(self.timestamps)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def stride(self) -> int:
        if self.length < 2:
            raise ContractViolation("stride undefined for length-1 series")
        return int(self.timestamps[1] - self.timestamps[0])

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.series_id, self.timestamps[start:stop],
                          self.values[start:stop], self.covariates[start:stop])


@dataclass(frozen=True)
class WindowPair:
    """Adjacent backcast/forecast value blocks around an anchor index."""

    series_id: str
    anchor: int                 # index of the last backcast step within the split
    anchor_timestamp: int
    backcast: np.ndarray        # (L, F)
    forecast: np.ndarray        # (N, F)
    backcast_timestamps: np.ndarray
    forecast_timestamps: np.ndarray
    backcast_covariates: np.ndarray
    forecast_covariates: np.ndarray


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_csv(path) -> list[TimeSeries]:
    """Read `series_id,timestamp,value[,value_k...][,cov_*]` into series.

    Rows may arrive unsorted; they are grouped by series_id and sorted by
    timestamp.  Duplicate (series_id, timestamp) pairs and non-constant
    strides are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        value_cols, cov_cols = _parse_header(path, header)
        rows_by_series: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            sid = row[0]
            try:
                ts = int(row[1])
                vals = [float(row[i]) for i in value_cols]
                covs = [float(row[i]) for i in cov_cols]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparsable scalar ({exc})") from None
            rows_by_series.setdefault(sid, []).append((ts, vals, covs))

    out = []
    for sid in sorted(rows_by_series):
        rows = sorted(rows_by_series[sid], key=lambda r: r[0])
        ts = np.array([r[0] for r in rows], dtype=np.int64)
        dup = np.nonzero(np.diff(ts) == 0)[0]
        if dup.size:
            offenders = ", ".join(str(ts[i]) for i in dup[:5])
            raise DataError(f"series {sid!r}: duplicate timestamps ({offenders})")
        values = np.array([r[1] for r in rows], dtype=np.float64)
        covs = np.array([r[2] for r in rows], dtype=np.float64).reshape(len(rows), -1)
        out.append(TimeSeries(sid, ts, values, covs))
    return out


def _parse_header(path, header: list[str]):
    if len(header) < 3 or header[0] != "series_id" or header[1] != "timestamp":
        raise DataError(f"{path}: header must start with series_id,timestamp,value")
    value_cols, cov_cols = [], []
    for i, name in enumerate(header[2:], start=2):
        if name == "value" or name.startswith("value_"):
            value_cols.append(i)
        elif name.startswith("cov_"):
            cov_cols.append(i)
        else:
            raise DataError(f"{path}: unknown column {name!r}")
    if not value_cols:
        raise DataError(f"{path}: no value column")
    return value_cols, cov_cols


def write_csv(path, collection: list[TimeSeries]) -> None:
    path = Path(path)
    first = collection[0]
    names = ["series_id", "timestamp"]
    names += ["value" if i == 0 else f"value_{i + 1}" for i in range(first.n_channels)]
    names += [f"cov_{i + 1}" for i in range(first.covariates.shape[1])]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for ts in collection:
            for i in range(ts.length):
                row = [ts.series_id, int(ts.timestamps[i])]
                row += [repr(float(v)) for v in ts.values[i]]
                row += [repr(float(v)) for v in ts.covariates[i]]
                writer.writerow(row)


# ---------------------------------------------------------------------------
# splitting / normalization
# ---------------------------------------------------------------------------

def chronological_split(ts: TimeSeries, train_frac: float, val_frac: float):
    if train_frac <= 0 or val_frac < 0 or train_frac + val_frac >= 1:
        raise ConfigError(
            f"invalid split fractions ({train_frac}, {val_frac}): need "
            "train_frac > 0, val_frac >= 0, train_frac + val_frac < 1"
        )
    n = ts.length
    n_train = int(n * train_frac)
    n_val = int(n * val_frac)
    if n_train < 1 or n - n_train - n_val < 1:
        raise ConfigError(f"series {ts.series_id!r} too short to split (T={n})")
    return (ts.slice(0, n_train),
            ts.slice(n_train, n_train + n_val),
            ts.slice(n_train + n_val, n))


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics fit on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train_values: np.ndarray) -> "NormStats":
        mean = train_values.mean(axis=0)
        std = train_values.std(axis=0)
        flat = std < STD_FLOOR
        if np.any(flat):
            warnings.warn(
                f"{int(flat.sum())} near-constant channel(s); std floored at {STD_FLOOR}"
            )
            std = np.where(flat, STD_FLOOR, std)
        return cls(mean=mean, std=std)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def normalize_series(ts: TimeSeries, stats: NormStats) -> TimeSeries:
    return TimeSeries(ts.series_id, ts.timestamps, stats.normalize(ts.values),
                      ts.covariates)


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

def window_count(t_split: int, backcast: int, horizon: int, stride: int) -> int:
    if t_split < backcast + horizon:
        return 0
    return (t_split - backcast - horizon) // stride + 1


def sample_windows(split: TimeSeries, backcast: int, horizon: int,
                   stride: int = 1) -> list[WindowPair]:
    """Every (backcast, forecast) pair whose anchor advances by `stride`."""
    if backcast < 1 or horizon < 1 or stride < 1:
        raise ContractViolation("backcast, horizon and stride must be >= 1")
    n = split.length
    if n < backcast + horizon:
        raise ConfigError(
            f"split of length {n} cannot form one window pair; minimum T is "
            f"{backcast + horizon} (backcast {backcast} + horizon {horizon})"
        )
    pairs = []
    for anchor in range(backcast - 1, n - horizon, stride):
        lo, hi = anchor - backcast + 1, anchor + 1
        pairs.append(WindowPair(
            series_id=split.series_id,
            anchor=anchor,
            anchor_timestamp=int(split.timestamps[anchor]),
            backcast=split.values[lo:hi],
            forecast=split.values[hi:hi + horizon],
            backcast_timestamps=split.timestamps[lo:hi],
            forecast_timestamps=split.timestamps[hi:hi + horizon],
            backcast_covariates=split.covariates[lo:hi],
            forecast_covariates=split.covariates[hi:hi + horizon],
        ))
    return pairs


# ---------------------------------------------------------------------------
# covariates
# ---------------------------------------------------------------------------

def time_features(timestamps: np.ndarray) -> np.ndarray:
    """Calendar features per timestamp, each scaled into [-0.5, 0.5]:
    fraction-of-day, day-of-week, day-of-month, day-of-year."""
    ts = np.asarray(timestamps, dtype=np.int64)
    frac_of_day = (ts % 86400) / 86400.0 - 0.5
    epoch_days = ts // 86400
    day_of_week = ((epoch_days + 3) % 7) / 6.0 - 0.5  # 1970-01-01 was a Thursday
    uniq, inverse = np.unique(epoch_days, return_inverse=True)
    dom = np.empty(len(uniq))
    doy = np.empty(len(uniq))
    for i, day in enumerate(uniq):
        d = date.fromordinal(_EPOCH_ORDINAL + int(day))
        dom[i] = (d.day - 1) / 30.0 - 0.5
        doy[i] = (d.timetuple().tm_yday - 1) / 365.0 - 0.5
    return np.column_stack([
        frac_of_day,
        day_of_week,
        dom[inverse],
        np.minimum(doy[inverse], 0.5),
    ])


def covariate_matrix(ts: TimeSeries) -> np.ndarray:
    """Time features followed by any covariate columns from the data file."""
    return np.concatenate([time_features(ts.timestamps), ts.covariates], axis=1)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def mse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred, np.float64), np.asarray(truth, np.float64)
    if pred.shape != truth.shape:
        raise ContractViolation(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred, np.float64), np.asarray(truth, np.float64)
    if pred.shape != truth.shape:
        raise ContractViolation(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))
