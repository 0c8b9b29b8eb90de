"""Synthetic workload generator: a deterministic mix of sinusoids and trend
plus seeded Gaussian noise.  The deterministic component depends only on the
spec (never on the seed), so different seeds differ in noise alone."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import TimeSeries
from .errors import ConfigError
from .rng import RandomStream


@dataclass(frozen=True)
class Sinusoid:
    period: float  # in timesteps
    amplitude: float = 1.0
    phase: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    length: int = 30_000
    stride: int = 300
    n_series: int = 1
    start: int = 1_600_041_600  # 2020-09-14 00:00 UTC, midnight-aligned
    sinusoids: tuple[Sinusoid, ...] = (Sinusoid(288.0), Sinusoid(2016.0))
    trend_slope: float = 0.0
    noise_sigma: float = 0.3
    series_phase_step: float = 0.7  # deterministic phase offset per series

    def __post_init__(self):
        if self.length < 1 or self.n_series < 1 or self.stride < 1:
            raise ConfigError("synth length, stride and n_series must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        for s in self.sinusoids:
            if s.period <= 0:
                raise ConfigError(f"sinusoid period must be positive, got {s.period}")


def deterministic_component(spec: SynthSpec, series_index: int) -> np.ndarray:
    t = np.arange(spec.length, dtype=np.float64)
    out = spec.trend_slope * t
    shift = spec.series_phase_step * series_index
    for s in spec.sinusoids:
        out = out + s.amplitude * np.sin(2 * np.pi * t / s.period + s.phase + shift)
    return out


def generate(spec: SynthSpec, stream: RandomStream) -> list[TimeSeries]:
    out = []
    timestamps = spec.start + np.arange(spec.length, dtype=np.int64) * spec.stride
    for i in range(spec.n_series):
        noise = stream.split(i).normal((spec.length,)) * spec.noise_sigma
        values = deterministic_component(spec, i) + noise
        out.append(TimeSeries(f"synth{i}", timestamps, values[:, None]))
    return out
