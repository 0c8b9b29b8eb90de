"""Figure rendering for the CLI report paths.

Every command that emits delimited output also renders a matplotlib figure
next to it: loss curves for the two training stages, a fan chart for
forecasts, per-horizon bars for evaluation, and a preview (trace + magnitude
spectrum) for generated data.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .spectral import fft_real

_FIG_KW = dict(figsize=(8.0, 4.5), dpi=110)


def _finish(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_pretrain_curve(history, path) -> None:
    fig, ax = plt.subplots(**_FIG_KW)
    steps = np.arange(len(history))
    ax.plot(steps, [row.loss_total for row in history], label="total", lw=1.6)
    ax.plot(steps, [row.loss_time for row in history], label="time-domain", lw=1.0)
    ax.plot(steps, [row.loss_freq for row in history], label="frequency-domain", lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("contrastive loss")
    ax.legend(frameon=False)
    ax.set_title("representation pretraining")
    _finish(fig, path)


def save_train_curve(history, path) -> None:
    fig, ax = plt.subplots(**_FIG_KW)
    ax.plot([row.nll for row in history], lw=1.4, color="tab:purple")
    ax.set_xlabel("step")
    ax.set_ylabel("negative log-likelihood")
    ax.set_title("forecaster training")
    _finish(fig, path)


def save_forecast_fan(history_ts, history_values, dist, path) -> None:
    """History tail, sampled band (q10-q90), and the median point forecast."""
    fig, ax = plt.subplots(**_FIG_KW)
    horizon = dist.point.shape[0]
    stride = history_ts[1] - history_ts[0] if len(history_ts) > 1 else 1
    future_ts = history_ts[-1] + stride * np.arange(1, horizon + 1)
    ax.plot(history_ts, history_values[:, 0], color="0.3", lw=1.0, label="history")
    ax.fill_between(future_ts, dist.quantiles[0, :, 0], dist.quantiles[2, :, 0],
                    color="tab:blue", alpha=0.25, label="q10-q90")
    ax.plot(future_ts, dist.point[:, 0], color="tab:blue", lw=1.4, label="median")
    ax.axvline(history_ts[-1], color="0.6", lw=0.8, ls="--")
    ax.set_xlabel("timestamp")
    ax.set_ylabel("value")
    ax.legend(frameon=False)
    ax.set_title(f"{dist.series_id}: {horizon}-step forecast")
    _finish(fig, path)


def save_metrics_chart(rows, path) -> None:
    fig, ax = plt.subplots(**_FIG_KW)
    horizons = [str(r.horizon) for r in rows]
    x = np.arange(len(rows))
    width = 0.38
    ax.bar(x - width / 2, [r.mse for r in rows], width, label="MSE")
    ax.bar(x + width / 2, [r.mae for r in rows], width, label="MAE")
    ax.set_xticks(x, horizons)
    ax.set_xlabel("horizon")
    ax.set_ylabel("error")
    ax.legend(frameon=False)
    ax.set_title("forecast accuracy by horizon")
    _finish(fig, path)


def save_series_preview(series, path, max_points: int = 3000) -> None:
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8.0, 6.0), dpi=110)
    values = series.values[:max_points, 0]
    top.plot(series.timestamps[:max_points], values, lw=0.8, color="tab:green")
    top.set_title(f"{series.series_id} (first {len(values)} points)")
    top.set_xlabel("timestamp")
    top.set_ylabel("value")

    spectrum = np.abs(fft_real(series.values[:, 0] - series.values[:, 0].mean()))
    bins = np.arange(1, len(spectrum))
    bottom.plot(bins, spectrum[1:], lw=0.8, color="tab:red")
    bottom.set_xlabel("frequency bin")
    bottom.set_ylabel("|spectrum|")
    bottom.set_xscale("log")
    _finish(fig, path)
