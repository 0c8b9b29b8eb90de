"""Temporal fusion forecaster: a gated recurrent context encoder over the
near-term window, multi-head attention fusion of that context with stored
multiscale representations, and a conditional density head (normalizing flow,
or a diagonal Gaussian under the no-flow ablation) decoded autoregressively.

The long-history representations are read from the store at the greatest
anchor at or before the forecast origin and held fixed across the decoded
horizon; the recurrent context is updated every step with the previous value
(ground truth while training, the fed-back sample while forecasting).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import TimeSeries, covariate_matrix, sample_windows, time_features
from .errors import (ArtifactError, ConfigError, ContractViolation,
                     NumericError)
from .flow import ConditionalFlow, FlowConfig, GaussianHead
from .params import Adam, ParameterSet, glorot_uniform
from .rng import RandomStream
from .store import ReprStore

_NEG = -1e30


@dataclass(frozen=True)
class ForecasterConfig:
    value_dim: int
    cov_dim: int
    n_series: int
    repr_dim: int
    scale_names: tuple[str, ...]
    context_dim: int = 64
    id_dim: int = 8
    heads: int = 4
    flow_layers: int = 4
    flow_hidden: int = 64
    scale_clamp: float = 3.0
    no_repr: bool = False
    no_fusion: bool = False
    no_flow: bool = False

    def __post_init__(self):
        if self.context_dim % self.heads:
            raise ContractViolation("context_dim must be divisible by heads")

    @property
    def input_dim(self) -> int:
        return self.value_dim + self.cov_dim + self.id_dim

    @property
    def n_scales(self) -> int:
        return 0 if self.no_repr else len(self.scale_names)


@dataclass(frozen=True)
class TrainConfig:
    backcast: int = 96
    horizon: int = 48
    window_stride: int = 24
    batch_size: int = 16
    epochs: int = 2
    lr: float = 3e-3


@dataclass(frozen=True)
class TrainHistoryRow:
    epoch: int
    step: int
    nll: float


@dataclass(frozen=True)
class ForecastDistribution:
    """Per-step predictive samples with their median point forecast."""

    series_id: str
    origin_timestamp: int
    samples: np.ndarray      # (n_samples, horizon, value_dim)
    point: np.ndarray        # (horizon, value_dim), per-step sample median
    quantiles: np.ndarray    # (3, horizon, value_dim) at levels
    levels: tuple[float, ...] = (0.1, 0.5, 0.9)


class FlowFusionForecaster:

    def __init__(self, config: ForecasterConfig, params: ParameterSet):
        self.config = config
        self.params = params
        flow_config = FlowConfig(dim=config.value_dim, cond_dim=config.context_dim,
                                 layers=config.flow_layers, hidden=config.flow_hidden,
                                 scale_clamp=config.scale_clamp)
        head_cls = GaussianHead if config.no_flow else ConditionalFlow
        self.head = head_cls(flow_config, params, prefix="head")

    @classmethod
    def create(cls, config: ForecasterConfig, params: ParameterSet,
               stream: RandomStream) -> "FlowFusionForecaster":
        c = config
        add = params.add

        def dense(name, n_in, n_out, bias=True, w_scale=1.0):
            add(f"{name}.w", glorot_uniform(stream, (n_in, n_out), n_in, n_out) * w_scale)
            if bias:
                add(f"{name}.b", np.zeros(n_out))

        i_dim, d = c.input_dim, c.context_dim
        for gate in ("update", "reset", "cand"):
            dense(f"rnn.{gate}.x", i_dim, d)
            add(f"rnn.{gate}.h", glorot_uniform(stream, (d, d), d, d))
        add("embed.id", stream.normal((c.n_series, c.id_dim)) * 0.1)

        if not c.no_repr:
            for name in c.scale_names:
                dense(f"proj.{name}.l1", c.repr_dim, d)
                dense(f"proj.{name}.l2", d, d)
        if c.no_fusion:
            dense("nofusion", d + c.repr_dim, d)
        else:
            dense("fusion.q", d, d)
            dense("fusion.k", d, d, bias=False)  # key bias is softmax-invariant
            dense("fusion.v", d, d)
            dense("fusion.out", d, d)

        flow_config = FlowConfig(dim=c.value_dim, cond_dim=d, layers=c.flow_layers,
                                 hidden=c.flow_hidden, scale_clamp=c.scale_clamp)
        if c.no_flow:
            GaussianHead.create(flow_config, params, stream, prefix="head")
        else:
            ConditionalFlow.create(flow_config, params, stream, prefix="head")
        return cls(config, params)

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    # -- recurrent context -------------------------------------------------

    def gru_step(self, x: Tensor, h: Tensor) -> Tensor:
        p = self._p
        update = ad.sigmoid(ad.affine(x, p("rnn.update.x.w"), p("rnn.update.x.b"))
                            + ad.matmul(h, p("rnn.update.h")))
        reset = ad.sigmoid(ad.affine(x, p("rnn.reset.x.w"), p("rnn.reset.x.b"))
                           + ad.matmul(h, p("rnn.reset.h")))
        cand = ad.tanh(ad.affine(x, p("rnn.cand.x.w"), p("rnn.cand.x.b"))
                       + ad.matmul(reset * h, p("rnn.cand.h")))
        return (1.0 - update) * cand + update * h

    def context_encode(self, values, covariates) -> Tensor:
        """Scan the gated cell left-to-right over aligned (value, covariate)
        rows; returns the final hidden state (B, context_dim)."""
        values = ad.as_tensor(values)
        covariates = ad.as_tensor(covariates)
        if values.data.shape[-2] != covariates.data.shape[-2]:
            raise ContractViolation("values/covariates length mismatch")
        if values.data.shape[-2] < 1:
            raise ContractViolation("context window must have length >= 1")
        b = values.data.shape[0]
        h = Tensor(np.zeros((b, self.config.context_dim)))
        for t in range(values.data.shape[-2]):
            x = ad.concat([values[:, t, :], covariates[:, t, :]], axis=-1)
            h = self.gru_step(x, h)
        return h

    # -- fusion --------------------------------------------------------------

    def project_scales(self, reps: np.ndarray) -> Tensor:
        """Per-scale MLPs mapping (B, S, repr_dim) vectors into context width."""
        tokens = []
        p = self._p
        for s, name in enumerate(self.config.scale_names):
            vec = Tensor(reps[:, s, :])
            hidden = ad.tanh(ad.affine(vec, p(f"proj.{name}.l1.w"),
                                       p(f"proj.{name}.l1.b")))
            tok = ad.affine(hidden, p(f"proj.{name}.l2.w"), p(f"proj.{name}.l2.b"))
            tokens.append(tok.reshape(reps.shape[0], 1, self.config.context_dim))
        return ad.concat(tokens, axis=1)

    def fuse(self, context: Tensor, scale_tokens: Tensor | None,
             present: np.ndarray | None, raw_reps: np.ndarray | None = None,
             return_attn: bool = False):
        """Attention fusion of the context token with available scale tokens.

        Absent scales are masked out of the key axis (weight exactly zero), so
        partially covered anchors degrade gracefully; with every scale masked
        the attention reduces to the context token alone.
        """
        c = self.config
        if c.no_fusion:
            if raw_reps is None or present is None or not present.any():
                pooled = np.zeros((context.data.shape[0], c.repr_dim))
            else:
                weights = present[:, :, None].astype(np.float64)
                pooled = (raw_reps * weights).sum(1) / np.maximum(
                    weights.sum(1), 1.0)
            joined = ad.concat([context, Tensor(pooled)], axis=-1)
            fused = ad.affine(joined, self._p("nofusion.w"), self._p("nofusion.b"))
            return (fused, None) if return_attn else fused

        b = context.data.shape[0]
        c_token = context.reshape(b, 1, c.context_dim)
        if scale_tokens is None:
            tokens = c_token
            key_mask = np.zeros((b, 1, 1, 1))
        else:
            tokens = ad.concat([c_token, scale_tokens], axis=1)
            masked = np.concatenate(
                [np.zeros((b, 1)), np.where(present, 0.0, _NEG)], axis=1)
            key_mask = masked[:, None, None, :]

        p = self._p
        q = ad.affine(tokens, p("fusion.q.w"), p("fusion.q.b"))
        k = ad.matmul(tokens, p("fusion.k.w"))
        v = ad.affine(tokens, p("fusion.v.w"), p("fusion.v.b"))
        n_tok = tokens.data.shape[1]
        d_head = c.context_dim // c.heads

        def split(x):
            return ad.transpose(ad.reshape(x, (b, n_tok, c.heads, d_head)),
                                (0, 2, 1, 3))

        qh, kh, vh = split(q), split(k), split(v)
        logits = ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))) * (1.0 / np.sqrt(d_head))
        logits = logits + Tensor(key_mask)
        weights = ad.softmax(logits, axis=-1)
        mixed = ad.transpose(ad.matmul(weights, vh), (0, 2, 1, 3))
        merged = ad.reshape(mixed, (b, n_tok, c.context_dim))
        out = ad.affine(merged, p("fusion.out.w"), p("fusion.out.b")) + tokens
        fused = out[:, 0, :]
        return (fused, weights.data) if return_attn else fused

    def fusion_attention(self, context: Tensor, reps: np.ndarray,
                         present: np.ndarray, return_attn: bool = False):
        """Fused state for explicit (B, S, repr_dim) representations."""
        tokens = None
        if not self.config.no_repr and self.config.n_scales:
            tokens = self.project_scales(reps)
        return self.fuse(context, tokens, present, raw_reps=reps,
                         return_attn=return_attn)

    # -- training ------------------------------------------------------------

    def _id_rows(self, series_idx: np.ndarray) -> Tensor:
        return self._p("embed.id")[series_idx]

    def _decode_nll(self, batch: "_Batch") -> Tensor:
        """Teacher-forced mean negative log-likelihood over (window, step)."""
        ids = self._id_rows(batch.series_idx)
        b, n_back = batch.backcast.shape[:2]
        id_block = ids.reshape(b, 1, self.config.id_dim)
        id_rows = id_block * Tensor(np.ones((1, n_back, 1)))  # broadcast in-graph
        back_cov = ad.concat([Tensor(batch.backcast_cov), id_rows], axis=2)
        state = self.context_encode(Tensor(batch.backcast), back_cov)

        tokens = None
        if not self.config.no_repr and self.config.n_scales:
            tokens = self.project_scales(batch.reps)

        horizon = batch.forecast.shape[1]
        total = None
        prev = Tensor(batch.backcast[:, -1, :])
        for s in range(horizon):
            x = ad.concat([prev, Tensor(batch.forecast_cov[:, s, :]), ids],
                          axis=-1)
            state = self.gru_step(x, state)
            fused = self.fuse(state, tokens, batch.present, raw_reps=batch.reps)
            step_nll = -self.head.log_density(Tensor(batch.forecast[:, s, :]),
                                              fused).mean()
            total = step_nll if total is None else total + step_nll
            prev = Tensor(batch.forecast[:, s, :])
        return total * (1.0 / horizon)

    def train(self, series: list[TimeSeries], store: ReprStore | None,
              config: TrainConfig, stream: RandomStream,
              warn: bool = True) -> list[TrainHistoryRow]:
        """Fit Θ/Φ/Ψ and the projection MLPs by Adam on teacher-forced NLL."""
        records = _collect_windows(self, series, store, config, warn)
        if not records:
            raise ConfigError("no training windows available after store lookup")
        optimizer = Adam(self.params, config.lr)
        history: list[TrainHistoryRow] = []
        step_index = 0
        for epoch in range(config.epochs):
            order = stream.split(7000 + epoch).permutation(len(records))
            for start in range(0, len(records), config.batch_size):
                chunk = [records[i] for i in order[start:start + config.batch_size]]
                batch = _stack(chunk, self.config)
                try:
                    self.params.zero_grad()
                    nll = self._decode_nll(batch)
                    nll.backward()
                except NumericError as exc:
                    raise NumericError(
                        f"training aborted at epoch {epoch} batch {step_index}: {exc}"
                    ) from exc
                optimizer.step()
                history.append(TrainHistoryRow(epoch, step_index, float(nll.data)))
                step_index += 1
        return history

    # -- forecasting -----------------------------------------------------------

    def forecast(self, series: TimeSeries, origin_idx: int, horizon: int,
                 store: ReprStore | None, stream: RandomStream,
                 series_index: int, backcast: int,
                 n_samples: int = 100) -> ForecastDistribution:
        """Sample n_samples autoregressive trajectories from the origin.

        Each trajectory feeds its own sampled value back into the recurrent
        state; the stored multiscale representation is looked up once at the
        origin and reused across the horizon.
        """
        c = self.config
        if origin_idx + 1 < backcast:
            raise ContractViolation(
                f"origin {origin_idx} leaves no room for a backcast of {backcast}"
            )
        reps, present = _lookup_reps(self, series.series_id,
                                     int(series.timestamps[origin_idx]), store)
        future_cov = _future_covariates(series, origin_idx, horizon)

        with ad.no_grad():
            lo = origin_idx - backcast + 1
            id_row = self._p("embed.id").data[series_index]
            back_cov = np.concatenate(
                [covariate_matrix(series)[lo:origin_idx + 1],
                 np.tile(id_row, (backcast, 1))], axis=1)
            state = self.context_encode(
                Tensor(series.values[None, lo:origin_idx + 1, :]),
                Tensor(back_cov[None]))
            state = Tensor(np.repeat(state.data, n_samples, axis=0))

            tokens = None
            reps_tiled = np.repeat(reps, n_samples, axis=0)
            present_tiled = np.repeat(present, n_samples, axis=0)
            if not c.no_repr and c.n_scales:
                tokens = self.project_scales(reps_tiled)

            samples = np.empty((n_samples, horizon, c.value_dim))
            prev = Tensor(np.repeat(series.values[None, origin_idx, :],
                                    n_samples, axis=0))
            ids = np.tile(id_row, (n_samples, 1))
            for s in range(horizon):
                cov_s = np.concatenate(
                    [np.tile(future_cov[s], (n_samples, 1)), ids], axis=1)
                x = ad.concat([prev, Tensor(cov_s)], axis=-1)
                state = self.gru_step(x, state)
                fused = self.fuse(state, tokens, present_tiled, raw_reps=reps_tiled)
                draw = self.head.sample(fused, stream.split(s), n=1)[0]
                samples[:, s, :] = draw
                prev = Tensor(draw)

        quantiles = np.quantile(samples, (0.1, 0.5, 0.9), axis=0)
        return ForecastDistribution(
            series_id=series.series_id,
            origin_timestamp=int(series.timestamps[origin_idx]),
            samples=samples,
            point=quantiles[1].copy(),
            quantiles=quantiles,
        )


# ---------------------------------------------------------------------------
# batch plumbing
# ---------------------------------------------------------------------------

@dataclass
class _Batch:
    series_idx: np.ndarray     # (B,)
    backcast: np.ndarray       # (B, L, F)
    backcast_cov: np.ndarray   # (B, L, C)
    forecast: np.ndarray       # (B, N, F)
    forecast_cov: np.ndarray   # (B, N, C)
    reps: np.ndarray           # (B, S, K)
    present: np.ndarray        # (B, S) bool


def _lookup_reps(model: FlowFusionForecaster, sid: str, origin_ts: int,
                 store: ReprStore | None):
    c = model.config
    n_scales = len(c.scale_names)
    reps = np.zeros((1, n_scales, c.repr_dim))
    present = np.zeros((1, n_scales), dtype=bool)
    if c.no_repr:
        return reps, present
    if store is None:
        raise ArtifactError("no representation store supplied; re-run the "
                            "encode stage or pass --no-repr")
    anchor = store.nearest_anchor(sid, origin_ts)
    if anchor is None:
        raise ArtifactError(
            f"store has no anchor at or before origin {origin_ts} for series "
            f"{sid!r}; extend the encode stage or pass --no-repr"
        )
    rep = store.get(sid, anchor)
    for s, name in enumerate(c.scale_names):
        if name in rep.vectors:
            reps[0, s] = rep.vectors[name]
            present[0, s] = True
    return reps, present


def _collect_windows(model: FlowFusionForecaster, series: list[TimeSeries],
                     store: ReprStore | None, config: TrainConfig, warn: bool):
    c = model.config
    records = []
    skipped = 0
    for s_idx, ts in enumerate(series):
        covs = covariate_matrix(ts)
        try:
            windows = sample_windows(ts, config.backcast, config.horizon,
                                     config.window_stride)
        except ConfigError:
            continue
        for pair in windows:
            if c.no_repr:
                reps = np.zeros((1, len(c.scale_names), c.repr_dim))
                present = np.zeros((1, len(c.scale_names)), dtype=bool)
            else:
                try:
                    reps, present = _lookup_reps(model, ts.series_id,
                                                 pair.anchor_timestamp, store)
                except ArtifactError:
                    skipped += 1
                    continue
            lo = pair.anchor - config.backcast + 1
            records.append((s_idx, pair, covs[lo:pair.anchor + 1],
                            covs[pair.anchor + 1:pair.anchor + 1 + config.horizon],
                            reps[0], present[0]))
    if skipped and warn:
        warnings.warn(f"skipped {skipped} training window(s) without a stored "
                      "representation")
    return records


def _stack(chunk, config: ForecasterConfig) -> _Batch:
    return _Batch(
        series_idx=np.array([r[0] for r in chunk], dtype=np.int64),
        backcast=np.stack([r[1].backcast for r in chunk]),
        backcast_cov=np.stack([r[2] for r in chunk]),
        forecast=np.stack([r[1].forecast for r in chunk]),
        forecast_cov=np.stack([r[3] for r in chunk]),
        reps=np.stack([r[4] for r in chunk]),
        present=np.stack([r[5] for r in chunk]),
    )


def _future_covariates(series: TimeSeries, origin_idx: int, horizon: int) -> np.ndarray:
    """Known-future covariate rows for steps origin+1 .. origin+horizon."""
    end = origin_idx + 1 + horizon
    if end <= series.length:
        return covariate_matrix(series)[origin_idx + 1:end]
    if series.covariates.shape[1]:
        raise ConfigError(
            f"series {series.series_id!r} has file covariates but the horizon "
            "extends beyond the data; cannot synthesize them"
        )
    future_ts = series.timestamps[origin_idx] + series.stride * np.arange(
        1, horizon + 1, dtype=np.int64)
    return time_features(future_ts)
