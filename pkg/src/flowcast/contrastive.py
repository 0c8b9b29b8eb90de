"""Time- and frequency-domain contrastive objectives and the pretraining loop
that fits the encoder.

Both losses anchor on view A.  For each (window i, overlap position t) the
positive is the same position in view B; time-domain negatives are other
overlap positions of the same window, frequency-domain negatives are other
windows of the batch at the same position.  The crop is drawn once per batch
so positions align across the batch, which is what makes the cross-window
denominator well defined.  Reductions of loss terms use canonical (sorted)
accumulation, making the losses bitwise invariant to window order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .augment import CropPair, random_crop
from .autodiff import Tensor
from .data import TimeSeries
from .encoder import Encoder, EncoderConfig
from .errors import ContractViolation, NumericError
from .params import ParameterSet, Sgd
from .rng import RandomStream

_NEG = -1e30


@dataclass(frozen=True)
class PretrainConfig:
    window_length: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    epochs: int = 5
    steps_per_epoch: int = 10
    mask_p: float = 0.5
    freeze_batch: bool = False  # reuse one batch/crop/mask every step


@dataclass(frozen=True)
class PretrainBatch:
    """One step's two encoded context views, restricted to the crop overlap."""

    crops: tuple[CropPair, ...]          # one per window (identical by design)
    time_a: Tensor                       # (B, m, time_dim)
    time_b: Tensor
    freq_a: Tensor                       # (B, m, freq_dim)
    freq_b: Tensor


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    step: int
    loss_time: float
    loss_freq: float
    loss_total: float


def _diag_mask(m: int) -> Tensor:
    return Tensor(np.diag(np.full(m, _NEG)))


def _anchored_loss(anchor: Tensor, positive: Tensor) -> Tensor:
    """Shared InfoNCE shape: anchor/positive are (G, n, K); per group g the
    candidates for row i are all of positive[g] plus anchor[g] minus itself."""
    n = anchor.data.shape[1]
    swap = (0, 2, 1)
    sim_pos = ad.matmul(anchor, ad.transpose(positive, swap))      # (G, n, n)
    sim_self = ad.matmul(anchor, ad.transpose(anchor, swap)) + _diag_mask(n)
    candidates = ad.concat([sim_pos, sim_self], axis=2)            # (G, n, 2n)
    denominator = ad.logsumexp(candidates, axis=2)                 # (G, n)
    eye = Tensor(np.eye(n))
    matched = (sim_pos * eye).sum(axis=2)                          # (G, n)
    return (denominator - matched).mean(canonical=True)


def time_contrastive_loss(batch: PretrainBatch) -> Tensor:
    """Positives across views at one position; negatives across positions."""
    if batch.time_a.data.shape[1] < 1:
        raise ContractViolation("empty crop overlap")
    return _anchored_loss(batch.time_a, batch.time_b)


def freq_contrastive_loss(batch: PretrainBatch) -> Tensor:
    """Positives across views for one window; negatives across the batch."""
    swap = (1, 0, 2)
    return _anchored_loss(ad.transpose(batch.freq_a, swap),
                          ad.transpose(batch.freq_b, swap))


def total_loss(batch: PretrainBatch):
    """Sum of the per-term-averaged component losses."""
    l_time = time_contrastive_loss(batch)
    l_freq = freq_contrastive_loss(batch)
    return l_time + l_freq, l_time, l_freq


def encode_batch_views(encoder: Encoder, windows: np.ndarray, crop: CropPair,
                       stream: RandomStream, mask_p: float) -> PretrainBatch:
    """Encode both cropped views of a (B, T, F) window stack with independent
    timestamp masks, and slice out the aligned overlap representations."""
    view_a = Tensor(windows[:, crop.view_a, :])
    view_b = Tensor(windows[:, crop.view_b, :])
    ta, fa = encoder.encode_parts(view_a, stream.split(0), mask_p)
    tb, fb = encoder.encode_parts(view_b, stream.split(1), mask_p)
    in_a, in_b = crop.overlap_in_a, crop.overlap_in_b
    return PretrainBatch(
        crops=(crop,) * windows.shape[0],
        time_a=ta[:, in_a, :], time_b=tb[:, in_b, :],
        freq_a=fa[:, in_a, :], freq_b=fb[:, in_b, :],
    )


def _sample_windows(series: list[TimeSeries], length: int, count: int,
                    stream: RandomStream) -> np.ndarray:
    usable = [s for s in series if s.length >= length]
    if not usable:
        raise ContractViolation(
            f"no series long enough for pretrain windows of length {length}"
        )
    out = np.empty((count, length, usable[0].n_channels))
    which = stream.integers(0, len(usable), (count,))
    for i, s_idx in enumerate(which):
        s = usable[int(s_idx)]
        start = int(stream.integers(0, s.length - length + 1))
        out[i] = s.values[start:start + length]
    return out


def pretrain(series: list[TimeSeries], enc_config: EncoderConfig,
             config: PretrainConfig, stream: RandomStream):
    """Fit the encoder by gradient descent on the combined contrastive loss.

    Returns (params, encoder, history).  Zero epochs leaves the freshly
    initialized parameters untouched.
    """
    params = ParameterSet()
    encoder = Encoder.create(enc_config, params, stream.split(0))
    optimizer = Sgd(params, config.lr)
    history: list[HistoryRow] = []

    step_index = 0
    for epoch in range(config.epochs):
        for step in range(config.steps_per_epoch):
            draw = 0 if config.freeze_batch else step_index
            step_stream = stream.split(1 + draw)
            windows = _sample_windows(series, config.window_length,
                                      config.batch_size, step_stream.split(0))
            crop = random_crop(config.window_length, step_stream.split(1))
            try:
                batch = encode_batch_views(encoder, windows, crop,
                                           step_stream.split(2), config.mask_p)
                loss, l_time, l_freq = total_loss(batch)
                params.zero_grad()
                loss.backward()
            except NumericError as exc:
                raise NumericError(
                    f"pretraining aborted at epoch {epoch} step {step} "
                    f"(batch {step_index}): {exc}"
                ) from exc
            optimizer.step()
            history.append(HistoryRow(epoch, step, float(l_time.data),
                                      float(l_freq.data), float(loss.data)))
            step_index += 1
    return params, encoder, history
