"""Window encoder: pointwise projection, causal-convolution transformer
backbone, trend extraction over dyadic causal convolutions, and spectral
period extraction, concatenated into one representation per timestamp.

Every stage is causal, so the representation at time t never depends on
inputs after t; the tests assert this bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .augment import timestamp_mask
from .autodiff import Tensor
from .errors import ContractViolation
from .params import ParameterSet, glorot_uniform
from .rng import RandomStream
from .spectral import dft_bases

_NEG_MASK = -1e30


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 1
    latent_dim: int = 64      # projected input width
    model_dim: int = 64       # backbone embedding width
    heads: int = 4
    qkv_kernel: int = 3
    qkv_dilation: int = 1
    trend_convs: int = 4      # kernel sizes 2^i for i < trend_convs
    time_dim: int = 32
    freq_dim: int = 32
    fft_window: int = 64
    period_hidden: int = 64

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ContractViolation("model_dim must be divisible by heads")
        if min(self.latent_dim, self.model_dim, self.time_dim, self.freq_dim) < 1:
            raise ContractViolation("encoder dimensions must be positive")

    @property
    def repr_dim(self) -> int:
        return self.time_dim + self.freq_dim

    @property
    def n_bins(self) -> int:
        return self.fft_window // 2 + 1


def _attn_mask(t: int) -> np.ndarray:
    return np.triu(np.full((t, t), _NEG_MASK), k=1)


class Encoder:
    """Stateless view over an EncoderConfig plus its entries in a ParameterSet."""

    def __init__(self, config: EncoderConfig, params: ParameterSet, prefix: str = "encoder"):
        self.config = config
        self.params = params
        self.prefix = prefix
        cos_b, sin_b = dft_bases(config.fft_window)
        self._cos = Tensor(cos_b)
        self._sin = Tensor(sin_b)

    @classmethod
    def create(cls, config: EncoderConfig, params: ParameterSet,
               stream: RandomStream, prefix: str = "encoder") -> "Encoder":
        c = config
        add = params.add

        def dense(name, n_in, n_out):
            add(f"{prefix}.{name}.w", glorot_uniform(stream, (n_in, n_out), n_in, n_out))
            add(f"{prefix}.{name}.b", np.zeros(n_out))

        def conv(name, kernel, n_in, n_out, bias=True):
            fan_in = kernel * n_in
            add(f"{prefix}.{name}.w",
                glorot_uniform(stream, (kernel, n_in, n_out), fan_in, n_out))
            if bias:
                add(f"{prefix}.{name}.b", np.zeros(n_out))

        dense("proj.l1", c.in_channels, c.latent_dim)
        dense("proj.l2", c.latent_dim, c.latent_dim)
        # a key bias shifts every logit in a softmax row equally, so it could
        # never receive gradient; the key path is bias-free
        conv("attn.q", c.qkv_kernel, c.latent_dim, c.model_dim)
        conv("attn.k", c.qkv_kernel, c.latent_dim, c.model_dim, bias=False)
        conv("attn.v", c.qkv_kernel, c.latent_dim, c.model_dim)
        dense("attn.out", c.model_dim, c.model_dim)
        for i in range(c.trend_convs):
            conv(f"trend.c{i}", 2**i, c.model_dim, c.time_dim)
        dense("period.l1", c.model_dim * c.n_bins, c.period_hidden)
        dense("period.l2", c.period_hidden, c.freq_dim)
        return cls(config, params, prefix)

    def _p(self, name: str) -> Tensor:
        return self.params[f"{self.prefix}.{name}"]

    # -- stages ----------------------------------------------------------

    def project_input(self, window) -> Tensor:
        """Per-timestamp MLP into the latent width; no cross-time mixing."""
        x = ad.as_tensor(window)
        if x.data.shape[-1] != self.config.in_channels:
            raise ContractViolation(
                f"window has {x.data.shape[-1]} channels, config expects "
                f"{self.config.in_channels}"
            )
        h = ad.tanh(ad.affine(x, self._p("proj.l1.w"), self._p("proj.l1.b")))
        return ad.affine(h, self._p("proj.l2.w"), self._p("proj.l2.b"))

    def conv_trans_encode(self, z: Tensor, return_attn: bool = False):
        """Masked convolutional multi-head self-attention over (.., T, latent)."""
        c = self.config
        t_len = z.data.shape[-2]
        dil = c.qkv_dilation
        q = ad.causal_conv1d(z, self._p("attn.q.w"), self._p("attn.q.b"), dil)
        k = ad.causal_conv1d(z, self._p("attn.k.w"), None, dil)
        v = ad.causal_conv1d(z, self._p("attn.v.w"), self._p("attn.v.b"), dil)

        lead = z.data.shape[:-2]
        d_head = c.model_dim // c.heads

        def split_heads(x):
            x = ad.reshape(x, lead + (t_len, c.heads, d_head))
            axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
            return ad.transpose(x, axes)  # (.., H, T, d_head)

        qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
        logits = ad.matmul(qh, ad.transpose(kh, tuple(range(len(lead))) + (
            len(lead), len(lead) + 2, len(lead) + 1))) * (1.0 / np.sqrt(d_head))
        logits = logits + Tensor(_attn_mask(t_len))
        weights = ad.softmax(logits, axis=-1)
        mixed = ad.matmul(weights, vh)  # (.., H, T, d_head)
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        mixed = ad.transpose(mixed, axes)
        merged = ad.reshape(mixed, lead + (t_len, c.model_dim))
        out = ad.affine(merged, self._p("attn.out.w"), self._p("attn.out.b"))
        if return_attn:
            return out, weights.data
        return out

    def trend_extract(self, rt: Tensor) -> Tensor:
        """Average of dyadic-kernel causal convolutions of the embedding."""
        c = self.config
        total = None
        for i in range(c.trend_convs):
            branch = ad.causal_conv1d(rt, self._p(f"trend.c{i}.w"),
                                      self._p(f"trend.c{i}.b"))
            total = branch if total is None else total + branch
        return total * (1.0 / c.trend_convs)

    def period_spectrum(self, rt: Tensor) -> Tensor:
        """Magnitude spectrum of the causal window ending at each timestamp.

        Output (.., T, model_dim, n_bins); windows shorter than fft_window are
        extended by replicating the first row, so a constant embedding puts
        all its energy in bin 0 at every t.
        """
        windows = ad.causal_windows(rt, self.config.fft_window)
        re = ad.matmul(windows, self._cos)
        im = ad.matmul(windows, self._sin)
        return ad.magnitude(re, im)

    def period_extract(self, rt: Tensor) -> Tensor:
        c = self.config
        if rt.data.shape[-2] < 2:
            raise ContractViolation("period extraction needs at least 2 timestamps")
        spectrum = self.period_spectrum(rt)
        flat = ad.reshape(spectrum, rt.data.shape[:-1] + (c.model_dim * c.n_bins,))
        h = ad.tanh(ad.affine(flat, self._p("period.l1.w"), self._p("period.l1.b")))
        return ad.affine(h, self._p("period.l2.w"), self._p("period.l2.b"))

    # -- full pipeline -----------------------------------------------------

    def encode_parts(self, window, mask_stream: RandomStream | None = None,
                     mask_p: float = 0.5):
        """(time-domain, frequency-domain) representation sequences.

        Masking is applied between projection and backbone, and only when a
        mask stream is supplied (pretraining); inference is deterministic.
        """
        x = ad.as_tensor(window)
        if x.data.shape[-2] < 4:
            raise ContractViolation("encode requires window length >= 4")
        z = self.project_input(x)
        if mask_stream is not None:
            z, _ = timestamp_mask(z, mask_stream, mask_p)
        rt = self.conv_trans_encode(z)
        return self.trend_extract(rt), self.period_extract(rt)

    def encode(self, window, mask_stream: RandomStream | None = None,
               mask_p: float = 0.5) -> Tensor:
        r_time, r_freq = self.encode_parts(window, mask_stream, mask_p)
        return ad.concat([r_time, r_freq], axis=-1)

    def summary(self, window) -> np.ndarray:
        """Final-timestamp representation of one window, as a plain vector."""
        with ad.no_grad():
            r = self.encode(window)
        return r.data[..., -1, :].copy()
