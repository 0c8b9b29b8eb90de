"""Conditional RealNVP density model.

A stack of affine coupling layers maps base noise z ~ N(0, I) to data y given
a conditioning vector h.  Each layer copies the first d = D//2 coordinates and
transforms the rest as y2 = z2 * exp(s(z1, h)) + t(z1, h); the log-determinant
is the sum of the s outputs, so density evaluation is exact.  Coordinates are
reversed between layers so every coordinate gets transformed.

For D == 1 the kept block is empty and s, t become functions of h alone,
which degenerates the layer to a conditional affine map; density and
invertibility stay exact.  Scale outputs are tanh-bounded to +-scale_clamp to
keep exp() well conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .params import ParameterSet, glorot_uniform
from .rng import RandomStream

_LOG_TWO_PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class FlowConfig:
    dim: int
    cond_dim: int
    layers: int = 4
    hidden: int = 64
    scale_clamp: float = 3.0

    def __post_init__(self):
        if self.dim < 1:
            raise ContractViolation("flow dimension must be >= 1")
        if self.layers < 1:
            raise ContractViolation("flow needs at least one layer")
        if self.dim == 1 and self.cond_dim == 0 and self.layers > 0:
            # legal: nets reduce to learned constants (plain affine flow)
            pass

    @property
    def split(self) -> int:
        return self.dim // 2


class ConditionalFlow:
    """Invertible map between noise and data with tractable log-density."""

    def __init__(self, config: FlowConfig, params: ParameterSet, prefix: str = "flow"):
        self.config = config
        self.params = params
        self.prefix = prefix

    @classmethod
    def create(cls, config: FlowConfig, params: ParameterSet,
               stream: RandomStream, prefix: str = "flow") -> "ConditionalFlow":
        d = config.split
        n_in = d + config.cond_dim
        n_out = config.dim - d
        for layer in range(config.layers):
            for net in ("s", "t"):
                base = f"{prefix}.l{layer}.{net}"
                params.add(f"{base}.w1",
                           glorot_uniform(stream, (n_in, config.hidden), n_in,
                                          config.hidden))
                params.add(f"{base}.b1", np.zeros(config.hidden))
                params.add(f"{base}.w2",
                           glorot_uniform(stream, (config.hidden, n_out),
                                          config.hidden, n_out) * 0.1)
                params.add(f"{base}.b2", np.zeros(n_out))
        return cls(config, params, prefix)

    def _p(self, name: str) -> Tensor:
        return self.params[f"{self.prefix}.{name}"]

    def _nets(self, layer: int, kept: Tensor, cond: Tensor | None):
        if cond is not None and self.config.split > 0:
            inp = ad.concat([kept, cond], axis=-1)
        elif cond is not None:
            inp = cond
        else:
            inp = kept
        outs = []
        for net in ("s", "t"):
            h = ad.tanh(ad.affine(inp, self._p(f"l{layer}.{net}.w1"),
                                  self._p(f"l{layer}.{net}.b1")))
            outs.append(ad.affine(h, self._p(f"l{layer}.{net}.w2"),
                                  self._p(f"l{layer}.{net}.b2")))
        scale = ad.tanh(outs[0]) * self.config.scale_clamp
        return scale, outs[1]

    def _check(self, x: Tensor, cond: Tensor | None) -> None:
        if x.data.shape[-1] != self.config.dim:
            raise ContractViolation(
                f"flow dimension mismatch: got {x.data.shape[-1]}, "
                f"expected {self.config.dim}"
            )
        cond_width = 0 if cond is None else cond.data.shape[-1]
        if cond_width != self.config.cond_dim:
            raise ContractViolation(
                f"condition width mismatch: got {cond_width}, "
                f"expected {self.config.cond_dim}"
            )

    def coupling_forward(self, z: Tensor, cond: Tensor | None, layer: int):
        """One layer, noise -> data; returns (y, per-sample logdet)."""
        d = self.config.split
        kept = z[..., :d]
        rest = z[..., d:]
        scale, shift = self._nets(layer, kept, cond)
        moved = rest * ad.exp(scale) + shift
        y = ad.concat([kept, moved], axis=-1) if d else moved
        return y, scale.sum(axis=-1)

    def coupling_inverse(self, y: Tensor, cond: Tensor | None, layer: int):
        """One layer, data -> noise; returns (z, per-sample logdet of inverse)."""
        d = self.config.split
        kept = y[..., :d]
        rest = y[..., d:]
        scale, shift = self._nets(layer, kept, cond)
        moved = (rest - shift) * ad.exp(-scale)
        z = ad.concat([kept, moved], axis=-1) if d else moved
        return z, -scale.sum(axis=-1)

    def forward(self, z, cond=None):
        """Full stack, noise -> data, with summed log-determinant."""
        z = ad.as_tensor(z)
        cond = None if cond is None else ad.as_tensor(cond)
        self._check(z, cond)
        logdet = None
        y = z
        for layer in range(self.config.layers):
            if layer:
                y = ad.flip_last(y)
            y, ld = self.coupling_forward(y, cond, layer)
            logdet = ld if logdet is None else logdet + ld
        return y, logdet

    def inverse(self, y, cond=None):
        y = ad.as_tensor(y)
        cond = None if cond is None else ad.as_tensor(cond)
        self._check(y, cond)
        logdet = None
        z = y
        for layer in reversed(range(self.config.layers)):
            z, ld = self.coupling_inverse(z, cond, layer)
            if layer:
                z = ad.flip_last(z)
            logdet = ld if logdet is None else logdet + ld
        return z, logdet

    def log_density(self, y, cond=None) -> Tensor:
        """log p(y | cond) via change of variables, per sample."""
        z, logdet = self.inverse(y, cond)
        base = (z * z).sum(axis=-1) * (-0.5) - 0.5 * self.config.dim * _LOG_TWO_PI
        return base + logdet

    def sample(self, cond, stream: RandomStream, n: int = 1) -> np.ndarray:
        """n draws per condition row: returns (n, B, D) (no gradients)."""
        if n < 1:
            raise ContractViolation("need n >= 1 samples")
        cond = None if cond is None else ad.as_tensor(cond)
        rows = 1 if cond is None else cond.data.shape[0]
        z = stream.normal((n * rows, self.config.dim))
        with ad.no_grad():
            tiled = None if cond is None else Tensor(
                np.repeat(cond.data[None], n, axis=0).reshape(n * rows, -1))
            y, _ = self.forward(Tensor(z), tiled)
        return y.data.reshape(n, rows, self.config.dim)


class GaussianHead:
    """Diagonal-Gaussian conditional density (the no-flow ablation)."""

    def __init__(self, config: FlowConfig, params: ParameterSet, prefix: str = "gauss"):
        self.config = config
        self.params = params
        self.prefix = prefix

    @classmethod
    def create(cls, config: FlowConfig, params: ParameterSet,
               stream: RandomStream, prefix: str = "gauss") -> "GaussianHead":
        for net in ("mean", "logvar"):
            params.add(f"{prefix}.{net}.w1",
                       glorot_uniform(stream, (config.cond_dim, config.hidden),
                                      config.cond_dim, config.hidden))
            params.add(f"{prefix}.{net}.b1", np.zeros(config.hidden))
            params.add(f"{prefix}.{net}.w2",
                       glorot_uniform(stream, (config.hidden, config.dim),
                                      config.hidden, config.dim) * 0.1)
            params.add(f"{prefix}.{net}.b2", np.zeros(config.dim))
        return cls(config, params, prefix)

    def _net(self, name: str, cond: Tensor) -> Tensor:
        p = self.params
        h = ad.tanh(ad.affine(cond, p[f"{self.prefix}.{name}.w1"],
                              p[f"{self.prefix}.{name}.b1"]))
        return ad.affine(h, p[f"{self.prefix}.{name}.w2"],
                         p[f"{self.prefix}.{name}.b2"])

    def _moments(self, cond: Tensor):
        mean = self._net("mean", cond)
        logvar = ad.tanh(self._net("logvar", cond)) * 5.0
        return mean, logvar

    def log_density(self, y, cond) -> Tensor:
        y, cond = ad.as_tensor(y), ad.as_tensor(cond)
        mean, logvar = self._moments(cond)
        diff = y - mean
        per_dim = logvar + diff * diff * ad.exp(-logvar) + _LOG_TWO_PI
        return per_dim.sum(axis=-1) * (-0.5)

    def sample(self, cond, stream: RandomStream, n: int = 1) -> np.ndarray:
        cond = ad.as_tensor(cond)
        rows = cond.data.shape[0]
        with ad.no_grad():
            mean, logvar = self._moments(cond)
        std = np.exp(0.5 * logvar.data)
        noise = stream.normal((n, rows, self.config.dim))
        return mean.data[None] + std[None] * noise
