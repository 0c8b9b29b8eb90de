"""Stochastic context views for contrastive pretraining: overlapping random
crops and Bernoulli timestamp masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, mul
from .errors import ContractViolation
from .rng import RandomStream


@dataclass(frozen=True)
class CropPair:
    """Two overlapping segments, 1-based inclusive: 0 < a1 < b1 < a2 < b2 <= T."""

    a1: int
    b1: int
    a2: int
    b2: int

    def __post_init__(self):
        if not (0 < self.a1 < self.b1 < self.a2 < self.b2):
            raise ContractViolation(f"crop indices must be strictly ordered, got {self}")

    @property
    def view_a(self) -> slice:
        return slice(self.a1 - 1, self.a2)

    @property
    def view_b(self) -> slice:
        return slice(self.b1 - 1, self.b2)

    @property
    def overlap_length(self) -> int:
        return self.a2 - self.b1 + 1

    @property
    def overlap_in_a(self) -> slice:
        """Overlap positions within view A's local coordinates."""
        return slice(self.b1 - self.a1, self.a2 - self.a1 + 1)

    @property
    def overlap_in_b(self) -> slice:
        return slice(0, self.a2 - self.b1 + 1)


def random_crop(length: int, stream: RandomStream) -> CropPair:
    """Uniform draw over all index tuples 0 < a1 < b1 < a2 < b2 <= length.

    Four distinct 1-based indices are drawn uniformly and sorted; each valid
    tuple corresponds to exactly one 4-subset, so the result is uniform.
    """
    if length < 4:
        raise ContractViolation(f"cropping needs length >= 4, got {length}")
    picked = stream.distinct_sorted(length, 4) + 1
    return CropPair(int(picked[0]), int(picked[1]), int(picked[2]), int(picked[3]))


def timestamp_mask(latent: Tensor, stream: RandomStream, p: float):
    """Zero whole timestamp rows where an independent Bernoulli(p) draw is 0.

    latent has shape (..., T, K); one mask bit per timestamp is shared across
    the trailing feature axis.  Returns (masked latent, mask of shape (..., T)).
    """
    if latent.data.ndim < 2 or latent.data.shape[-2] == 0:
        raise ContractViolation("latent must be non-empty with shape (..., T, K)")
    mask = stream.bernoulli(p, latent.data.shape[:-1])
    masked = mul(latent, Tensor(mask[..., None]))
    return masked, mask
