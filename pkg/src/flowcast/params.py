"""Named parameter storage and the two optimizers used for training."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractViolation
from .rng import RandomStream


class ParameterSet:
    """Unique-path map of parameter tensors with per-entry trainability.

    Mutation (gradient accumulation, optimizer updates) is single-writer;
    concurrent readers are safe once training has finished.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, path: str, value, trainable: bool = True) -> Tensor:
        if path in self._entries:
            raise ContractViolation(f"duplicate parameter path {path!r}")
        t = Tensor(value, requires_grad=trainable)
        self._entries[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._entries[path]

    def __contains__(self, path: str) -> bool:
        return path in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def paths(self):
        return list(self._entries)

    def n_values(self) -> int:
        return sum(t.data.size for t in self._entries.values())

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def set_trainable(self, trainable: bool, prefix: str = "") -> None:
        for path, t in self._entries.items():
            if path.startswith(prefix):
                t.requires_grad = trainable

    def state(self) -> dict[str, np.ndarray]:
        return {path: t.data.copy() for path, t in self._entries.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for path, value in state.items():
            if path not in self._entries:
                raise ContractViolation(f"unknown parameter path {path!r}")
            current = self._entries[path]
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != current.data.shape:
                raise ContractViolation(
                    f"shape mismatch for {path!r}: {arr.shape} vs {current.data.shape}"
                )
            current.data = arr.copy()


def glorot_uniform(stream: RandomStream, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return (stream.uniform(shape) * 2.0 - 1.0) * limit


class Sgd:
    """Plain stochastic gradient descent with fixed learning rate."""

    def __init__(self, params: ParameterSet, lr: float):
        self.params = params
        self.lr = float(lr)

    def step(self) -> None:
        for _, t in self.params.items():
            if t.requires_grad and t.grad is not None:
                t.data = t.data - self.lr * t.grad


class Adam:
    """Adam with bias correction; state keyed by parameter path."""

    def __init__(self, params: ParameterSet, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * np.sqrt(1.0 - b2**self._t) / (1.0 - b1**self._t)
        for path, t in self.params.items():
            if not (t.requires_grad and t.grad is not None):
                continue
            g = t.grad
            m = self._m.get(path)
            if m is None:
                m = np.zeros_like(t.data)
                self._m[path] = m
                self._v[path] = np.zeros_like(t.data)
            v = self._v[path]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            t.data = t.data - scale * m / (np.sqrt(v) + self.eps)
