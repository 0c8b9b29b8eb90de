"""Reverse-mode automatic differentiation over a small, fixed primitive set.

All learned components in the package are compositions of the primitives
published here: affine maps (matmul + add), elementwise exp/log/sqrt/tanh/
sigmoid, softmax/logsumexp, concatenation, slicing/reshape/transpose,
reductions, and causal convolutions.  Keeping the set small makes the
finite-difference gradient suite exhaustive.

Values are float64 throughout.  Tensors are immutable once created; gradients
accumulate on ``.grad`` during ``backward()``.  Reductions used for losses can
run in canonical (sorted) accumulation order so that batch order never changes
the result bitwise.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, NumericError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _asarray(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """Immutable float64 array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = _asarray(data)
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("tensor constructed from non-finite data")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss down to every flagged leaf."""
        if self.data.size != 1:
            raise ContractViolation(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior activations never need their grads again
                if node is not self:
                    node.grad = None
                node._backward = None
                node._parents = ()

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, c):
        return pow_const(self, c)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False, canonical=False):
        return sum_(self, axis=axis, keepdims=keepdims, canonical=canonical)

    def mean(self, axis=None, keepdims=False, canonical=False):
        return mean_(self, axis=axis, keepdims=keepdims, canonical=canonical)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    if np.isnan(data).any():
        raise NumericError(f"NaN produced by primitive '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(out, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out, "mul", (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out, "div", (a, b), backward)


def pow_const(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = a.data**c

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c * a.data ** (c - 1.0))

    return _make(out, "pow", (a,), backward)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out)

    return _make(out, "exp", (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(out, "log", (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out)

    return _make(out, "sqrt", (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out * out))

    return _make(out, "tanh", (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out * (1.0 - out))

    return _make(out, "sigmoid", (a,), backward)


def magnitude(a, b, eps: float = 1e-12) -> Tensor:
    """Elementwise sqrt(a^2 + b^2 + eps); the tiny floor keeps the gradient
    finite where both parts vanish."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.sqrt(a.data * a.data + b.data * b.data + eps)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * a.data / out)
        if b.requires_grad:
            b._accumulate(g * b.data / out)

    return _make(out, "magnitude", (a, b), backward)


# ---------------------------------------------------------------------------
# softmax / logsumexp
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * out).sum(axis=axis, keepdims=True)
            a._accumulate((g - inner) * out)

    return _make(out, "softmax", (a,), backward)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp with canonical (sorted) accumulation order."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    ex = np.exp(a.data - m)
    total = np.sort(ex, axis=axis).sum(axis=axis, keepdims=True)
    out_full = np.log(total) + m
    out = out_full if keepdims else np.squeeze(out_full, axis=axis)

    def backward(g):
        if a.requires_grad:
            gg = g if keepdims else np.expand_dims(g, axis=axis)
            a._accumulate(gg * np.exp(a.data - out_full))

    return _make(out, "logsumexp", (a,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis=axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False, canonical=False) -> Tensor:
    a = as_tensor(a)
    if canonical:
        data = np.sort(a.data, axis=axis if axis is not None else None)
        out = data.sum(axis=axis, keepdims=keepdims) if axis is not None else data.sum()
        if axis is None and keepdims:
            out = np.asarray(out).reshape((1,) * a.data.ndim)
    else:
        out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_expand_reduced(np.asarray(g), a.data.shape, axis, keepdims))

    return _make(np.asarray(out), "sum", (a,), backward)


def mean_(a, axis=None, keepdims=False, canonical=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    total = sum_(a, axis=axis, keepdims=keepdims, canonical=canonical)
    return mul(total, 1.0 / n)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(out, "reshape", (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out = a.data.transpose(axes)
    inverse = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inverse))

    return _make(out, "transpose", (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    return _make(out, "concat", ts, backward)


def take(a, key) -> Tensor:
    """Basic slicing plus 1-D integer-array gather (embedding lookup)."""
    a = as_tensor(a)
    if isinstance(key, np.ndarray) and key.dtype.kind in "iu":
        idx = key

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.add.at(full, idx, g)
                a._accumulate(full)

        return _make(a.data[idx], "take", (a,), backward)

    out = a.data[key]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] += g
            a._accumulate(full)

    return _make(out, "take", (a,), backward)


def flip_last(a) -> Tensor:
    """Reverse the trailing axis (fixed coordinate permutation)."""
    a = as_tensor(a)
    out = a.data[..., ::-1].copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[..., ::-1])

    return _make(out, "flip_last", (a,), backward)


# ---------------------------------------------------------------------------
# affine map
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractViolation("matmul operands must have ndim >= 2")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(out, "matmul", (a, b), backward)


def affine(x, w, b=None) -> Tensor:
    """x @ w (+ b): the affine-map primitive every learned layer uses."""
    out = matmul(x, w)
    return out if b is None else add(out, b)


# ---------------------------------------------------------------------------
# causal convolutions
# ---------------------------------------------------------------------------

def causal_conv1d(x, w, b=None, dilation: int = 1) -> Tensor:
    """Left-padded dilated 1-d convolution along the second-to-last axis.

    x: (..., T, C_in); w: (K, C_in, C_out); output (..., T, C_out) where
    out[..., t, :] = sum_k x[..., t - (K-1-k)*dilation, :] @ w[k]
    (missing history treated as zero, so causality is structural).
    """
    x, w = as_tensor(x), as_tensor(w)
    K = w.data.shape[0]
    T = x.data.shape[-2]
    out_shape = x.data.shape[:-1] + (w.data.shape[2],)
    out = np.zeros(out_shape)
    for k in range(K):
        shift = (K - 1 - k) * dilation
        if shift >= T:
            continue
        if shift == 0:
            out += np.matmul(x.data, w.data[k])
        else:
            out[..., shift:, :] += np.matmul(x.data[..., : T - shift, :], w.data[k])

    def backward(g):
        gx = np.zeros_like(x.data) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for k in range(K):
            shift = (K - 1 - k) * dilation
            if shift >= T:
                continue
            gs = g[..., shift:, :] if shift else g
            if gx is not None:
                gx[..., : T - shift, :] += np.matmul(gs, w.data[k].T)
            if gw is not None:
                xs = x.data[..., : T - shift, :] if shift else x.data
                piece = np.matmul(np.swapaxes(xs, -1, -2), gs)
                while piece.ndim > 2:
                    piece = piece.sum(axis=0)
                gw[k] += piece
        if gx is not None:
            x._accumulate(gx)
        if gw is not None:
            w._accumulate(gw)

    result = _make(out, "causal_conv1d", (x, w), backward)
    return result if b is None else add(result, b)


def causal_windows(x, window: int) -> Tensor:
    """Per-timestamp causal window gather: (..., T, C) -> (..., T, C, window).

    Tap j of the output at time t is x[..., t - window + 1 + j, :]; history
    before the first timestamp is replicated from the first row so that a
    constant input yields constant windows at every t.
    """
    x = as_tensor(x)
    T = x.data.shape[-2]
    pad = np.repeat(x.data[..., :1, :], window - 1, axis=-2)
    padded = np.concatenate([pad, x.data], axis=-2)
    # sliding_window_view over the time axis appends the window axis last
    view = np.lib.stride_tricks.sliding_window_view(padded, window, axis=-2)
    out = np.ascontiguousarray(view)  # (..., T, C, window)

    def backward(g):
        if not x.requires_grad:
            return
        gp = np.zeros_like(padded)
        for j in range(window):
            gp[..., j : j + T, :] += g[..., :, :, j]
        gx = gp[..., window - 1 :, :].copy()
        gx[..., 0, :] += gp[..., : window - 1, :].sum(axis=-2)
        x._accumulate(gx)

    return _make(out, "causal_windows", (x,), backward)


# ---------------------------------------------------------------------------
# gradient evaluation entry point
# ---------------------------------------------------------------------------

def evaluate_with_gradients(build_loss: Callable[[], Tensor], params):
    """Run a program composed of the primitives above and differentiate it.

    ``build_loss`` must return a scalar Tensor.  Returns the loss value and a
    dict of gradients (path -> array, zeros when the parameter is unused) for
    every trainable entry of ``params``.
    """
    params.zero_grad()
    loss = build_loss()
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ContractViolation("program must produce a scalar Tensor loss")
    loss.backward()
    grads = {}
    for path, tensor in params.items():
        if tensor.requires_grad:
            if tensor.grad is None:
                grads[path] = np.zeros_like(tensor.data)
            else:
                grads[path] = tensor.grad.copy()
    return float(loss.data), grads
