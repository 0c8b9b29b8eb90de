"""Independent oracles shared by the test suite.

These deliberately avoid the library's own fast paths: gradients come from
central finite differences, spectra from a naive O(n^2) DFT, losses from
scalar loops, so that each fast implementation is checked against a slow
re-derivation.
"""

from __future__ import annotations

import numpy as np


def finite_difference_grads(build_loss, params, step: float = 1e-4) -> dict:
    """Central-difference gradient of a scalar program w.r.t. every trainable
    entry of ``params`` (mutates parameter data in place, restores it)."""
    grads = {}
    for path, tensor in params.items():
        if not tensor.requires_grad:
            continue
        flat = tensor.data.ravel()
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(build_loss().data)
            flat[i] = orig - step
            down = float(build_loss().data)
            flat[i] = orig
            g[i] = (up - down) / (2.0 * step)
        grads[path] = g.reshape(tensor.data.shape)
    return grads


def assert_grads_close(analytic: dict, numeric: dict, rtol: float = 1e-3,
                       atol: float = 1e-6) -> None:
    assert set(analytic) == set(numeric)
    for path in analytic:
        np.testing.assert_allclose(
            analytic[path], numeric[path], rtol=rtol, atol=atol,
            err_msg=f"gradient mismatch for {path}",
        )


def fd_probe(build_loss, tensor, flat_index: int, step: float = 1e-4) -> float:
    """Central-difference derivative w.r.t. one flat parameter entry."""
    flat = tensor.data.ravel()
    orig = flat[flat_index]
    flat[flat_index] = orig + step
    up = float(build_loss().data)
    flat[flat_index] = orig - step
    down = float(build_loss().data)
    flat[flat_index] = orig
    return (up - down) / (2.0 * step)


def naive_dft(signal: np.ndarray) -> np.ndarray:
    """O(n^2) real-input DFT, bins 0..floor(n/2)."""
    x = np.asarray(signal, dtype=np.float64)
    n = x.size
    k = np.arange(n // 2 + 1)
    t = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(k, t) / n)
    return basis @ x
