"""Real-input discrete Fourier transform and the fixed DFT bases used by the
frequency-domain feature extractor."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def fft_real(signal) -> np.ndarray:
    """Spectrum of a real signal: entry k = sum_t signal[t] * exp(-2i*pi*k*t/n).

    Returns floor(n/2)+1 complex bins.
    """
    arr = np.asarray(signal, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ContractViolation("fft_real requires a non-empty 1-d signal")
    return np.fft.rfft(arr)


def ifft_real(spectrum, n: int) -> np.ndarray:
    """Inverse of fft_real for a length-n real signal."""
    if n < 1:
        raise ContractViolation("signal length must be >= 1")
    return np.fft.irfft(np.asarray(spectrum, dtype=np.complex128), n=n)


def dft_bases(window: int) -> tuple[np.ndarray, np.ndarray]:
    """Cosine/sine bases (window, floor(window/2)+1) for windowed magnitude spectra.

    For a causal window w ending at time t, (w @ cos)**2 + (w @ sin)**2 equals
    the squared magnitude of fft_real(w) bin-for-bin (up to a phase that the
    magnitude discards), which keeps the extractor inside the differentiable
    primitive set.
    """
    n_bins = window // 2 + 1
    taps = np.arange(window)[:, None]
    bins = np.arange(n_bins)[None, :]
    angle = 2.0 * np.pi * taps * bins / window
    return np.cos(angle), np.sin(angle)
