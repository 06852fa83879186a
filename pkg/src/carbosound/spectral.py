"""One-sided DFT, periodogram PSD and unwrapped phase spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .errors import AllBelowFloor, UnknownWindow
from .signal_model import Waveform

WINDOWS = ("rectangular", "hann")
PHASE_FLOOR_REL = 1e-4


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Complex one-sided DFT coefficients.

    ``coeffs[k] = sum_n x[n] exp(-2j*pi*k*n/n_fft)`` for ``k = 0..n_fft//2``;
    phases are therefore referenced to the first sample of the record.
    ``n`` is the original sample count, ``n_fft`` the transform length
    (larger only when zero padding was requested).
    """

    freqs: np.ndarray
    coeffs: np.ndarray
    df: float
    n: int
    n_fft: int
    dt: float


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    freqs: np.ndarray
    psd: np.ndarray
    df: float
    window: str

    def band_power(self, lo: float, hi: float) -> float:
        sel = (self.freqs >= lo) & (self.freqs <= hi)
        return float(np.sum(self.psd[sel]) * self.df)


@dataclass(frozen=True, eq=False)
class PhaseCurve:
    """Unwrapped phase on the bins that passed the amplitude floor.

    ``bins`` holds the indices into the parent spectrum, so gaps left by
    excluded bins remain visible.
    """

    freqs: np.ndarray
    phase: np.ndarray
    bins: np.ndarray
    magnitude: np.ndarray


def _fft_length(n: int, pad_pow2: bool) -> int:
    if not pad_pow2:
        return n
    return 1 << max(0, (n - 1).bit_length())


def dft(w: Waveform, pad_pow2: bool = False) -> Spectrum:
    """One-sided DFT of a waveform.

    ``pad_pow2`` zero-pads to the next power of two, which refines the bin
    spacing only; it never rescales coefficients.
    """
    n_fft = _fft_length(w.n, pad_pow2)
    coeffs = np.fft.rfft(w.samples, n=n_fft)
    freqs = np.fft.rfftfreq(n_fft, d=w.dt)
    return Spectrum(freqs, coeffs, 1.0 / (n_fft * w.dt), w.n, n_fft, w.dt)


def _window(name: str, n: int) -> np.ndarray:
    if name == "rectangular":
        return np.ones(n)
    if name == "hann":
        return get_window("hann", n, fftbins=True)
    raise UnknownWindow(f"unknown window {name!r}", allowed=list(WINDOWS))


def power_spectral_density(
    w: Waveform, window: str = "rectangular", pad_pow2: bool = False
) -> PowerSpectrum:
    """Single-segment periodogram in V^2/Hz.

    ``psd[k] = c_k |X_k|^2 dt / (N U)`` with ``U = mean(window**2)`` and
    ``c_k = 2`` except at DC and Nyquist. With the rectangular window the
    integral ``sum(psd) * df`` equals the mean-square value of the record.
    """
    win = _window(window, w.n)
    u = float(np.mean(win**2))
    n_fft = _fft_length(w.n, pad_pow2)
    x = np.fft.rfft(w.samples * win, n=n_fft)
    psd = (np.abs(x) ** 2) * (w.dt / (w.n * u))
    if n_fft % 2 == 0:
        psd[1:-1] *= 2.0
    else:
        psd[1:] *= 2.0
    freqs = np.fft.rfftfreq(n_fft, d=w.dt)
    return PowerSpectrum(freqs, psd, 1.0 / (n_fft * w.dt), window)


def unwrap_phase(wrapped: np.ndarray) -> np.ndarray:
    """Remove 2*pi jumps so that every successive step lies in (-pi, pi]."""
    wrapped = np.asarray(wrapped, dtype=np.float64)
    if wrapped.size < 2:
        return wrapped.copy()
    steps = np.diff(wrapped)
    folded = math.pi - np.mod(math.pi - steps, 2.0 * math.pi)
    out = np.empty_like(wrapped)
    out[0] = wrapped[0]
    out[1:] = wrapped[0] + np.cumsum(folded)
    # keep out - wrapped an exact multiple of 2*pi where representable
    k = np.round((out - wrapped) / (2.0 * math.pi))
    return wrapped + 2.0 * math.pi * k


def phase_spectrum(s: Spectrum, floor_rel: float = PHASE_FLOOR_REL) -> PhaseCurve:
    """Unwrapped phase of the bins with ``|X| >= floor_rel * max|X|``.

    Bins below the floor carry noise-dominated phase and are dropped before
    unwrapping, so unwrapping runs over the retained subsequence.
    """
    mag = np.abs(s.coeffs)
    peak = float(mag.max()) if mag.size else 0.0
    if peak == 0.0:
        raise AllBelowFloor("spectrum is identically zero")
    keep = np.flatnonzero(mag >= floor_rel * peak)
    if keep.size == 0:
        raise AllBelowFloor("no bin passes the amplitude floor")
    phase = unwrap_phase(np.angle(s.coeffs[keep]))
    return PhaseCurve(s.freqs[keep], phase, keep, mag[keep])


def spectrum_rows(s: Spectrum) -> list[tuple[float, float, float]]:
    """Rows ``(freq_hz, re, im)`` for CSV export."""
    return list(zip(s.freqs.tolist(), s.coeffs.real.tolist(), s.coeffs.imag.tolist()))


def psd_rows(ps: PowerSpectrum) -> list[tuple[float, float]]:
    return list(zip(ps.freqs.tolist(), ps.psd.tolist()))
