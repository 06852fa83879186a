"""Spectral peaks, harmonic classification and non-linearity parameters.

Peak amplitudes are the square root of the PSD integrated over the
peak's -3 dB band, so ``beta = A2/A1**2`` and ``gamma = A3/A1**3`` are
built from band amplitudes rather than raw bin heights.

Band windows used by :func:`classify_harmonics` (``f0`` is the nominal
transducer frequency):

============= ===========================
fundamental   [0.3, 1.2] * f0
second        [1.5, 2.5] * f0
third         [2.5, 3.5] * f0
subharmonic   below 0.6 * fundamental
============= ===========================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from .errors import (
    CarbosoundError,
    NoFundamental,
    NonPositiveFundamental,
    NonPositiveInput,
    TooFewPoints,
    UnsortedDays,
)
from .regression import FitResult, ModelFamily, fit, linear_fit
from .spectral import PowerSpectrum

DEFAULT_MIN_PROMINENCE = 0.01
NOISE_FLOOR_RATIO = 100.0
FUNDAMENTAL_BAND = (0.3, 1.2)
SECOND_BAND = (1.5, 2.5)
THIRD_BAND = (2.5, 3.5)
SUB_LIMIT = 0.6
MIN_GAMMA_POINTS = 4


@dataclass(frozen=True)
class Peak:
    freq: float
    amplitude: float
    bandwidth: float
    prominence: float


@dataclass(frozen=True)
class HarmonicSet:
    fundamental: Peak
    third: Optional[Peak] = None
    subharmonic: Optional[Peak] = None
    second: Optional[Peak] = None


@dataclass(frozen=True)
class NonlinearityIndex:
    day: int
    beta: Optional[float] = None
    gamma: Optional[float] = None
    caco3: Optional[float] = None


def _half_power_edges(p: np.ndarray, f: np.ndarray, i: int) -> tuple[float, float, int, int]:
    half = 0.5 * p[i]
    lo = i
    while lo > 0 and p[lo - 1] >= half:
        lo -= 1
    hi = i
    while hi < p.size - 1 and p[hi + 1] >= half:
        hi += 1

    def cross(a: int, b: int) -> float:
        # a is below half, b is at/above it
        pa, pb = p[a], p[b]
        frac = (half - pa) / (pb - pa) if pb != pa else 0.0
        return float(f[a] + frac * (f[b] - f[a]))

    f_lo = cross(lo - 1, lo) if lo > 0 else float(f[0])
    f_hi = cross(hi + 1, hi) if hi < p.size - 1 else float(f[-1])
    return f_lo, f_hi, lo, hi


def detect_peaks(ps: PowerSpectrum, min_prominence: float = DEFAULT_MIN_PROMINENCE) -> list[Peak]:
    """Local PSD maxima that stand out from both neighbours and the floor.

    Parameters
    ----------
    ps : PowerSpectrum
    min_prominence : float
        Required prominence as a fraction of the global PSD maximum.

    Returns
    -------
    list of Peak
        Sorted by frequency. ``prominence`` is reported relative to the
        global maximum.

    Notes
    -----
    A peak must also rise ``NOISE_FLOOR_RATIO`` times above the median
    PSD level. Without this gate the largest excursion of a pure-noise
    spectrum always passes, since the global maximum has unit relative
    prominence.
    """
    if not 0 < min_prominence <= 1:
        raise ValueError(f"min_prominence must lie in (0, 1], got {min_prominence}")
    p = np.asarray(ps.psd, dtype=np.float64)
    top = float(p.max()) if p.size else 0.0
    if not top > 0:
        return []
    idx, props = find_peaks(p, prominence=min_prominence * top)
    floor = NOISE_FLOOR_RATIO * float(np.median(p))
    peaks = []
    for i, prom in zip(idx, props["prominences"]):
        if p[i] < floor:
            continue
        f_lo, f_hi, lo, hi = _half_power_edges(p, ps.freqs, int(i))
        power = float(np.sum(p[lo : hi + 1]) * ps.df)
        peaks.append(
            Peak(
                freq=float(ps.freqs[i]),
                amplitude=math.sqrt(power),
                bandwidth=max(f_hi - f_lo, ps.df),
                prominence=float(prom) / top,
            )
        )
    return peaks


def _strongest(peaks: Sequence[Peak], lo: float, hi: float) -> Optional[Peak]:
    inside = [p for p in peaks if lo <= p.freq <= hi]
    if not inside:
        return None
    return max(inside, key=lambda p: (p.amplitude, -p.freq))


def classify_harmonics(peaks: Sequence[Peak], f0_nominal: float) -> HarmonicSet:
    """Label the fundamental, second, third and subharmonic peaks.

    Raises
    ------
    NoFundamental
        No peak lies in the fundamental window.
    """
    if not f0_nominal > 0:
        raise NonPositiveInput("nominal frequency must be positive", f0_nominal=f0_nominal)
    peaks = sorted(peaks, key=lambda p: p.freq)
    fund = _strongest(peaks, FUNDAMENTAL_BAND[0] * f0_nominal, FUNDAMENTAL_BAND[1] * f0_nominal)
    if fund is None:
        raise NoFundamental(
            "no peak in the fundamental window",
            window_hz=[FUNDAMENTAL_BAND[0] * f0_nominal, FUNDAMENTAL_BAND[1] * f0_nominal],
        )
    second = _strongest(peaks, SECOND_BAND[0] * f0_nominal, SECOND_BAND[1] * f0_nominal)
    third = _strongest(peaks, THIRD_BAND[0] * f0_nominal, THIRD_BAND[1] * f0_nominal)
    below = [p for p in peaks if p.freq < SUB_LIMIT * fund.freq]
    sub = _strongest(below, -math.inf, math.inf)
    return HarmonicSet(fund, third, sub, second)


def beta_full(a1: float, a2: float, k: float, x: float) -> float:
    """Second-order parameter ``8 A2 / (A1**2 k**2 x)``."""
    if not (a1 > 0 and k > 0 and x > 0):
        raise NonPositiveInput("A1, k and x must be positive", a1=a1, k=k, x=x)
    return 8.0 * a2 / (a1 * a1 * k * k * x)


def beta(a1: float, a2: float) -> float:
    if not a1 > 0:
        raise NonPositiveFundamental("fundamental amplitude must be positive", a1=a1)
    if a2 < 0:
        raise NonPositiveInput("A2 must be non-negative", a2=a2)
    return a2 / (a1 * a1)


def gamma(a1: float, a3: float) -> float:
    if not a1 > 0:
        raise NonPositiveFundamental("fundamental amplitude must be positive", a1=a1)
    if a3 < 0:
        raise NonPositiveInput("A3 must be non-negative", a3=a3)
    return a3 / (a1 * a1 * a1)


def nonlinearity_index(hs: HarmonicSet, day: int = 0, caco3: Optional[float] = None) -> NonlinearityIndex:
    """Absent harmonics give absent parameters, never zero."""
    a1 = hs.fundamental.amplitude
    b = beta(a1, hs.second.amplitude) if hs.second is not None else None
    g = gamma(a1, hs.third.amplitude) if hs.third is not None else None
    return NonlinearityIndex(int(day), b, g, caco3)


@dataclass(frozen=True)
class NonlinearitySeries:
    """Per-day non-linearity indices with their fits.

    ``vs_day`` is ``A exp(-rate x)``; the growth-form coefficient of
    ``A exp(b x)`` is ``b = -rate`` and is exposed as :attr:`b`.
    ``vs_caco3`` is the linear fit of ``log10(gamma)`` against CaCO3.
    """

    indices: tuple[NonlinearityIndex, ...]
    vs_day: Optional[FitResult]
    vs_caco3: Optional[FitResult]
    errors: dict = field(default_factory=dict)

    @property
    def b(self) -> Optional[float]:
        return None if self.vs_day is None else -self.vs_day.params[1]


def nonlinearity_series(records: Sequence[tuple[int, Optional[float], HarmonicSet]]) -> NonlinearitySeries:
    """Fit gamma against day and log10(gamma) against CaCO3.

    Parameters
    ----------
    records : sequence of (day, caco3, HarmonicSet)
        Days strictly increasing; ``caco3`` may be ``None``.

    Raises
    ------
    UnsortedDays
    TooFewPoints
        Fewer than 4 days carry a third harmonic.
    """
    days = [int(r[0]) for r in records]
    if any(b <= a for a, b in zip(days, days[1:])):
        raise UnsortedDays("days must be strictly increasing", days=days)
    indices = tuple(nonlinearity_index(hs, d, c) for d, c, hs in records)
    present = [ix for ix in indices if ix.gamma is not None and ix.gamma > 0]
    if len(present) < MIN_GAMMA_POINTS:
        raise TooFewPoints("too few days with a third harmonic", n=len(present))
    errors: dict[str, str] = {}
    vs_day = None
    try:
        vs_day = fit(
            ModelFamily.EXP_DECAY,
            np.array([ix.day for ix in present], dtype=np.float64),
            np.array([ix.gamma for ix in present]),
        )
    except CarbosoundError as exc:
        errors["vs_day"] = exc.name
    vs_caco3 = None
    conc = [ix for ix in present if ix.caco3 is not None]
    if len(conc) >= 3:
        try:
            vs_caco3 = linear_fit(
                np.array([ix.caco3 for ix in conc]),
                np.log10([ix.gamma for ix in conc]),
            )
        except CarbosoundError as exc:
            errors["vs_caco3"] = exc.name
    else:
        errors["vs_caco3"] = TooFewPoints.__name__
    return NonlinearitySeries(indices, vs_day, vs_caco3, errors)
