"""Time-domain energy indices.

Discrete energy is the plain sum of squared samples; the impedance-scaled
energy uses the rectangle rule ``dt * sum(x**2) / Z`` (J for Z in ohm).
The normalised cumulative energy curve is summarised by a saturation rate
``mu`` and by the 5-95 % duration ``delta_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    InvalidWaveform,
    NonPositiveImpedance,
    TooFewValues,
    ZeroEnergySignal,
    ZeroMean,
)
from .regression import FitResult, ModelFamily, fit
from .signal_model import Waveform

ONSET_LEVEL = 0.01


@dataclass(frozen=True, eq=False)
class CumulativeEnergyCurve:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.shape != v.shape or t.size < 2:
            raise InvalidWaveform("times and values must match and hold at least 2 points")
        if np.any(np.diff(v) < 0):
            raise InvalidWaveform("cumulative energy must be non-decreasing")
        if v[-1] != 1.0 or v[0] < 0:
            raise InvalidWaveform("cumulative energy must lie in [0, 1] and end at 1")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class MuFit:
    """Saturation rate of the cumulative curve.

    ``t_onset`` is where the fitted model starts from zero; the model is
    ``1 - exp(-mu * (t - t_onset))`` for ``t >= t_onset``.
    """

    mu: float
    r_squared: float
    t_onset: float
    fit: FitResult


def signal_energy(w: Waveform) -> float:
    return float(np.sum(w.samples**2))


def scaled_energy(w: Waveform, impedance: float = 1.0) -> float:
    """Energy in joules for a voltage trace across ``impedance`` ohms."""
    if not impedance > 0:
        raise NonPositiveImpedance("impedance must be positive", impedance=impedance)
    return w.dt * signal_energy(w) / impedance


def cumulative_energy(w: Waveform) -> CumulativeEnergyCurve:
    running = np.cumsum(w.samples**2)
    total = running[-1]
    if not total > 0:
        raise ZeroEnergySignal("waveform has zero energy")
    values = running / total
    values[-1] = 1.0
    return CumulativeEnergyCurve(w.times, values)


def crossing_time(curve: CumulativeEnergyCurve, level: float) -> float:
    """First time the curve reaches ``level``, linearly interpolated."""
    v, t = curve.values, curve.times
    i = int(np.searchsorted(v, level, side="left"))
    if i == 0:
        return float(t[0])
    if i >= v.size:
        return float(t[-1])
    v0, v1 = v[i - 1], v[i]
    frac = (level - v0) / (v1 - v0) if v1 > v0 else 0.0
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))


def delta_t(curve: CumulativeEnergyCurve, lo: float = 0.05, hi: float = 0.95) -> float:
    """Time between the ``lo`` and ``hi`` cumulative-energy crossings."""
    if not 0 < lo < hi < 1:
        raise ValueError(f"need 0 < lo < hi < 1, got lo={lo}, hi={hi}")
    return crossing_time(curve, hi) - crossing_time(curve, lo)


def fit_mu(curve: CumulativeEnergyCurve) -> MuFit:
    """Fit ``1 - exp(-mu (t - t_onset))`` to the cumulative curve.

    The onset is anchored at the interpolated 1 % crossing ``t_c``: the
    model is constrained to pass through 0.01 there, i.e.
    ``F(t) = 1 - 0.99 exp(-mu (t - t_c))``, which places
    ``t_onset = t_c - ln(1/0.99)/mu``. Anchoring this way removes the
    arrival delay from ``mu`` while keeping curves of the model family
    exactly recoverable. Only samples from ``t_c`` on are fitted.
    """
    if curve.values.size < 8:
        raise TooFewValues("need at least 8 curve points", n=int(curve.values.size))
    t_c = crossing_time(curve, ONSET_LEVEL)
    sel = curve.times >= t_c
    x = curve.times[sel] - t_c
    y = curve.values[sel]
    if x.size < 8:
        x = curve.times[-8:] - t_c
        y = curve.values[-8:]
    # (y - 0.01)/0.99 = 1 - exp(-mu x): an affine rescaling, same argmin
    res = fit(ModelFamily.SATURATION, x, (y - ONSET_LEVEL) / (1.0 - ONSET_LEVEL))
    mu = res.params[0]
    y_hat = ONSET_LEVEL + (1.0 - ONSET_LEVEL) * res.predict(x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot if ss_tot > 0 else float("nan")
    t_onset = t_c - math.log(1.0 / (1.0 - ONSET_LEVEL)) / mu if mu > 0 else t_c
    return MuFit(mu, r2, t_onset, res)


def coefficient_of_variation(values: Sequence[float]) -> float:
    """Sample standard deviation (n-1) over the mean."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise TooFewValues("need at least 2 values", n=int(v.size))
    mean = float(v.mean())
    if mean == 0.0:
        raise ZeroMean("mean is zero")
    return float(np.std(v, ddof=1)) / mean
