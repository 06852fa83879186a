"""Phase-slope index, travel time and the day-series of phase slopes.

The slope of the unwrapped phase against frequency is ``-2*pi*tau`` for
a pulse delayed by ``tau`` relative to the first sample of the record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CarbosoundError, InsufficientBins, UnsortedDays
from .regression import FitResult, ModelFamily, fit, linear_fit
from .spectral import PhaseCurve

MIN_BINS = 8
OUTLIER_T = 3.0


@dataclass(frozen=True)
class PhaseSlopeIndex:
    slope: float  # rad/Hz
    intercept: float  # rad
    pearson_r: float
    band: tuple[float, float]
    n_bins: int = 0


def default_band(f_peak: float) -> tuple[float, float]:
    return (0.5 * f_peak, 1.5 * f_peak)


def phase_slope(pc: PhaseCurve, band: tuple[float, float]) -> PhaseSlopeIndex:
    """Ordinary least-squares line through the unwrapped phase inside ``band``."""
    f_lo, f_hi = band
    if not f_lo < f_hi:
        raise ValueError(f"empty band {band}")
    sel = (pc.freqs >= f_lo) & (pc.freqs <= f_hi)
    n = int(np.count_nonzero(sel))
    if n < MIN_BINS:
        raise InsufficientBins("too few retained bins in band", n=n, band=list(band))
    f = pc.freqs[sel]
    ph = pc.phase[sel]
    res = linear_fit(f, ph)
    return PhaseSlopeIndex(res.params[0], res.params[1], res.pearson_r, (float(f_lo), float(f_hi)), n)


def travel_time(idx: PhaseSlopeIndex) -> float:
    return -idx.slope / (2.0 * math.pi)


@dataclass(frozen=True)
class PhaseSeries:
    """Per-day phase slopes with their fits.

    ``delta_vs_benchmark`` subtracts the first (non-carbonated) day's slope.
    ``outliers`` lists days whose externally studentized residual from the
    day fit exceeds 3; they are only dropped from ``vs_day`` when the
    series was built with ``exclude_outliers=True``.
    """

    days: tuple[int, ...]
    slopes: tuple[float, ...]
    delta_vs_benchmark: tuple[float, ...]
    caco3: tuple[Optional[float], ...]
    vs_day: Optional[FitResult]
    vs_caco3: Optional[FitResult]
    outliers: tuple[int, ...] = ()
    excluded: tuple[int, ...] = ()
    errors: dict = field(default_factory=dict)


def studentized_residuals(res: FitResult, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Externally studentized residuals using the Jacobian hat matrix."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r = y - res.predict(x)
    n, p = x.size, res.family.n_params
    if n - p - 1 <= 0:
        return np.zeros(n)
    j = res.family.jacobian(res.params, x)
    try:
        h = np.einsum("ij,jk,ik->i", j, np.linalg.pinv(j.T @ j), j)
    except np.linalg.LinAlgError:
        return np.zeros(n)
    h = np.clip(h, 0.0, 1.0 - 1e-12)
    ss = float(np.sum(r * r))
    scale = float(np.sqrt(np.mean(y * y))) or 1.0
    # residuals at round-off level carry no outlier information
    if math.sqrt(ss / n) <= 1e-9 * scale:
        return np.zeros(n)
    s2_del = (ss - r * r / (1.0 - h)) / (n - p - 1)
    s2_del = np.maximum(s2_del, 1e-300)
    return r / np.sqrt(s2_del * (1.0 - h))


def phase_slope_series(
    records: Sequence[tuple[int, PhaseSlopeIndex]] | Sequence[tuple[int, Optional[float], PhaseSlopeIndex]],
    exclude_outliers: bool = False,
) -> PhaseSeries:
    """Assemble per-day slopes and fit them.

    Parameters
    ----------
    records : sequence
        ``(day, index)`` or ``(day, caco3, index)`` tuples with strictly
        increasing days.
    exclude_outliers : bool
        Refit the day model without points flagged as outliers.

    Notes
    -----
    The day fit is ``A - B exp(-c day)``; the concentration fit is
    ``A exp(b x) + C exp(d x)`` over the records with a CaCO3 value.
    Failed fits are recorded in ``errors`` and left as ``None``.
    """
    days, caco3, slopes = [], [], []
    for rec in records:
        if len(rec) == 2:
            d, idx = rec
            c = None
        else:
            d, c, idx = rec
        days.append(int(d))
        caco3.append(None if c is None else float(c))
        slopes.append(float(idx.slope))
    if any(b <= a for a, b in zip(days, days[1:])):
        raise UnsortedDays("days must be strictly increasing", days=days)

    x = np.asarray(days, dtype=np.float64)
    y = np.asarray(slopes)
    errors: dict[str, str] = {}
    vs_day = None
    outliers: list[int] = []
    excluded: list[int] = []
    try:
        vs_day = fit(ModelFamily.EXP_OFFSET, x, y)
        t = studentized_residuals(vs_day, x, y)
        outliers = [days[i] for i in np.flatnonzero(np.abs(t) > OUTLIER_T)]
        if exclude_outliers and outliers:
            keep = np.abs(t) <= OUTLIER_T
            vs_day = fit(ModelFamily.EXP_OFFSET, x[keep], y[keep])
            excluded = list(outliers)
    except CarbosoundError as exc:
        errors["vs_day"] = exc.name

    vs_caco3 = None
    pairs = [(c, s) for c, s in zip(caco3, slopes) if c is not None]
    if pairs:
        try:
            xc, yc = (np.asarray(v) for v in zip(*pairs))
            vs_caco3 = fit(ModelFamily.TWO_TERM, xc, yc)
        except CarbosoundError as exc:
            errors["vs_caco3"] = exc.name

    bench = slopes[0] if slopes else 0.0
    return PhaseSeries(
        tuple(days),
        tuple(slopes),
        tuple(s - bench for s in slopes),
        tuple(caco3),
        vs_day,
        vs_caco3,
        tuple(outliers),
        tuple(excluded),
        errors,
    )
