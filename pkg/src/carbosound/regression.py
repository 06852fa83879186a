"""Least-squares fitting for the carbonation model families.

Families
--------
=========== ============================ =====================
tag         model                        parameters
=========== ============================ =====================
LINEAR      a*x + b                      (a, b)
EXP_DECAY   A*exp(-b*x)                  (A, b)
EXP_OFFSET  A - B*exp(-c*x)              (A, B, c)
TWO_TERM    A*exp(b*x) + C*exp(d*x)      (A, b, C, d)
SATURATION  1 - exp(-mu*x)               (mu,)
=========== ============================ =====================

LINEAR is solved in closed form. The other families use a damped
Gauss-Newton (Levenberg-Marquardt) iteration with analytic Jacobians,
Marquardt diagonal scaling and a x10 / x0.1 damping schedule. Only steps
that lower the residual sum of squares are accepted, so the recorded
``ss_history`` is non-increasing.

Rates in TWO_TERM are signed: ``A*exp(-b*x)`` is written with a negative
``b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateData, DegenerateX, FitDiverged, ZeroVariance

MAX_ITER = 500
STEP_RTOL = 1e-10
SS_RTOL = 1e-12
GRAD_TOL = 1e-6


class ModelFamily(str, Enum):
    LINEAR = "linear"
    EXP_DECAY = "exp_decay"
    EXP_OFFSET = "exp_offset"
    TWO_TERM = "two_term"
    SATURATION = "saturation"

    @property
    def param_names(self) -> tuple[str, ...]:
        return _PARAM_NAMES[self]

    @property
    def n_params(self) -> int:
        return len(_PARAM_NAMES[self])

    @classmethod
    def parse(cls, tag: "str | ModelFamily") -> "ModelFamily":
        if isinstance(tag, ModelFamily):
            return tag
        key = str(tag).strip().lower().replace("-", "_")
        for fam in cls:
            if key in (fam.value, fam.name.lower()):
                return fam
        raise ValueError(f"unknown model family {tag!r}")

    def evaluate(self, params: Sequence[float], x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p = params
        with np.errstate(over="ignore", invalid="ignore"):
            if self is ModelFamily.LINEAR:
                return p[0] * x + p[1]
            if self is ModelFamily.EXP_DECAY:
                return p[0] * np.exp(-p[1] * x)
            if self is ModelFamily.EXP_OFFSET:
                return p[0] - p[1] * np.exp(-p[2] * x)
            if self is ModelFamily.TWO_TERM:
                return p[0] * np.exp(p[1] * x) + p[2] * np.exp(p[3] * x)
            return 1.0 - np.exp(-p[0] * x)

    def jacobian(self, params: Sequence[float], x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p = params
        with np.errstate(over="ignore", invalid="ignore"):
            if self is ModelFamily.LINEAR:
                return np.column_stack([x, np.ones_like(x)])
            if self is ModelFamily.EXP_DECAY:
                e = np.exp(-p[1] * x)
                return np.column_stack([e, -p[0] * x * e])
            if self is ModelFamily.EXP_OFFSET:
                e = np.exp(-p[2] * x)
                return np.column_stack([np.ones_like(x), -e, p[1] * x * e])
            if self is ModelFamily.TWO_TERM:
                e1 = np.exp(p[1] * x)
                e2 = np.exp(p[3] * x)
                return np.column_stack([e1, p[0] * x * e1, e2, p[2] * x * e2])
            e = np.exp(-p[0] * x)
            return (x * e)[:, None]


_PARAM_NAMES = {
    ModelFamily.LINEAR: ("slope", "intercept"),
    ModelFamily.EXP_DECAY: ("A", "b"),
    ModelFamily.EXP_OFFSET: ("A", "B", "c"),
    ModelFamily.TWO_TERM: ("A", "b", "C", "d"),
    ModelFamily.SATURATION: ("mu",),
}


@dataclass(frozen=True)
class FitResult:
    """Outcome of a fit.

    ``pearson_r`` is the x-y correlation for LINEAR and the data-model
    correlation otherwise. ``flags`` records conventions applied to
    degenerate inputs (``ZeroVariance``, ``DegenerateFit``).
    """

    family: ModelFamily
    params: tuple[float, ...]
    r_squared: float
    pearson_r: float
    n_iter: int
    converged: bool
    grad_norm: float = 0.0
    p_value: Optional[float] = None
    flags: tuple[str, ...] = ()
    multistart: int = 0
    ss_history: tuple[float, ...] = field(default=(), repr=False, compare=False)

    @property
    def named(self) -> dict[str, float]:
        return dict(zip(self.family.param_names, self.params))

    def predict(self, x) -> np.ndarray:
        return self.family.evaluate(self.params, np.asarray(x, dtype=np.float64))

    @property
    def dominant_rate(self) -> float:
        """Rate of the TWO_TERM term with the larger ``|amplitude * rate|`` at x=0."""
        if self.family is not ModelFamily.TWO_TERM:
            raise ValueError("dominant_rate is defined for TWO_TERM fits only")
        a, b, c, d = self.params
        return b if abs(a * b) >= abs(c * d) else d

    def to_dict(self) -> dict:
        out = {
            "family": self.family.value,
            "params": list(self.params),
            "r2": self.r_squared,
            "pearson_r": self.pearson_r,
            "converged": self.converged,
            "n_iter": self.n_iter,
        }
        out.update(self.named)
        if self.p_value is not None:
            out["p_value"] = self.p_value
        if self.family is ModelFamily.TWO_TERM:
            out["dominant_rate"] = self.dominant_rate
        if self.flags:
            out["flags"] = list(self.flags)
        if self.multistart:
            out["multistart"] = self.multistart
        return out


# --------------------------------------------------------------------------
# Goodness of fit
# --------------------------------------------------------------------------


def r_squared(y, y_hat) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.size < 2:
        raise DegenerateData("need two equal-length sequences of at least 2 values")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("observed values have zero variance")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def _pearson(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    da = a - a.mean()
    db = b - b.mean()
    den = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if den == 0.0:
        return None
    return max(-1.0, min(1.0, float(np.sum(da * db)) / den))


def _as_xy(x, y, min_points: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DegenerateData("x and y differ in length", nx=x.size, ny=y.size)
    if x.size < min_points:
        raise DegenerateData("too few points", n=int(x.size), required=min_points)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DegenerateData("non-finite data")
    return x, y


def linear_fit(x, y) -> FitResult:
    """Closed-form ordinary least squares ``y = slope*x + intercept``.

    The p-value is the two-sided t-test of zero correlation with n-2
    degrees of freedom. A constant ``y`` yields slope 0 and r = 0, flagged
    ``ZeroVariance``.
    """
    x, y = _as_xy(x, y, 2)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise DegenerateX("all x values are equal")
    sxy = float(np.sum((x - xm) * (y - ym)))
    syy = float(np.sum((y - ym) ** 2))
    slope = sxy / sxx
    intercept = ym - slope * xm
    flags: list[str] = []
    if syy == 0.0:
        r, r2 = 0.0, float("nan")
        flags.append("ZeroVariance")
    else:
        r = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
        resid = y - (slope * x + intercept)
        r2 = 1.0 - float(np.sum(resid**2)) / syy
    n = x.size
    if n > 2 and not flags:
        if abs(r) >= 1.0:
            p = 0.0
        else:
            t = r * math.sqrt((n - 2) / (1.0 - r * r))
            p = float(2.0 * stats.t.sf(abs(t), n - 2))
    else:
        p = float("nan")
    return FitResult(
        ModelFamily.LINEAR, (slope, intercept), r2, r, 0, True, 0.0, p, tuple(flags)
    )


# --------------------------------------------------------------------------
# Initialisation
# --------------------------------------------------------------------------


def _rate_grid(x: np.ndarray, signed: bool) -> np.ndarray:
    span = float(np.max(np.abs(x)))
    span = span if span > 0 else 1.0
    mags = np.logspace(-2.5, math.log10(40.0), 36) / span
    if signed:
        return np.concatenate([-mags[::-1], [0.0], mags])
    return mags


def _linear_lsq(basis: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    ss = float(np.sum((basis @ coef - y) ** 2))
    return coef, ss


def _init_exp_decay(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if np.all(y > 0) or np.all(y < 0):
        sign = 1.0 if y[0] > 0 else -1.0
        slope, intercept = np.polyfit(x, np.log(np.abs(y)), 1)
        return np.array([sign * math.exp(intercept), -slope])
    best = None
    for b in _rate_grid(x, signed=True):
        coef, ss = _linear_lsq(np.exp(-b * x)[:, None], y)
        if best is None or ss < best[0]:
            best = (ss, np.array([coef[0], b]))
    return best[1]


def _init_saturation(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sel = (y > 0) & (y < 1) & (x > 0)
    if np.count_nonzero(sel) >= 1:
        z = -np.log1p(-y[sel])
        mu = float(np.sum(x[sel] * z) / np.sum(x[sel] ** 2))
        if mu > 0 and math.isfinite(mu):
            return np.array([mu])
    span = float(np.max(np.abs(x))) or 1.0
    return np.array([1.0 / span])


def _init_exp_offset(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    best = None
    for c in _rate_grid(x, signed=False):
        basis = np.column_stack([np.ones_like(x), -np.exp(-c * x)])
        coef, ss = _linear_lsq(basis, y)
        if best is None or ss < best[0]:
            best = (ss, np.array([coef[0], coef[1], c]))
    return best[1]


def _init_two_term(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    rates = _rate_grid(x, signed=True)
    columns = np.exp(np.clip(np.outer(x, rates), -700, 700))
    best = None
    for i in range(rates.size):
        for j in range(i + 1, rates.size):
            basis = columns[:, [i, j]]
            coef, ss = _linear_lsq(basis, y)
            if best is None or ss < best[0]:
                best = (ss, np.array([coef[0], rates[i], coef[1], rates[j]]))
    return best[1]


_INIT = {
    ModelFamily.EXP_DECAY: _init_exp_decay,
    ModelFamily.SATURATION: _init_saturation,
    ModelFamily.EXP_OFFSET: _init_exp_offset,
    ModelFamily.TWO_TERM: _init_two_term,
}


def initial_guess(family: ModelFamily, x, y) -> np.ndarray:
    family = ModelFamily.parse(family)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if family is ModelFamily.LINEAR:
        return np.array(linear_fit(x, y).params)
    return _INIT[family](x, y)


# --------------------------------------------------------------------------
# Levenberg-Marquardt
# --------------------------------------------------------------------------


@dataclass
class _LMState:
    params: np.ndarray
    ss: float
    n_iter: int
    converged: bool
    grad_norm: float
    history: list[float]


def _gradient_measure(jac: np.ndarray, resid: np.ndarray, ss: float, y_scale: float) -> float:
    """Largest cosine between the residual and a Jacobian column."""
    if ss <= 1e-28 * y_scale:
        return 0.0
    col = np.sqrt(np.sum(jac * jac, axis=0))
    g = np.abs(jac.T @ resid)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(col > 0, g / (col * math.sqrt(ss)), 0.0)
    return float(np.max(cos)) if cos.size else 0.0


def _levenberg_marquardt(family: ModelFamily, x, y, p0, max_iter: int) -> _LMState:
    p = np.array(p0, dtype=np.float64)
    resid = family.evaluate(p, x) - y
    ss = float(np.sum(resid**2))
    if not math.isfinite(ss):
        raise FitDiverged("model is not finite at the initial parameters", params=p.tolist())
    y_scale = float(np.sum(y * y)) + 1e-300
    lam = 1e-3
    history = [ss]
    jac = family.jacobian(p, x)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        if ss <= 1e-30 * y_scale:
            converged = True
            break
        a = jac.T @ jac
        g = jac.T @ resid
        diag = np.maximum(np.diag(a), 1e-300)
        accepted = False
        while lam < 1e20:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p + step
            if not np.all(np.isfinite(trial)):
                lam *= 10.0
                continue
            r_trial = family.evaluate(trial, x) - y
            with np.errstate(over="ignore", invalid="ignore"):
                ss_trial = float(np.sum(r_trial**2))
            if math.isfinite(ss_trial) and ss_trial < ss:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no reduction possible at any damping: numerically at a minimum
            converged = True
            break
        rel_step = float(np.linalg.norm(step) / (np.linalg.norm(p) + 1e-300))
        rel_ss = (ss - ss_trial) / ss if ss > 0 else 0.0
        p, resid, ss = trial, r_trial, ss_trial
        history.append(ss)
        jac = family.jacobian(p, x)
        damped = lam > 1e4  # tiny steps under heavy damping say nothing about convergence
        lam = max(lam * 0.1, 1e-15)
        if not damped and (rel_step < STEP_RTOL or rel_ss < SS_RTOL):
            converged = True
            break
    else:
        raise FitDiverged("iteration cap reached", max_iter=max_iter, params=p.tolist())
    grad = _gradient_measure(jac, resid, ss, y_scale)
    return _LMState(p, ss, it, converged and grad <= GRAD_TOL, grad, history)


def _flags_for(family: ModelFamily, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> list[str]:
    flags = []
    scale = float(np.max(np.abs(y))) if y.size else 0.0
    if family is ModelFamily.EXP_OFFSET:
        a, b, c = params
        with np.errstate(over="ignore"):
            swing = abs(b) * abs(math.exp(-c * x.min()) - math.exp(-c * x.max()))
        if not swing > 1e-9 * max(scale, 1e-300):
            flags.append("DegenerateFit")
    return flags


def fit(
    family: "ModelFamily | str",
    x,
    y,
    init: Optional[Sequence[float]] = None,
    *,
    multistart: int = 0,
    seed: Optional[int] = None,
    max_iter: int = MAX_ITER,
) -> FitResult:
    """Least-squares fit of one model family.

    Parameters
    ----------
    family : ModelFamily or str
    x, y : array_like
        Finite data; at least ``n_params + 1`` points.
    init : sequence of float, optional
        Starting parameters. By default a deterministic initialisation is
        used (log-linear regression for EXP_DECAY and SATURATION, a grid
        over the rates with the amplitudes solved linearly for EXP_OFFSET
        and TWO_TERM).
    multistart : int
        Extra randomly perturbed starts drawn from ``seed``. Off by default;
        the count is recorded in the result.

    Raises
    ------
    DegenerateData
        Too few or non-finite points, or all x equal.
    FitDiverged
        Iteration cap hit or model not finite at the start.
    """
    family = ModelFamily.parse(family)
    x, y = _as_xy(x, y, family.n_params + 1)
    if family is ModelFamily.LINEAR:
        return linear_fit(x, y)
    if np.ptp(x) == 0.0:
        raise DegenerateX("all x values are equal")

    p0 = np.asarray(init, dtype=np.float64) if init is not None else initial_guess(family, x, y)
    if p0.size != family.n_params:
        raise ValueError(f"{family.value} takes {family.n_params} parameters, got {p0.size}")
    best = _levenberg_marquardt(family, x, y, p0, max_iter)
    if multistart:
        rng = np.random.default_rng(seed)
        for _ in range(multistart):
            start = p0 * (1.0 + 0.5 * rng.standard_normal(p0.size))
            try:
                cand = _levenberg_marquardt(family, x, y, start, max_iter)
            except FitDiverged:
                continue
            if cand.ss < best.ss:
                best = cand

    y_hat = family.evaluate(best.params, x)
    flags = _flags_for(family, best.params, x, y)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = float("nan")
        flags.append("ZeroVariance")
    else:
        r2 = 1.0 - best.ss / ss_tot
    r = _pearson(y, y_hat)
    if r is None:
        r = 0.0
        if "ZeroVariance" not in flags:
            flags.append("ZeroVariance")
    return FitResult(
        family,
        tuple(float(v) for v in best.params),
        r2,
        r,
        best.n_iter,
        best.converged,
        best.grad_norm,
        None,
        tuple(flags),
        multistart,
        tuple(best.history),
    )
