"""Seeded synthetic pulses and a carbonation-campaign dataset generator.

A pulse is a Gaussian (or Gaussian-rise, exponential-tail) envelope
carrying a fundamental tone plus optional second and third harmonics and
a slow subharmonic burst. Dispersion is an all-pass quadratic spectral
phase, so it spreads energy in time without touching the PSD magnitude.

Harmonic amplitude convention
-----------------------------
``amplitudes = (A1, A2, A3)`` are stated in band-amplitude units: the
k-th harmonic enters the waveform with peak value ``A_k * kappa**(k-1)``,
where ``kappa`` is the band amplitude (square root of the -3 dB band
power) of a unit fundamental term. Measured band amplitudes are then
``kappa**k * A_k``, so ``A2/A1**2`` and ``A3/A1**3`` come back unchanged
from the PSD. ``A1`` is also the fundamental's peak value in volts.

Noise
-----
Gaussian deviates come from the Box-Muller transform applied to uniform
doubles drawn from PCG64 (``numpy.random.PCG64``), seeded through
``numpy.random.SeedSequence``. For a dataset the entropy words are
``[seed, specimen_index, day, shot]``. Shots are produced in mirrored
pairs ``clean + n`` and ``clean - n`` so the per-day average is the
clean pulse.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import AliasedHarmonic, IoFailure
from .signal_model import (
    DEFAULT_DISTANCE_M,
    DatasetManifest,
    SpecimenRecord,
    Waveform,
    save_manifest,
    save_waveform,
)

DAY_GRID = (0, 1, 3, 5, 7, 14, 28, 56, 120)
DEFAULT_SEED = 20230915
DISPERSION_CLAMP = 0.6
SUB_LEVEL_PAD = 1e-3


@dataclass(frozen=True)
class PulseSpec:
    """Parameters of one synthetic pulse.

    ``delay`` is the envelope centre (or onset when ``decay_mu > 0``)
    measured from the first sample. ``dispersion`` is the quadratic
    spectral phase coefficient in s**2, centred on ``carrier_f`` and
    clamped beyond ``0.6 * carrier_f`` from it. ``sub_bandwidth`` is the
    -3 dB width of the subharmonic line.
    """

    carrier_f: float = 5e5
    delay: float = 2e-4
    envelope: float = 8e-6
    amplitudes: tuple[float, float, float] = (1.0, 0.0, 0.0)
    sub_f: Optional[float] = None
    sub_amplitude: float = 0.0
    sub_bandwidth: float = 4e3
    decay_mu: float = 0.0
    noise_std: float = 0.0
    seed: int = 0
    dt: float = 1e-7
    n: int = 8192
    second_f: Optional[float] = None
    third_f: Optional[float] = None
    dispersion: float = 0.0
    t0: float = 0.0
    distance: Optional[float] = None

    @property
    def nyquist(self) -> float:
        return 0.5 / self.dt

    @property
    def harmonic_freqs(self) -> tuple[float, float, float]:
        f = self.carrier_f
        return (
            f,
            self.second_f if self.second_f is not None else 2.0 * f,
            self.third_f if self.third_f is not None else 3.0 * f,
        )


def normal_deviates(entropy: Sequence[int] | int, n: int) -> np.ndarray:
    """Standard normal deviates by Box-Muller on PCG64 uniforms."""
    words = [int(entropy)] if np.isscalar(entropy) else [int(e) for e in entropy]
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))
    m = (n + 1) // 2
    u1 = gen.random(m)
    u2 = gen.random(m)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(2.0 * math.pi * u2)
    z[1::2] = r * np.sin(2.0 * math.pi * u2)
    return z[:n]


def _envelope(t: np.ndarray, spec: PulseSpec) -> np.ndarray:
    u = t - spec.delay
    g = np.exp(-0.5 * (u / spec.envelope) ** 2)
    if spec.decay_mu > 0:
        tail = np.exp(-0.5 * spec.decay_mu * np.clip(u, 0.0, None))
        g = np.where(u < 0, g, tail)
    return g


def _sub_sigma(bandwidth: float) -> float:
    # power spectrum of a Gaussian burst is exp(-4 pi^2 s^2 f^2)
    return math.sqrt(math.log(2.0)) / (math.pi * bandwidth)


def _check_aliasing(spec: PulseSpec) -> None:
    names = ("fundamental", "second", "third")
    for name, f, a in zip(names, spec.harmonic_freqs, spec.amplitudes):
        if (a != 0 or name == "fundamental") and not 0 < f < spec.nyquist:
            raise AliasedHarmonic(f"{name} at {f} Hz is not below Nyquist", freq=f, nyquist=spec.nyquist)
    if spec.amplitudes[2] != 0 and spec.third_f is None and not spec.carrier_f < spec.nyquist / 3:
        raise AliasedHarmonic("carrier must lie below Nyquist/3 when A3 > 0", carrier_f=spec.carrier_f)
    if spec.sub_f is not None and spec.sub_amplitude != 0 and not 0 < spec.sub_f < spec.nyquist:
        raise AliasedHarmonic("subharmonic is not below Nyquist", freq=spec.sub_f, nyquist=spec.nyquist)


def _unit_tone(spec: PulseSpec, t: np.ndarray, f: float) -> np.ndarray:
    return _envelope(t, spec) * np.sin(2.0 * math.pi * f * (t - spec.delay))


def band_amplitude_factor(spec: PulseSpec) -> float:
    """Band amplitude of a unit fundamental term on this grid.

    The half-power region is walked outwards from the carrier bin of the
    one-sided rectangular periodogram.
    """
    t = np.arange(spec.n) * spec.dt
    x = _unit_tone(spec, t, spec.carrier_f)
    p = np.abs(np.fft.rfft(x)) ** 2 * (2.0 * spec.dt / spec.n)
    df = 1.0 / (spec.n * spec.dt)
    k = int(round(spec.carrier_f / df))
    k = max(1, min(k, p.size - 2))
    k = k - 1 + int(np.argmax(p[k - 1 : k + 2]))
    lo = hi = k
    while lo > 0 and p[lo - 1] >= 0.5 * p[k]:
        lo -= 1
    while hi < p.size - 1 and p[hi + 1] >= 0.5 * p[k]:
        hi += 1
    return math.sqrt(float(np.sum(p[lo : hi + 1])) * df)


def apply_dispersion(x: np.ndarray, dt: float, alpha: float, center_f: float) -> np.ndarray:
    """All-pass quadratic phase ``-alpha (2 pi (f - fc))**2 / 2`` on the DFT bins."""
    if alpha == 0:
        return x.copy()
    n = x.size
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(n, d=dt)
    off = np.clip(f - center_f, -DISPERSION_CLAMP * center_f, DISPERSION_CLAMP * center_f)
    rot = np.exp(-0.5j * alpha * (2.0 * math.pi * off) ** 2)
    rot[0] = 1.0
    if n % 2 == 0:
        rot[-1] = 1.0
    return np.fft.irfft(spec * rot, n=n)


def _clean_pulse(spec: PulseSpec) -> np.ndarray:
    _check_aliasing(spec)
    t = np.arange(spec.n) * spec.dt
    a1, a2, a3 = spec.amplitudes
    f1, f2, f3 = spec.harmonic_freqs
    x = a1 * _unit_tone(spec, t, f1)
    if a2 != 0 or a3 != 0:
        kappa = band_amplitude_factor(spec)
        if a2 != 0:
            x = x + a2 * kappa * _unit_tone(spec, t, f2)
        if a3 != 0:
            x = x + a3 * kappa * kappa * _unit_tone(spec, t, f3)
    if spec.sub_f is not None and spec.sub_amplitude != 0:
        sub = replace(spec, envelope=_sub_sigma(spec.sub_bandwidth), decay_mu=0.0)
        x = x + spec.sub_amplitude * _unit_tone(sub, t, spec.sub_f)
    return apply_dispersion(x, spec.dt, spec.dispersion, spec.carrier_f)


def synth_pulse(spec: PulseSpec) -> Waveform:
    """Render a pulse; bit-identical for identical specs.

    Raises
    ------
    AliasedHarmonic
        A requested component would sit at or above Nyquist.
    """
    x = _clean_pulse(spec)
    if spec.noise_std > 0:
        x = x + spec.noise_std * normal_deviates(spec.seed, spec.n)
    return Waveform(x, spec.dt, spec.t0, spec.distance)


# ---------------------------------------------------------------- profile


@dataclass(frozen=True)
class WcSchedule:
    """Targets for one water/cement ratio.

    Frequencies are in Hz at days (0, 28, 120); a ``None`` third means
    absent. ``caco3`` is ``(c0, c_max, T)`` for
    ``c0 + c_max (1 - exp(-day / T))`` in % wt. ``phase_two_term`` holds
    ``(A, b, C, d)`` for the standalone phase-slope vs CaCO3 fixture.
    """

    wc_ratio: float
    specimen_id: str
    energy_b: float
    phase_c: float
    cv_dt: float
    gamma_slope: float
    gamma_r: float
    fundamental_hz: tuple[float, float, float]
    third_hz: tuple[Optional[float], Optional[float], Optional[float]]
    caco3: tuple[float, float, float]
    delay_shift: float
    phase_two_term: tuple[float, float, float, float]


PAPER_SCHEDULES = (
    WcSchedule(
        0.4, "P04", 0.3204, 0.53, 0.3038, -0.43, -0.9477,
        (420e3, 370e3, 210e3), (1530e3, 1510e3, None),
        (1.5, 6.0, 40.0), 4e-6, (-4.0e-2, -3.85, -5.0e-3, -0.02),
    ),
    WcSchedule(
        0.5, "P05", 0.3480, 0.83, 0.6623, -0.10, -0.9508,
        (390e3, 360e3, 340e3), (1560e3, 1550e3, None),
        (1.5, 14.0, 30.0), 5e-6, (-2.0e-3, -2.04, -5.0e-3, -0.02),
    ),
    WcSchedule(
        0.6, "P06", 0.3212, 2.03, 0.9657, -0.06, -0.9698,
        (340e3, 334e3, 320e3), (1560e3, 1530e3, None),
        (1.5, 22.0, 20.0), 6e-6, (-1.0e-3, -1.12, -5.0e-3, -0.02),
    ),
)


@dataclass(frozen=True)
class PaperProfile:
    """Synthetic campaign reproducing the published index trends.

    The grid is finer than :class:`PulseSpec`'s default (n = 32768) so
    the unwrapped phase stays resolvable under the strongest dispersion.
    """

    schedules: tuple[WcSchedule, ...] = PAPER_SCHEDULES
    days: tuple[int, ...] = DAY_GRID
    dt: float = 1e-7
    n: int = 32768
    envelope: float = 8e-6
    base_delay: float = 8e-4
    gamma_day0: float = 0.3
    third_ratio_day0: float = 0.02
    third_absent_from: int = 56
    sub_fraction: float = 0.3
    sub_ratio: tuple[float, float] = (0.05, 0.15)
    sub_bandwidth: tuple[float, float] = (4e3, 12e3)
    dt_headroom: float = 1.15
    shots: int = 2
    noise_std: float = 0.0
    seed: int = DEFAULT_SEED
    nominal_f0: float = 5e5
    impedance: float = 1.0
    distance: float = DEFAULT_DISTANCE_M

    def __post_init__(self) -> None:
        if tuple(self.days) != DAY_GRID:
            raise ValueError(f"profile day grid must be {DAY_GRID}")
        if self.shots < 1 or self.shots % 2 and self.noise_std > 0:
            raise ValueError("noisy profiles need an even, positive shot count")

    @property
    def df(self) -> float:
        return 1.0 / (self.n * self.dt)


@dataclass(frozen=True)
class DayPlan:
    """Injected ground truth for one specimen-day."""

    specimen_id: str
    wc_ratio: float
    day: int
    caco3: float
    fundamental_hz: float
    third_hz: Optional[float]
    sub_hz: float
    sub_bandwidth_hz: float
    delay_s: float
    gamma: Optional[float]
    energy_j: float
    delta_t_s: float
    spec: PulseSpec = field(repr=False)


def _interp_schedule(values: Sequence[Optional[float]], day: float) -> Optional[float]:
    anchors = (0.0, 28.0, 120.0)
    if day <= anchors[1]:
        a, b, lo, hi = values[0], values[1], anchors[0], anchors[1]
    else:
        a, b, lo, hi = values[1], values[2], anchors[1], anchors[2]
    if a is None or b is None:
        return a if day == lo else None
    return a + (b - a) * (day - lo) / (hi - lo)


def _on_bin(f: float, df: float, even: bool = False) -> float:
    if even:
        return 2.0 * round(f / (2.0 * df)) * df
    return round(f / df) * df


def caco3_at(schedule: WcSchedule, day: float) -> float:
    c0, cmax, tau = schedule.caco3
    return c0 + cmax * (1.0 - math.exp(-day / tau))


def _delta_t_oracle(x: np.ndarray, dt: float) -> float:
    e = np.cumsum(x * x)
    e = e / e[-1]
    t = np.arange(x.size) * dt
    return float(np.interp(0.95, e, t) - np.interp(0.05, e, t))


def _gamma_targets(schedule: WcSchedule, x: np.ndarray, gamma0: float) -> np.ndarray:
    """log10 gamma = a + slope x + e with e orthogonal to [1, x]."""
    design = np.column_stack([np.ones_like(x), x])
    pattern = np.cos(2.4 * np.arange(x.size) + 0.7)
    coef, *_ = np.linalg.lstsq(design, pattern, rcond=None)
    e = pattern - design @ coef
    sxx = float(np.sum((x - x.mean()) ** 2))
    r = schedule.gamma_r
    target_ss = schedule.gamma_slope**2 * sxx * (1.0 / r**2 - 1.0)
    e = e * math.sqrt(target_ss / float(np.sum(e * e)))
    logg = schedule.gamma_slope * x + e
    logg = logg - logg[0] + math.log10(gamma0)
    return 10.0**logg


def plan_schedule(profile: PaperProfile, schedule: WcSchedule) -> list[DayPlan]:
    """Resolve every target of one w/c series into concrete pulse specs."""
    df = profile.df
    days = np.asarray(profile.days, dtype=np.float64)
    h = days / days[-1]
    caco3 = np.array([caco3_at(schedule, d) for d in days])
    present = days < profile.third_absent_from
    gammas = np.full(days.size, np.nan)
    gammas[present] = _gamma_targets(schedule, caco3[present], profile.gamma_day0)

    base = []
    for i, d in enumerate(profile.days):
        f1 = _on_bin(_interp_schedule(schedule.fundamental_hz, d), df, even=True)
        f3 = _interp_schedule(schedule.third_hz, d) if present[i] else None
        f3 = None if f3 is None else _on_bin(f3, df)
        bw = profile.sub_bandwidth[0] + (profile.sub_bandwidth[1] - profile.sub_bandwidth[0]) * h[i]
        ratio = profile.sub_ratio[0] + (profile.sub_ratio[1] - profile.sub_ratio[0]) * h[i]
        delay = profile.base_delay + schedule.delay_shift * (1.0 - math.exp(-schedule.phase_c * d))
        spec = PulseSpec(
            carrier_f=f1,
            delay=delay,
            envelope=profile.envelope,
            amplitudes=(1.0, 0.0, 0.0),
            sub_f=_on_bin(profile.sub_fraction * f1, df),
            # band-amplitude ratio to the fundamental, Gaussian kappa ~ sqrt(sigma)
            sub_amplitude=ratio * math.sqrt(profile.envelope / _sub_sigma(bw)),
            sub_bandwidth=bw,
            dt=profile.dt,
            n=profile.n,
            third_f=f3,
            distance=profile.distance,
        )
        base.append(spec)

    kappa0 = band_amplitude_factor(base[0])
    s0 = math.sqrt(profile.third_ratio_day0 / (kappa0**2 * profile.gamma_day0))

    def render(spec: PulseSpec, s: float, g: float) -> PulseSpec:
        a3 = g * s**3 if g == g else 0.0
        return replace(spec, amplitudes=(s, 0.0, a3), sub_amplitude=spec.sub_amplitude * s)

    e0 = profile.dt * float(np.sum(_clean_pulse(render(base[0], s0, gammas[0])) ** 2)) / profile.impedance
    energies = e0 * np.exp(-schedule.energy_b * days)

    scales = []
    undispersed = []
    for i, spec in enumerate(base):
        def energy_gap(s: float) -> float:
            x = _clean_pulse(render(spec, s, gammas[i]))
            return profile.dt * float(np.sum(x * x)) / profile.impedance - energies[i]

        s = s0 if i == 0 else brentq(energy_gap, 1e-9, 2.0 * s0, xtol=1e-15, rtol=1e-15)
        scales.append(s)
        undispersed.append(_delta_t_oracle(_clean_pulse(render(spec, s, gammas[i])), profile.dt))

    std_h = float(np.std(h, ddof=1))
    k = schedule.cv_dt / (std_h - schedule.cv_dt * float(h.mean()))
    t0 = profile.dt_headroom * max(undispersed)
    targets = t0 * (1.0 + k * h)

    plans = []
    for i, spec in enumerate(base):
        spec = render(spec, scales[i], gammas[i])

        def dt_gap(alpha: float) -> float:
            return _delta_t_oracle(_clean_pulse(replace(spec, dispersion=alpha)), profile.dt) - targets[i]

        hi = profile.envelope**2
        while dt_gap(hi) < 0:
            hi *= 2.0
        alpha = brentq(dt_gap, 0.0, hi, xtol=1e-30, rtol=1e-13)
        spec = replace(spec, dispersion=alpha)
        plans.append(
            DayPlan(
                specimen_id=schedule.specimen_id,
                wc_ratio=schedule.wc_ratio,
                day=int(profile.days[i]),
                caco3=float(caco3[i]),
                fundamental_hz=spec.carrier_f,
                third_hz=spec.third_f,
                sub_hz=float(spec.sub_f),
                sub_bandwidth_hz=spec.sub_bandwidth,
                delay_s=spec.delay,
                gamma=None if not present[i] else float(gammas[i]),
                energy_j=float(energies[i]),
                delta_t_s=float(targets[i]),
                spec=spec,
            )
        )
    return plans


def phase_two_term_fixture(profile: PaperProfile, schedule: WcSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Phase slope vs CaCO3 drawn from the schedule's two-term model.

    The amplitudes in ``phase_two_term`` refer to ``x - c0``; they are
    folded back so the returned series follows ``A e^(bx) + C e^(dx)``
    on the raw concentration axis.
    """
    a, b, c, d = schedule.phase_two_term
    x = np.array([caco3_at(schedule, day) for day in profile.days])
    u = x - schedule.caco3[0]
    return x, a * np.exp(b * u) + c * np.exp(d * u)


def _shot(plan: DayPlan, profile: PaperProfile, spec_index: int, shot: int) -> Waveform:
    clean = _clean_pulse(plan.spec)
    if profile.noise_std > 0:
        pair = shot // 2
        noise = profile.noise_std * normal_deviates([profile.seed, spec_index, plan.day, pair], profile.n)
        clean = clean + noise if shot % 2 == 0 else clean - noise
    return Waveform(clean, profile.dt, 0.0, profile.distance)


def analysis_settings(profile: PaperProfile, plans: Sequence[DayPlan]) -> dict:
    """Detection settings that keep the faintest injected third visible.

    The third harmonic's PSD peak relative to the fundamental scales as
    ``(kappa**2 * gamma * A1**2)**2``; the threshold sits a factor
    ``SUB_LEVEL_PAD`` below the faintest one.
    """
    ratios = []
    for p in plans:
        if p.gamma is None:
            continue
        kappa = band_amplitude_factor(p.spec)
        ratios.append((kappa**2 * p.gamma * p.spec.amplitudes[0] ** 2) ** 2)
    prom = min(ratios) * SUB_LEVEL_PAD if ratios else 0.01
    return {"min_prominence": float(min(prom, 0.01))}


def synth_dataset(
    profile: PaperProfile, out_dir: str | Path, seed: Optional[int] = None
) -> DatasetManifest:
    """Write waveforms, ``manifest.json``, ``analysis.json`` and ``truth.json``.

    Raises
    ------
    IoFailure
        The output directory cannot be written.
    """
    if seed is not None:
        profile = replace(profile, seed=int(seed))
    out = Path(out_dir)
    try:
        (out / "waveforms").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}", path=str(out)) from exc

    records: list[SpecimenRecord] = []
    all_plans: list[DayPlan] = []
    truth = []
    for si, schedule in enumerate(profile.schedules):
        plans = plan_schedule(profile, schedule)
        all_plans.extend(plans)
        for plan in plans:
            paths = []
            for shot in range(profile.shots):
                rel = f"waveforms/{plan.specimen_id}_d{plan.day:03d}_s{shot}.csw"
                try:
                    save_waveform(_shot(plan, profile, si, shot), out / rel)
                except OSError as exc:
                    raise IoFailure(f"cannot write {rel}: {exc}", path=str(out / rel)) from exc
                paths.append(rel)
            records.append(
                SpecimenRecord(plan.specimen_id, plan.wc_ratio, plan.day, plan.caco3, tuple(paths))
            )
            row = asdict(plan)
            row.pop("spec")
            row["dispersion_s2"] = plan.spec.dispersion
            truth.append(row)

    manifest = DatasetManifest(tuple(records), profile.nominal_f0, profile.impedance, out)
    try:
        save_manifest(manifest, out / "manifest.json")
        (out / "analysis.json").write_text(
            json.dumps(analysis_settings(profile, all_plans), indent=2, sort_keys=True) + "\n"
        )
        (out / "truth.json").write_text(json.dumps({"days": truth}, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset metadata: {exc}", path=str(out)) from exc
    return manifest
