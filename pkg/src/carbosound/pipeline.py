"""Per specimen-day analysis, series fits and the carbonation report.

Each manifest record is reduced to one bundle: the shots are averaged,
then energy, phase and harmonic indices are computed independently. A
sub-index that fails is stored as absent together with the error name,
and the rest of the bundle is kept.

Specimens are analysed independently (optionally in worker processes)
and the report is assembled in ``(wc_ratio, id, day)`` order, so its
content does not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import energy_metrics as em
from . import harmonic_metrics as hm
from . import phase_metrics as pm
from .errors import CarbosoundError, TooFewPoints, UnknownWindow
from .regression import FitResult, ModelFamily, fit, linear_fit
from .signal_model import (
    DatasetManifest,
    SpecimenRecord,
    Waveform,
    average_waveforms,
    load_waveform,
    validate_manifest,
)
from .spectral import WINDOWS, dft, phase_spectrum, power_spectral_density

SCHEMA = "carbosound.report/1"
MIN_SERIES_DAYS = 4
CSV_COLUMNS = (
    "id",
    "wc_ratio",
    "day",
    "caco3_pct",
    "signal_energy",
    "total_j",
    "mu",
    "r2_mu",
    "delta_t_s",
    "phase_slope_rad_per_hz",
    "phase_pearson_r",
    "travel_time_s",
    "phase_delta_vs_benchmark",
    "fundamental_hz",
    "third_hz",
    "sub_hz",
    "sub_bw_hz",
    "beta",
    "gamma",
)


@dataclass(frozen=True)
class AnalysisConfig:
    """Settings shared by every specimen-day.

    ``band`` overrides the phase-fit band; by default it is
    ``[0.5, 1.5]`` times the detected fundamental. ``impedance`` overrides
    the manifest's value when given.
    """

    window: str = "rectangular"
    band: Optional[tuple[float, float]] = None
    min_prominence: float = hm.DEFAULT_MIN_PROMINENCE
    impedance: Optional[float] = None
    exclude_outliers: bool = False

    def validate(self) -> "AnalysisConfig":
        if self.window not in WINDOWS:
            raise UnknownWindow(f"unknown window {self.window!r}", allowed=list(WINDOWS))
        if not 0 < self.min_prominence <= 1:
            raise ValueError(f"min_prominence must lie in (0, 1], got {self.min_prominence}")
        if self.band is not None and not 0 <= self.band[0] < self.band[1]:
            raise ValueError(f"invalid band {self.band}")
        if self.impedance is not None and not self.impedance > 0:
            raise ValueError(f"impedance must be positive, got {self.impedance}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band"] = None if self.band is None else list(self.band)
        return d


# ------------------------------------------------------------ single record


@dataclass
class DayBundle:
    """Indices of one averaged specimen-day waveform."""

    id: str
    wc_ratio: float
    day: int
    caco3: Optional[float]
    energy: Optional[dict] = None
    phase_index: Optional[pm.PhaseSlopeIndex] = None
    harmonics: Optional[hm.HarmonicSet] = None
    nonlinearity: Optional[hm.NonlinearityIndex] = None
    absent: dict = field(default_factory=dict)
    phase_delta: Optional[float] = None
    distance_m: Optional[float] = None
    flags: list = field(default_factory=list)

    def phase_dict(self) -> Optional[dict]:
        idx = self.phase_index
        if idx is None:
            return None
        return {
            "slope_rad_per_hz": idx.slope,
            "intercept_rad": idx.intercept,
            "pearson_r": idx.pearson_r,
            "band_hz": list(idx.band),
            "n_bins": idx.n_bins,
            "travel_time_s": pm.travel_time(idx),
            "delta_vs_benchmark": self.phase_delta,
        }

    def harmonics_dict(self) -> Optional[dict]:
        hs = self.harmonics
        if hs is None:
            return None
        out: dict[str, Any] = {
            "fundamental_hz": hs.fundamental.freq,
            "fundamental_amplitude": hs.fundamental.amplitude,
            "fundamental_bw_hz": hs.fundamental.bandwidth,
        }
        if hs.second is not None:
            out["second_hz"] = hs.second.freq
            out["second_amplitude"] = hs.second.amplitude
        if hs.third is not None:
            out["third_hz"] = hs.third.freq
            out["third_amplitude"] = hs.third.amplitude
        if hs.subharmonic is not None:
            out["sub_hz"] = hs.subharmonic.freq
            out["sub_amplitude"] = hs.subharmonic.amplitude
            out["sub_bw_hz"] = hs.subharmonic.bandwidth
        nl = self.nonlinearity
        if nl is not None and nl.beta is not None:
            out["beta"] = nl.beta
        if nl is not None and nl.gamma is not None:
            out["gamma"] = nl.gamma
        return out

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "wc_ratio": self.wc_ratio,
            "day": self.day,
            "caco3_pct": self.caco3,
            "energy": self.energy,
            "phase": self.phase_dict(),
            "harmonics": self.harmonics_dict(),
            "absent": dict(sorted(self.absent.items())),
            "distance_m": self.distance_m,
            "flags": sorted(self.flags),
        }


def _energy_indices(w: Waveform, impedance: float) -> dict:
    curve = em.cumulative_energy(w)
    out = {
        "signal_energy": em.signal_energy(w),
        "total_j": em.scaled_energy(w, impedance),
        "delta_t_s": em.delta_t(curve),
    }
    mf = em.fit_mu(curve)
    out.update(mu=mf.mu, r2_mu=mf.r_squared, t_onset_s=mf.t_onset)
    return out


def analyze_waveform(
    w: Waveform,
    config: AnalysisConfig = AnalysisConfig(),
    nominal_f0: float = 5e5,
    impedance: float = 1.0,
    *,
    id: str = "",
    wc_ratio: float = float("nan"),
    day: int = 0,
    caco3: Optional[float] = None,
) -> DayBundle:
    """Compute all indices for one waveform; failures become ``absent``."""
    b = DayBundle(id, wc_ratio, int(day), caco3)
    imp = config.impedance if config.impedance is not None else impedance
    b.distance_m = w.distance_or_default
    if w.distance is None:
        b.flags.append("DefaultDistance")
    try:
        b.energy = _energy_indices(w, imp)
    except CarbosoundError as exc:
        b.absent["energy"] = exc.name

    try:
        ps = power_spectral_density(w, config.window)
        peaks = hm.detect_peaks(ps, config.min_prominence)
        b.harmonics = hm.classify_harmonics(peaks, nominal_f0)
        b.nonlinearity = hm.nonlinearity_index(b.harmonics, day, caco3)
        if b.harmonics.third is None:
            b.absent["gamma"] = "NoThirdHarmonic"
    except CarbosoundError as exc:
        b.absent["harmonics"] = exc.name

    try:
        if config.band is not None:
            band = tuple(config.band)
        elif b.harmonics is not None:
            band = pm.default_band(b.harmonics.fundamental.freq)
        else:
            raise hm.NoFundamental("phase band needs a fundamental")
        b.phase_index = pm.phase_slope(phase_spectrum(dft(w)), band)
    except CarbosoundError as exc:
        b.absent["phase"] = exc.name
    return b


def analyze_specimen_day(
    record: SpecimenRecord, manifest: DatasetManifest, config: AnalysisConfig = AnalysisConfig()
) -> DayBundle:
    """Load and average a record's shots, then compute its indices."""
    try:
        if not record.waveform_paths:
            raise CarbosoundError("record lists no waveforms")
        waves = [load_waveform(manifest.resolve(p)) for p in record.waveform_paths]
        w = average_waveforms(waves)
    except (CarbosoundError, OSError) as exc:
        name = exc.name if isinstance(exc, CarbosoundError) else type(exc).__name__
        b = DayBundle(record.id, record.wc_ratio, int(record.day), record.caco3)
        b.absent.update(load=name, energy=name, phase=name, harmonics=name)
        return b
    return analyze_waveform(
        w,
        config,
        manifest.nominal_f0,
        manifest.impedance,
        id=record.id,
        wc_ratio=record.wc_ratio,
        day=record.day,
        caco3=record.caco3,
    )


# ------------------------------------------------------------ series


def _fit_or_error(errors: dict, key: str, fn, *args) -> Optional[FitResult]:
    try:
        return fn(*args)
    except CarbosoundError as exc:
        errors[key] = exc.name
        return None


def _fit_dict(res: Optional[FitResult], form: str) -> Optional[dict]:
    if res is None:
        return None
    d = res.to_dict()
    d["form"] = form
    return d


def _growth_dict(res: Optional[FitResult]) -> Optional[dict]:
    """EXP_DECAY result rewritten as ``A exp(b x)``."""
    if res is None:
        return None
    d = res.to_dict()
    a, rate = res.params
    d.update(form="A*exp(b*x)", A=a, b=-rate, params=[a, -rate])
    return d


def _cv(values: Sequence[float]) -> Optional[float]:
    try:
        return em.coefficient_of_variation(values)
    except CarbosoundError:
        return None


def specimen_series(bundles: Sequence[DayBundle], exclude_outliers: bool = False) -> dict:
    """Fits over one specimen's day series (bundles sorted by day)."""
    errors: dict[str, str] = {}
    fits: dict[str, Optional[dict]] = {}

    en = [(b.day, b.caco3, b.energy) for b in bundles if b.energy is not None]
    days_e = np.array([d for d, _, _ in en], dtype=np.float64)
    energy = np.array([e["total_j"] for _, _, e in en])
    mu = np.array([e["mu"] for _, _, e in en])
    dts = [e["delta_t_s"] for _, _, e in en]
    if len(en) >= MIN_SERIES_DAYS:
        fits["energy_vs_day"] = _fit_dict(
            _fit_or_error(errors, "energy_vs_day", fit, ModelFamily.EXP_DECAY, days_e, energy),
            "A*exp(-b*x)",
        )
        fits["mu_vs_day"] = _fit_dict(
            _fit_or_error(errors, "mu_vs_day", linear_fit, days_e, mu), "slope*x+intercept"
        )
        conc = [(c, e["total_j"]) for _, c, e in en if c is not None]
        if len(conc) >= ModelFamily.TWO_TERM.n_params + 1:
            xc, yc = map(np.array, zip(*conc))
            fits["energy_vs_caco3"] = _fit_dict(
                _fit_or_error(errors, "energy_vs_caco3", fit, ModelFamily.TWO_TERM, xc, yc),
                "A*exp(b*x)+C*exp(d*x)",
            )
        else:
            errors["energy_vs_caco3"] = TooFewPoints.__name__
    else:
        errors["energy"] = TooFewPoints.__name__
    delta_t_cv = _cv(dts)
    mu_decreasing = bool(len(mu) >= 2 and np.all(np.diff(mu) < 0))

    phase = [(b.day, b.caco3, b.phase_index) for b in bundles if b.phase_index is not None]
    phase_outliers: list[int] = []
    if phase:
        bench = phase[0][2].slope
        for b in bundles:
            if b.phase_index is not None:
                b.phase_delta = b.phase_index.slope - bench
    if len(phase) >= MIN_SERIES_DAYS:
        try:
            ps = pm.phase_slope_series(phase, exclude_outliers=exclude_outliers)
            fits["phase_vs_day"] = _fit_dict(ps.vs_day, "A-B*exp(-c*x)")
            fits["phase_vs_caco3"] = _fit_dict(ps.vs_caco3, "A*exp(b*x)+C*exp(d*x)")
            phase_outliers = list(ps.outliers)
            errors.update({f"phase_{k}": v for k, v in ps.errors.items()})
        except CarbosoundError as exc:
            errors["phase"] = exc.name
    else:
        errors["phase"] = TooFewPoints.__name__

    harm = [(b.day, b.caco3, b.harmonics) for b in bundles if b.harmonics is not None]
    try:
        ns = hm.nonlinearity_series(harm)
        fits["gamma_vs_day"] = _growth_dict(ns.vs_day)
        fits["loggamma_vs_caco3"] = _fit_dict(ns.vs_caco3, "slope*x+intercept")
        errors.update({f"gamma_{k}": v for k, v in ns.errors.items()})
    except CarbosoundError as exc:
        errors["gamma"] = exc.name

    def param(key: str, name: str) -> Optional[float]:
        f = fits.get(key)
        return None if f is None else f.get(name)

    conclusions = {
        "energy_decay_b": param("energy_vs_day", "b"),
        "mu_trend_per_day": param("mu_vs_day", "slope"),
        "delta_t_cv": delta_t_cv,
        "phase_decay_c": param("phase_vs_day", "c"),
        "phase_caco3_dominant_rate": param("phase_vs_caco3", "dominant_rate"),
        "loggamma_caco3_slope": param("loggamma_vs_caco3", "slope"),
    }
    return {
        "fits": {k: fits[k] for k in sorted(fits)},
        "delta_t_cv": delta_t_cv,
        "mu_decreasing": mu_decreasing,
        "phase_outliers": phase_outliers,
        "phase_excluded": phase_outliers if exclude_outliers else [],
        "conclusions": conclusions,
        "errors": dict(sorted(errors.items())),
    }


def _analyze_specimen(args) -> dict:
    records, manifest, config = args
    bundles = [analyze_specimen_day(r, manifest, config) for r in sorted(records, key=lambda r: r.day)]
    series = specimen_series(bundles, config.exclude_outliers)
    first = bundles[0]
    return {
        "id": first.id,
        "wc_ratio": first.wc_ratio,
        "days": [b.to_dict() for b in bundles],
        **series,
    }


def _group_series(specimens: Sequence[dict]) -> dict:
    """Day-wise means across the specimens of one w/c ratio."""
    per_day: dict[int, dict[str, list[float]]] = {}
    keys = {
        "delta_t_s": ("energy", "delta_t_s"),
        "total_j": ("energy", "total_j"),
        "mu": ("energy", "mu"),
        "phase_slope_rad_per_hz": ("phase", "slope_rad_per_hz"),
        "gamma": ("harmonics", "gamma"),
    }
    for s in specimens:
        for d in s["days"]:
            slot = per_day.setdefault(d["day"], {k: [] for k in keys})
            for k, (sec, name) in keys.items():
                v = (d.get(sec) or {}).get(name)
                if v is not None:
                    slot[k].append(v)
    days = sorted(per_day)
    means = {
        k: [float(np.mean(per_day[d][k])) if per_day[d][k] else None for d in days] for k in keys
    }
    cv = _cv([v for v in means["delta_t_s"] if v is not None])
    return {"days": days, "mean": means, "delta_t_cv": cv}


def build_report(
    manifest: DatasetManifest, config: AnalysisConfig = AnalysisConfig(), workers: int = 1
) -> dict:
    """Analyse every record and assemble the report document.

    Never raises for data problems: they are recorded inline or as
    warnings. The output is identical for any ``workers`` value.
    """
    config.validate()
    warnings = [str(f) for f in validate_manifest(manifest, check_files=True)]
    if not manifest.specimens:
        warnings.append("manifest lists no specimens")

    by_id: dict[str, list[SpecimenRecord]] = {}
    for r in manifest.specimens:
        by_id.setdefault(r.id, []).append(r)
    for sid, recs in sorted(by_id.items()):
        if len({r.day for r in recs}) < MIN_SERIES_DAYS:
            warnings.append(f"{sid}: fewer than {MIN_SERIES_DAYS} days, series fits skipped")
    jobs = [(by_id[k], manifest, config) for k in sorted(by_id)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            specimens = list(pool.map(_analyze_specimen, jobs))
    else:
        specimens = [_analyze_specimen(j) for j in jobs]
    specimens.sort(key=lambda s: (s["wc_ratio"], s["id"]))

    groups = []
    for wc in sorted({s["wc_ratio"] for s in specimens}):
        members = [s for s in specimens if s["wc_ratio"] == wc]
        groups.append({"wc_ratio": wc, "specimens": [s["id"] for s in members], **_group_series(members)})

    return {
        "schema": SCHEMA,
        "config": config.to_dict(),
        "nominal_f0_hz": manifest.nominal_f0,
        "impedance_ohm": config.impedance if config.impedance is not None else manifest.impedance,
        "warnings": warnings,
        "specimens": specimens,
        "groups": groups,
    }


# ------------------------------------------------------------ output


def _fmt_float(v: float) -> str:
    if not math.isfinite(v):
        return "null"
    return "%.17g" % v


def to_json(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits.

    Non-finite floats become ``null``.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(obj[k], indent, _level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def report_json(report: dict) -> str:
    return to_json(report) + "\n"


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for s in report["specimens"]:
        for row in map(_csv_row_from_day, s["days"]):
            writer.writerow({k: _csv_cell(row.get(k)) for k in CSV_COLUMNS})
    return buf.getvalue()


def _csv_row_from_day(d: dict) -> dict:
    e, p, h = d.get("energy") or {}, d.get("phase") or {}, d.get("harmonics") or {}
    return {
        "id": d["id"],
        "wc_ratio": d["wc_ratio"],
        "day": d["day"],
        "caco3_pct": d.get("caco3_pct"),
        **{k: e.get(k) for k in ("signal_energy", "total_j", "mu", "r2_mu", "delta_t_s")},
        "phase_slope_rad_per_hz": p.get("slope_rad_per_hz"),
        "phase_pearson_r": p.get("pearson_r"),
        "travel_time_s": p.get("travel_time_s"),
        "phase_delta_vs_benchmark": p.get("delta_vs_benchmark"),
        **{k: h.get(k) for k in ("fundamental_hz", "third_hz", "sub_hz", "sub_bw_hz", "beta", "gamma")},
    }


def _csv_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return _fmt_float(v) if math.isfinite(v) else ""
    return str(v)


def write_report(report: dict, out_dir: str | Path, plots: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json", out / "report.csv"]
    written[0].write_text(report_json(report))
    written[1].write_text(report_csv(report))
    if plots:
        written.extend(render_plots(report, out / "plots"))
    return written


# ------------------------------------------------------------ plots

_PLOTS = (
    ("mu_vs_day", ("energy", "mu"), "day", "mu (1/s)", False),
    ("energy_vs_day", ("energy", "total_j"), "day", "energy (J)", False),
    ("energy_vs_caco3", ("energy", "total_j"), "caco3_pct", "energy (J)", False),
    ("delta_t_vs_caco3", ("energy", "delta_t_s"), "caco3_pct", "delta t (s)", False),
    ("phase_slope_vs_day", ("phase", "slope_rad_per_hz"), "day", "phase slope (rad/Hz)", False),
    ("phase_slope_vs_caco3", ("phase", "slope_rad_per_hz"), "caco3_pct", "phase slope (rad/Hz)", False),
    ("gamma_vs_day", ("harmonics", "gamma"), "day", "gamma", False),
    ("loggamma_vs_caco3", ("harmonics", "gamma"), "caco3_pct", "log10 gamma", True),
)


def render_plots(report: dict, out_dir: str | Path) -> list[Path]:
    """One SVG per index, one line per specimen. Output is byte-stable."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "carbosound", "svg.fonttype": "none"}):
        for name, (sec, key), xkey, ylabel, log in _PLOTS:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for s in report["specimens"]:
                pts = []
                for d in s["days"]:
                    v = (d.get(sec) or {}).get(key)
                    x = d.get(xkey)
                    if v is not None and x is not None and (not log or v > 0):
                        pts.append((x, math.log10(v) if log else v))
                if pts:
                    xs, ys = zip(*pts)
                    ax.plot(xs, ys, "o-", label=f"{s['id']} (w/c {s['wc_ratio']:g})")
            ax.set_xlabel("CaCO3 (% wt)" if xkey == "caco3_pct" else "carbonation day")
            ax.set_ylabel(ylabel)
            if ax.has_data():
                ax.legend(fontsize="small")
            fig.tight_layout()
            path = out / f"{name}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def iter_rows(report: dict) -> Iterable[dict]:
    for s in report["specimens"]:
        for d in s["days"]:
            yield _csv_row_from_day(d)
