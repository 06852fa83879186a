"""Command-line front end.

Exit status is 0 on success (warnings go to stderr), 2 for usage errors
and 1 for runtime errors, which are also written to stderr as a
``{"error": ..., "context": ...}`` JSON record.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import energy_metrics as em
from .errors import CarbosoundError
from .harmonic_metrics import DEFAULT_MIN_PROMINENCE
from .pipeline import AnalysisConfig, analyze_waveform, build_report, load_report, render_plots, to_json, write_report
from .regression import ModelFamily, fit
from .signal_model import DEFAULT_IMPEDANCE_OHM, DEFAULT_NOMINAL_F0_HZ, load_manifest, load_waveform
from .spectral import WINDOWS
from .synth_oracle import DEFAULT_SEED, PaperProfile, synth_dataset

SEED_ENV = "CARBOSOUND_SEED"
SIDECAR = "analysis.json"
PROFILES = ("paper",)


class UsageError(Exception):
    pass


def _band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("band must be LO,HI in Hz") from None
    if not 0 <= lo < hi:
        raise argparse.ArgumentTypeError("band needs 0 <= LO < HI")
    return lo, hi


def _fraction(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", choices=WINDOWS, default=None, help="PSD window (default rectangular)")
    p.add_argument("--band", type=_band, default=None, metavar="LO,HI", help="phase-fit band in Hz")
    p.add_argument(
        "--min-prominence",
        type=_fraction,
        default=None,
        help=f"peak prominence as a fraction of the PSD maximum (default {DEFAULT_MIN_PROMINENCE})",
    )
    p.add_argument("--impedance", type=_positive, default=None, help="load impedance in ohm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carbosound", description="Ultrasonic carbonation indices.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="indices of a single waveform file, as JSON on stdout")
    p.add_argument("file", type=Path)
    _analysis_flags(p)
    p.add_argument("--nominal-f0", type=_positive, default=DEFAULT_NOMINAL_F0_HZ, help="transducer frequency (Hz)")
    p.add_argument("--dt", type=_positive, default=None, help="sample interval for one-column text files")

    p = sub.add_parser("batch", help="analyse a manifest into report.json, report.csv and plots")
    p.add_argument("manifest", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    _analysis_flags(p)
    p.add_argument("--exclude-outliers", action="store_true", help="refit phase series without flagged days")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--plots", action="store_true", help="also write SVG plots")

    p = sub.add_parser("fit", help="fit a model family to a two-column CSV")
    p.add_argument("data", type=Path)
    p.add_argument("--family", required=True, choices=[f.value for f in ModelFamily])
    p.add_argument("--multistart", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--profile", choices=PROFILES, default="paper")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--seed", type=int, default=None, help=f"noise seed (env {SEED_ENV})")
    p.add_argument("--noise-std", type=float, default=0.0)

    p = sub.add_parser("report", help="regenerate plots from DIR/report.json")
    p.add_argument("dir", type=Path)
    return parser


def _config(args: argparse.Namespace, sidecar: Optional[dict] = None) -> AnalysisConfig:
    cfg = AnalysisConfig()
    if sidecar:
        known = {k: sidecar[k] for k in ("window", "min_prominence") if k in sidecar}
        if "band" in sidecar and sidecar["band"] is not None:
            known["band"] = tuple(sidecar["band"])
        cfg = replace(cfg, **known)
    overrides = {
        "window": args.window,
        "band": args.band,
        "min_prominence": args.min_prominence,
        "impedance": args.impedance,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "exclude_outliers", False):
        cfg = replace(cfg, exclude_outliers=True)
    try:
        return cfg.validate()
    except (ValueError, CarbosoundError) as exc:
        raise UsageError(str(exc)) from exc


def _read_xy(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(";", ",").split(",") if "," in line or ";" in line else line.split()
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except (ValueError, IndexError):
            if rows:
                raise CarbosoundError("malformed data row", path=str(path), line=line) from None
            continue  # header
    if not rows:
        raise CarbosoundError("no numeric rows", path=str(path))
    x, y = np.array(rows).T
    return x, y


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _config(args)
    w = load_waveform(args.file, dt_hint=args.dt)
    em.cumulative_energy(w)  # a zero trace is an error here, not an absent index
    b = analyze_waveform(w, cfg, args.nominal_f0, DEFAULT_IMPEDANCE_OHM, id=args.file.stem)
    d = b.to_dict()
    d.pop("wc_ratio")
    sys.stdout.write(to_json(d) + "\n")
    return 0


def cmd_batch(args: argparse.Namespace) -> int:
    sidecar = None
    side = args.manifest.parent / SIDECAR
    if side.is_file():
        try:
            sidecar = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise CarbosoundError("unreadable analysis settings", path=str(side)) from exc
    cfg = _config(args, sidecar)
    manifest = load_manifest(args.manifest)
    report = build_report(manifest, cfg, workers=args.workers)
    write_report(report, args.output, plots=args.plots)
    for msg in report["warnings"]:
        print(f"warning: {msg}", file=sys.stderr)
    _print_summary(report)
    return 0


def _sig4(v) -> str:
    return "-" if v is None else f"{v:.4g}"


def _print_summary(report: dict) -> None:
    cols = (
        "energy_decay_b",
        "mu_trend_per_day",
        "delta_t_cv",
        "phase_decay_c",
        "phase_caco3_dominant_rate",
        "loggamma_caco3_slope",
    )
    print("id\twc\t" + "\t".join(cols))
    for s in report["specimens"]:
        c = s["conclusions"]
        print(f"{s['id']}\t{s['wc_ratio']:g}\t" + "\t".join(_sig4(c[k]) for k in cols))


def cmd_fit(args: argparse.Namespace) -> int:
    x, y = _read_xy(args.data)
    res = fit(args.family, x, y, multistart=args.multistart, seed=args.seed)
    sys.stdout.write(to_json(res.to_dict()) + "\n")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    seed = args.seed
    if seed is None:
        env = os.environ.get(SEED_ENV)
        try:
            seed = int(env) if env else DEFAULT_SEED
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer") from None
    profile = PaperProfile(seed=seed, noise_std=args.noise_std)
    manifest = synth_dataset(profile, args.output)
    print(f"wrote {len(manifest.specimens)} specimen-days to {args.output}", file=sys.stderr)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    report = load_report(args.dir / "report.json")
    for p in render_plots(report, args.dir / "plots"):
        print(p)
    return 0


COMMANDS = {
    "analyze": cmd_analyze,
    "batch": cmd_batch,
    "fit": cmd_fit,
    "synth": cmd_synth,
    "report": cmd_report,
}


def _fail(exc: BaseException) -> int:
    if isinstance(exc, CarbosoundError):
        rec = {"error": exc.name, "context": exc.context}
        rec["context"].setdefault("message", str(exc))
    else:
        rec = {"error": type(exc).__name__, "context": {"message": str(exc)}}
    sys.stderr.write(json.dumps(rec, sort_keys=True, default=str) + "\n")
    return 1


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"carbosound: error: {exc}", file=sys.stderr)
        return 2
    except (CarbosoundError, OSError, ValueError) as exc:
        return _fail(exc)


def main(argv: Optional[Sequence[str]] = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
