"""Waveform and dataset types, file formats and manifest validation.

Two waveform encodings are supported:

* text: UTF-8 CSV with columns ``time_s,voltage_v`` (header optional).
* binary: magic ``CSW1``, then little-endian ``u64`` sample count and
  ``f64`` dt, t0, distance (NaN when unknown), followed by ``f64`` samples.

Manifests are JSON documents::

    {"nominal_f0_hz": 500000.0, "impedance_ohm": 1.0,
     "specimens": [{"id": "P06-a", "wc_ratio": 0.6, "day": 0,
                    "caco3_pct": 1.5, "waveforms": ["P06-a_d000_s0.csw"]}]}

Relative waveform paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    EmptySignal,
    InvalidManifest,
    InvalidWaveform,
    MismatchedGrids,
    NonUniformSampling,
    UnreadableFile,
)

BINARY_MAGIC = b"CSW1"
_HEADER = struct.Struct("<4sQddd")

DEFAULT_DISTANCE_M = 0.057
DEFAULT_NOMINAL_F0_HZ = 5.0e5
DEFAULT_IMPEDANCE_OHM = 1.0
UNIFORMITY_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class Waveform:
    """Uniformly sampled voltage trace.

    Parameters
    ----------
    samples : array_like
        Voltage values (V). Stored as a read-only float64 copy.
    dt : float
        Sample interval (s), strictly positive.
    t0 : float
        Time of the first sample (s).
    distance : float, optional
        Propagation path length (m). ``None`` when not recorded.
    """

    samples: np.ndarray
    dt: float
    t0: float = 0.0
    distance: Optional[float] = None

    def __post_init__(self) -> None:
        x = np.array(self.samples, dtype=np.float64).ravel()
        if x.size == 0:
            raise EmptySignal("waveform has no samples")
        if not np.all(np.isfinite(x)):
            raise InvalidWaveform("waveform contains non-finite samples")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise InvalidWaveform("dt must be finite and positive", dt=self.dt)
        if not math.isfinite(self.t0):
            raise InvalidWaveform("t0 must be finite", t0=self.t0)
        dist = self.distance
        if dist is not None and (not math.isfinite(dist) or dist <= 0):
            dist = None
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "distance", None if dist is None else float(dist))

    @property
    def n(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return (self.n - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) * self.dt

    @property
    def distance_or_default(self) -> float:
        return DEFAULT_DISTANCE_M if self.distance is None else self.distance

    def scaled(self, a: float) -> "Waveform":
        return Waveform(a * self.samples, self.dt, self.t0, self.distance)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Waveform):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.t0 == other.t0
            and self.distance == other.distance
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class SpecimenRecord:
    """One specimen measured on one carbonation day.

    Values are not checked on construction; :func:`validate_manifest`
    reports problems instead of raising, so malformed manifests can be
    inspected as a whole.
    """

    id: str
    wc_ratio: float
    day: int
    caco3: Optional[float] = None
    waveform_paths: tuple[str, ...] = ()


@dataclass(frozen=True)
class DatasetManifest:
    specimens: tuple[SpecimenRecord, ...] = ()
    nominal_f0: float = DEFAULT_NOMINAL_F0_HZ
    impedance: float = DEFAULT_IMPEDANCE_OHM
    root: Optional[Path] = field(default=None, compare=False)

    def resolve(self, path: str | Path) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p


# --------------------------------------------------------------------------
# Waveform files
# --------------------------------------------------------------------------


def _check_uniform(times: np.ndarray) -> float:
    gaps = np.diff(times)
    dt = float(np.median(gaps))
    if not (dt > 0 and math.isfinite(dt)):
        raise NonUniformSampling("timestamps are not increasing", dt=dt)
    worst = float(np.max(np.abs(gaps - dt)) / dt)
    if worst > UNIFORMITY_RTOL:
        raise NonUniformSampling(
            "timestamps deviate from a uniform grid", max_relative_deviation=worst
        )
    return dt


def _read_binary(path: Path, blob: bytes) -> Waveform:
    if len(blob) < _HEADER.size:
        raise UnreadableFile("truncated binary header", path=str(path))
    magic, count, dt, t0, distance = _HEADER.unpack_from(blob, 0)
    expected = _HEADER.size + 8 * count
    if len(blob) != expected:
        raise UnreadableFile(
            "binary payload size mismatch", path=str(path), expected=expected, got=len(blob)
        )
    if count < 2:
        raise EmptySignal("fewer than 2 samples", path=str(path))
    samples = np.frombuffer(blob, dtype="<f8", count=count, offset=_HEADER.size)
    return Waveform(samples, dt, t0, None if math.isnan(distance) else distance)


def _read_text(path: Path, text: str, dt_hint: Optional[float]) -> Waveform:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in line.split(",")]
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            if rows:
                raise UnreadableFile("non-numeric row", path=str(path), line=lineno)
            continue  # header
    if not rows:
        raise EmptySignal("no data rows", path=str(path))
    width = {len(r) for r in rows}
    if len(width) != 1 or width.pop() not in (1, 2):
        raise UnreadableFile("expected one or two columns", path=str(path))
    data = np.asarray(rows, dtype=np.float64)
    if data.shape[0] < 2:
        raise EmptySignal("fewer than 2 samples", path=str(path))
    if data.shape[1] == 1:
        if dt_hint is None:
            raise UnreadableFile("single-column file needs dt_hint", path=str(path))
        return Waveform(data[:, 0], dt_hint, 0.0)
    dt = _check_uniform(data[:, 0])
    return Waveform(data[:, 1], dt, data[0, 0])


def load_waveform(path: str | Path, dt_hint: Optional[float] = None) -> Waveform:
    """Read a waveform from a binary ``CSW1`` file or a CSV text file.

    The format is detected from the leading magic bytes. For two-column
    text, dt is the median timestamp gap and every gap must agree with it
    to 1e-6 relative. ``dt_hint`` is only used for single-column text.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise UnreadableFile(str(exc), path=str(path)) from exc
    if blob[:4] == BINARY_MAGIC:
        return _read_binary(path, blob)
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise UnreadableFile("not UTF-8 text or CSW1 binary", path=str(path)) from exc
    return _read_text(path, text, dt_hint)


def save_waveform(w: Waveform, path: str | Path, fmt: Optional[str] = None) -> Path:
    """Write ``w`` as CSV (``.csv``/``.txt``) or binary (anything else).

    Text output uses ``repr`` so samples survive a round trip exactly.
    """
    path = Path(path)
    if fmt is None:
        fmt = "text" if path.suffix.lower() in (".csv", ".txt") else "binary"
    if fmt == "binary":
        dist = float("nan") if w.distance is None else w.distance
        header = _HEADER.pack(BINARY_MAGIC, w.n, w.dt, w.t0, dist)
        path.write_bytes(header + w.samples.astype("<f8").tobytes())
    elif fmt == "text":
        lines = ["time_s,voltage_v"]
        lines += [f"{t!r},{v!r}" for t, v in zip(w.times.tolist(), w.samples.tolist())]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown waveform format {fmt!r}")
    return path


def average_waveforms(waveforms: Sequence[Waveform]) -> Waveform:
    """Pointwise mean of waveforms recorded on one acquisition grid."""
    if not waveforms:
        raise EmptySignal("nothing to average")
    ref = waveforms[0]
    for w in waveforms[1:]:
        if w.n != ref.n:
            raise MismatchedGrids("length differs", expected=ref.n, got=w.n)
        if not math.isclose(w.dt, ref.dt, rel_tol=1e-9):
            raise MismatchedGrids("dt differs", expected=ref.dt, got=w.dt)
        if abs(w.t0 - ref.t0) > 1e-9 * ref.dt:
            raise MismatchedGrids("t0 differs", expected=ref.t0, got=w.t0)
    if len(waveforms) == 1:
        return ref
    distances = {w.distance for w in waveforms if w.distance is not None}
    if len(distances) > 1:
        raise MismatchedGrids("propagation distance differs", got=sorted(distances))
    mean = np.mean(np.stack([w.samples for w in waveforms]), axis=0)
    return Waveform(mean, ref.dt, ref.t0, distances.pop() if distances else None)


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    kind: str
    subject: str
    detail: str = ""

    def __str__(self) -> str:
        tail = f": {self.detail}" if self.detail else ""
        return f"{self.kind}({self.subject!r}){tail}"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def kinds(self) -> set[str]:
        return {f.kind for f in self.findings}

    def __iter__(self):
        return iter(self.findings)

    def __len__(self) -> int:
        return len(self.findings)


def validate_manifest(manifest: DatasetManifest, check_files: bool = True) -> ValidationReport:
    """Collect problems in ``manifest`` without raising.

    A specimen may appear once per carbonation day; a repeated
    ``(id, day)`` pair is a ``DuplicateId``. Days for one id must be listed
    in strictly increasing order.
    """
    findings: list[Finding] = []
    if not (math.isfinite(manifest.nominal_f0) and manifest.nominal_f0 > 0):
        findings.append(Finding("InvalidNominalFrequency", "manifest", repr(manifest.nominal_f0)))
    if not (math.isfinite(manifest.impedance) and manifest.impedance > 0):
        findings.append(Finding("NonPositiveImpedance", "manifest", repr(manifest.impedance)))

    seen: set[tuple[str, int]] = set()
    last_day: dict[str, int] = {}
    flagged_order: set[str] = set()
    for rec in manifest.specimens:
        key = (rec.id, rec.day)
        if key in seen:
            findings.append(Finding("DuplicateId", rec.id, f"day {rec.day}"))
        seen.add(key)

        if not isinstance(rec.day, int) or isinstance(rec.day, bool) or rec.day < 0:
            findings.append(Finding("InvalidDay", rec.id, repr(rec.day)))
        else:
            prev = last_day.get(rec.id)
            # equal days are already reported as DuplicateId
            if prev is not None and rec.day < prev and rec.id not in flagged_order:
                findings.append(Finding("NonMonotoneDays", rec.id, f"day {rec.day} after {prev}"))
                flagged_order.add(rec.id)
            last_day[rec.id] = rec.day

        if not (isinstance(rec.wc_ratio, (int, float)) and 0 < rec.wc_ratio < 1):
            findings.append(Finding("InvalidWcRatio", rec.id, repr(rec.wc_ratio)))
        if rec.caco3 is not None:
            if not math.isfinite(rec.caco3):
                findings.append(Finding("NonFiniteConcentration", rec.id, repr(rec.caco3)))
            elif rec.caco3 < 0:
                findings.append(Finding("NegativeConcentration", rec.id, repr(rec.caco3)))
        if not rec.waveform_paths:
            findings.append(Finding("NoWaveforms", rec.id, f"day {rec.day}"))
        if check_files:
            for p in rec.waveform_paths:
                if not manifest.resolve(p).is_file():
                    findings.append(Finding("MissingFile", str(p), rec.id))
    return ValidationReport(tuple(findings))


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise InvalidManifest(f"missing field {key!r}", where=where)
    return obj[key]


def manifest_from_dict(doc: dict, root: Optional[Path] = None) -> DatasetManifest:
    if not isinstance(doc, dict):
        raise InvalidManifest("manifest must be a JSON object")
    specimens = []
    for i, s in enumerate(_require(doc, "specimens", "manifest")):
        where = f"specimens[{i}]"
        if not isinstance(s, dict):
            raise InvalidManifest("specimen entry must be an object", where=where)
        caco3 = s.get("caco3_pct")
        day = _require(s, "day", where)
        if isinstance(day, float) and day.is_integer():
            day = int(day)
        specimens.append(
            SpecimenRecord(
                id=str(_require(s, "id", where)),
                wc_ratio=float(_require(s, "wc_ratio", where)),
                day=day,
                caco3=None if caco3 is None else float(caco3),
                waveform_paths=tuple(str(p) for p in _require(s, "waveforms", where)),
            )
        )
    return DatasetManifest(
        specimens=tuple(specimens),
        nominal_f0=float(doc.get("nominal_f0_hz", DEFAULT_NOMINAL_F0_HZ)),
        impedance=float(doc.get("impedance_ohm", DEFAULT_IMPEDANCE_OHM)),
        root=root,
    )


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "nominal_f0_hz": manifest.nominal_f0,
        "impedance_ohm": manifest.impedance,
        "specimens": [
            {
                "id": r.id,
                "wc_ratio": r.wc_ratio,
                "day": r.day,
                "caco3_pct": r.caco3,
                "waveforms": list(r.waveform_paths),
            }
            for r in manifest.specimens
        ],
    }


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise UnreadableFile(str(exc), path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise InvalidManifest(f"invalid JSON: {exc}", path=str(path)) from exc
    return manifest_from_dict(doc, root=path.resolve().parent)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest_to_dict(manifest), indent=2) + "\n", encoding="utf-8")
    return path


def group_by_specimen(records: Iterable[SpecimenRecord]) -> dict[str, list[SpecimenRecord]]:
    out: dict[str, list[SpecimenRecord]] = {}
    for r in records:
        out.setdefault(r.id, []).append(r)
    return out
