import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from carbosound.errors import (
    EmptySignal,
    InvalidManifest,
    InvalidWaveform,
    MismatchedGrids,
    NonUniformSampling,
    UnreadableFile,
)
from carbosound.signal_model import (
    DEFAULT_DISTANCE_M,
    DatasetManifest,
    SpecimenRecord,
    Waveform,
    average_waveforms,
    load_manifest,
    load_waveform,
    manifest_from_dict,
    save_manifest,
    save_waveform,
    validate_manifest,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestWaveform:
    def test_fields_and_duration(self):
        w = Waveform([0.0, 1.0, 0.0], 1e-6, t0=2e-6)
        assert w.n == 3
        assert w.duration == 2e-6
        np.testing.assert_array_equal(w.times, [2e-6, 3e-6, 4e-6])
        assert w.distance is None
        assert w.distance_or_default == DEFAULT_DISTANCE_M

    def test_samples_are_read_only_copy(self):
        src = np.array([1.0, 2.0])
        w = Waveform(src, 1.0)
        src[0] = 9.0
        assert w.samples[0] == 1.0
        with pytest.raises(ValueError):
            w.samples[0] = 3.0

    @pytest.mark.parametrize(
        "samples, dt",
        [([1.0, np.nan], 1.0), ([1.0, np.inf], 1.0), ([1.0, 2.0], 0.0), ([1.0], -1.0)],
    )
    def test_invalid(self, samples, dt):
        with pytest.raises(InvalidWaveform):
            Waveform(samples, dt)

    def test_empty(self):
        with pytest.raises(EmptySignal):
            Waveform([], 1.0)


class TestLoad:
    def test_csv_three_rows(self, tmp_path):
        p = tmp_path / "w.csv"
        p.write_text("0,0\n1e-6,1\n2e-6,0\n")
        w = load_waveform(p)
        assert w.dt == pytest.approx(1e-6, rel=1e-12)
        np.testing.assert_array_equal(w.samples, [0.0, 1.0, 0.0])

    def test_header_is_optional(self, tmp_path):
        p = tmp_path / "w.csv"
        p.write_text("time_s,voltage_v\n0,1\n0.5,2\n")
        assert load_waveform(p).samples.tolist() == [1.0, 2.0]

    def test_single_row_is_empty(self, tmp_path):
        p = tmp_path / "w.csv"
        p.write_text("0,1\n")
        with pytest.raises(EmptySignal):
            load_waveform(p)

    def test_jittered_timestamps_rejected(self, tmp_path):
        p = tmp_path / "w.csv"
        p.write_text("0,0\n1e-6,1\n2.01e-6,0\n3e-6,1\n")
        with pytest.raises(NonUniformSampling):
            load_waveform(p)

    def test_tiny_jitter_accepted(self, tmp_path):
        p = tmp_path / "w.csv"
        p.write_text("0,0\n1e-6,1\n2.0000000001e-6,0\n3e-6,1\n")
        assert load_waveform(p).n == 4

    def test_missing_and_garbage(self, tmp_path):
        with pytest.raises(UnreadableFile):
            load_waveform(tmp_path / "nope.csv")
        p = tmp_path / "bad.bin"
        p.write_bytes(b"\xff\xfe\x00garbage")
        with pytest.raises(UnreadableFile):
            load_waveform(p)
        p.write_bytes(b"CSW1\x05")
        with pytest.raises(UnreadableFile):
            load_waveform(p)

    def test_one_column_needs_dt(self, tmp_path):
        p = tmp_path / "w.txt"
        p.write_text("1\n2\n3\n")
        with pytest.raises(UnreadableFile):
            load_waveform(p)
        assert load_waveform(p, dt_hint=0.1).dt == 0.1


@settings(max_examples=40, deadline=None)
@given(
    samples=arrays(np.float64, st.integers(2, 64), elements=finite),
    dt=st.floats(1e-9, 1.0),
    t0=st.floats(-1.0, 1.0),
    distance=st.one_of(st.none(), st.floats(0.01, 1.0)),
)
def test_binary_round_trip_is_bit_exact(tmp_path_factory, samples, dt, t0, distance):
    w = Waveform(samples, dt, t0, distance)
    p = save_waveform(w, tmp_path_factory.mktemp("rt") / "w.csw")
    assert load_waveform(p) == w


@settings(max_examples=25, deadline=None)
@given(samples=arrays(np.float64, st.integers(2, 32), elements=finite))
def test_text_round_trip(tmp_path_factory, samples):
    w = Waveform(samples, 1e-7)
    back = load_waveform(save_waveform(w, tmp_path_factory.mktemp("rt") / "w.csv"))
    np.testing.assert_array_equal(back.samples, w.samples)
    assert back.dt == pytest.approx(w.dt, rel=1e-9)


class TestAverage:
    def test_identical_copies(self):
        w = Waveform([1.0, -2.0, 3.0], 0.1)
        assert average_waveforms([w, w]) == w

    def test_opposites_cancel(self):
        w = Waveform([1.0, -2.0, 3.0], 0.1)
        np.testing.assert_array_equal(average_waveforms([w, w.scaled(-1)]).samples, 0.0)

    def test_noise_reduction(self, gaussian_burst):
        clean = gaussian_burst()
        gen = np.random.default_rng(7)
        shots = [Waveform(clean.samples + gen.standard_normal(clean.n), clean.dt) for _ in range(16)]
        resid = average_waveforms(shots).samples - clean.samples
        assert np.std(resid) == pytest.approx(0.25, rel=0.2)

    @pytest.mark.parametrize(
        "other",
        [Waveform([1.0, 2.0], 0.2), Waveform([1.0, 2.0, 3.0], 0.1, t0=1.0), Waveform([1.0, 2.0, 3.0], 0.11)],
    )
    def test_mismatched(self, other):
        with pytest.raises(MismatchedGrids):
            average_waveforms([Waveform([1.0, 2.0, 3.0], 0.1), other])

    @settings(max_examples=30, deadline=None)
    @given(
        a=st.floats(-100, 100),
        x=arrays(np.float64, 8, elements=st.floats(-10, 10)),
        y=arrays(np.float64, 8, elements=st.floats(-10, 10)),
    )
    def test_linear(self, a, x, y):
        w1, w2 = Waveform(x, 1.0), Waveform(y, 1.0)
        lhs = average_waveforms([w1.scaled(a), w2.scaled(a)]).samples
        rhs = a * average_waveforms([w1, w2]).samples
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def _manifest(tmp_path, records):
    for r in records:
        for p in r.waveform_paths:
            save_waveform(Waveform([0.0, 1.0], 1.0), tmp_path / p)
    return DatasetManifest(tuple(records), root=tmp_path)


class TestValidation:
    def test_clean(self, tmp_path):
        m = _manifest(tmp_path, [SpecimenRecord("P06-a", 0.6, 0, 1.5, ("a.csw",)), SpecimenRecord("P06-a", 0.6, 1, 2.0, ("b.csw",))])
        assert validate_manifest(m).ok

    def test_duplicate(self, tmp_path):
        r = SpecimenRecord("P06-a", 0.6, 0, None, ("a.csw",))
        report = validate_manifest(_manifest(tmp_path, [r, r]))
        assert [(f.kind, f.subject) for f in report] == [("DuplicateId", "P06-a")]

    def test_nan_concentration(self, tmp_path):
        m = _manifest(tmp_path, [SpecimenRecord("X", 0.5, 0, float("nan"), ("a.csw",))])
        assert validate_manifest(m).kinds() == {"NonFiniteConcentration"}

    def test_order_and_missing(self, tmp_path):
        recs = [SpecimenRecord("X", 0.5, 7, None, ("a.csw",)), SpecimenRecord("X", 0.5, 3, None, ("b.csw",))]
        m = _manifest(tmp_path, recs)
        (tmp_path / "b.csw").unlink()
        assert validate_manifest(m).kinds() == {"NonMonotoneDays", "MissingFile"}

    def test_bad_values(self, tmp_path):
        recs = [SpecimenRecord("X", 1.5, -1, -2.0, ())]
        kinds = validate_manifest(DatasetManifest(tuple(recs), nominal_f0=0.0, impedance=-1.0)).kinds()
        assert kinds == {
            "InvalidWcRatio",
            "InvalidDay",
            "NegativeConcentration",
            "NoWaveforms",
            "InvalidNominalFrequency",
            "NonPositiveImpedance",
        }


def test_manifest_json_round_trip(tmp_path):
    m = DatasetManifest((SpecimenRecord("P04", 0.4, 3, None, ("w/a.csw",)),), 4.5e5, 2.0)
    save_manifest(m, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert set(doc) == {"nominal_f0_hz", "impedance_ohm", "specimens"}
    assert set(doc["specimens"][0]) == {"id", "wc_ratio", "day", "caco3_pct", "waveforms"}
    back = load_manifest(tmp_path / "m.json")
    assert back.specimens == m.specimens
    assert (back.nominal_f0, back.impedance) == (4.5e5, 2.0)
    assert back.resolve("w/a.csw") == tmp_path / "w" / "a.csw"


def test_manifest_missing_field():
    with pytest.raises(InvalidManifest):
        manifest_from_dict({"specimens": [{"id": "a", "day": 0}]})
