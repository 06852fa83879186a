import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carbosound.energy_metrics import scaled_energy
from carbosound.errors import AliasedHarmonic, IoFailure
from carbosound.harmonic_metrics import classify_harmonics, detect_peaks
from carbosound.signal_model import load_manifest, load_waveform
from carbosound.spectral import power_spectral_density
from carbosound.synth_oracle import (
    DAY_GRID,
    PAPER_SCHEDULES,
    PaperProfile,
    PulseSpec,
    band_amplitude_factor,
    normal_deviates,
    plan_schedule,
    synth_dataset,
    synth_pulse,
)


class TestPulse:
    def test_bit_identical(self):
        spec = PulseSpec(amplitudes=(1.0, 0.1, 0.01), noise_std=0.01, seed=9, sub_f=1e5, sub_amplitude=0.1)
        a, b = synth_pulse(spec), synth_pulse(spec)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_seed_changes_noise(self):
        a = synth_pulse(PulseSpec(noise_std=0.01, seed=1))
        b = synth_pulse(PulseSpec(noise_std=0.01, seed=2))
        assert not np.array_equal(a.samples, b.samples)

    def test_third_needs_headroom(self):
        with pytest.raises(AliasedHarmonic):
            synth_pulse(PulseSpec(carrier_f=2e6, amplitudes=(1.0, 0.0, 0.1)))

    def test_fundamental_above_nyquist(self):
        with pytest.raises(AliasedHarmonic):
            synth_pulse(PulseSpec(carrier_f=6e6))

    def test_subharmonic_above_nyquist(self):
        with pytest.raises(AliasedHarmonic):
            synth_pulse(PulseSpec(sub_f=6e6, sub_amplitude=0.1))

    def test_single_peak(self):
        spec = PulseSpec(n=10000)
        ps = power_spectral_density(synth_pulse(spec))
        peaks = detect_peaks(ps)
        assert len(peaks) == 1
        assert abs(peaks[0].freq - spec.carrier_f) <= ps.df

    @pytest.mark.parametrize("a1,sigma", [(1.0, 8e-6), (3.0, 5e-6), (0.2, 2e-5)])
    def test_gaussian_energy(self, a1, sigma):
        spec = PulseSpec(amplitudes=(a1, 0.0, 0.0), envelope=sigma, delay=4e-4)
        got = scaled_energy(synth_pulse(spec), 1.0)
        assert got == pytest.approx(a1**2 * sigma * math.sqrt(math.pi) / 2, rel=5e-3)

    def test_band_factor_matches_detector(self):
        spec = PulseSpec(n=10000)
        peak = detect_peaks(power_spectral_density(synth_pulse(spec)))[0]
        assert peak.amplitude == pytest.approx(band_amplitude_factor(spec), rel=1e-12)

    def test_dispersion_keeps_energy(self):
        a = synth_pulse(PulseSpec())
        b = synth_pulse(PulseSpec(dispersion=5e-11))
        assert scaled_energy(b) == pytest.approx(scaled_energy(a), rel=1e-12)
        assert not np.allclose(a.samples, b.samples)


class TestNormalDeviates:
    def test_reproducible(self):
        assert np.array_equal(normal_deviates([1, 2, 3], 101), normal_deviates([1, 2, 3], 101))

    def test_length_and_moments(self):
        z = normal_deviates(5, 200001)
        assert z.size == 200001
        assert abs(z.mean()) < 0.01
        assert z.std() == pytest.approx(1.0, abs=0.01)

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(1, 500))
    def test_prefix_stable(self, n):
        # the first n deviates do not depend on how many were requested beyond
        # the next even count
        m = n + (n % 2)
        assert np.array_equal(normal_deviates(3, n), normal_deviates(3, m)[:n])


class TestProfile:
    def test_day_grid_enforced(self):
        with pytest.raises(ValueError):
            PaperProfile(days=(0, 1, 2))

    def test_plans_cover_grid(self):
        plans = plan_schedule(PaperProfile(), PAPER_SCHEDULES[0])
        assert tuple(p.day for p in plans) == DAY_GRID

    def test_energy_strictly_decreasing(self, profile_truth):
        for wc in (0.4, 0.5, 0.6):
            e = [r["energy_j"] for r in profile_truth if r["wc_ratio"] == wc]
            assert all(b < a for a, b in zip(e, e[1:]))

    def test_third_absent_late(self, profile_truth):
        for r in profile_truth:
            assert (r["gamma"] is None) == (r["day"] >= 56)

    def test_fundamental_w06_day0(self, specimens, profile_dir):
        d0 = specimens[0.6]["days"][0]
        df = 1.0 / (PaperProfile().n * PaperProfile().dt)
        assert d0["harmonics"]["fundamental_hz"] == pytest.approx(340e3, abs=df)

    def test_energy_b_w06(self, specimens):
        assert specimens[0.6]["conclusions"]["energy_decay_b"] == pytest.approx(0.3212, rel=0.02)

    def test_day120_third_absent(self, profile_dir):
        m = load_manifest(profile_dir / "manifest.json")
        rec = next(r for r in m.specimens if r.id == "P04" and r.day == 120)
        w = load_waveform(m.resolve(rec.waveform_paths[0]))
        hs = classify_harmonics(detect_peaks(power_spectral_density(w), 1e-17), m.nominal_f0)
        assert hs.third is None

    def test_subharmonic_bandwidth_non_decreasing(self, specimens):
        for s in specimens.values():
            bw = [d["harmonics"]["sub_bw_hz"] for d in s["days"]]
            assert all(b >= a for a, b in zip(bw, bw[1:]))


class TestDataset:
    def test_deterministic_files(self, tmp_path):
        prof = PaperProfile(schedules=PAPER_SCHEDULES[:1], noise_std=1e-4)
        synth_dataset(prof, tmp_path / "a")
        synth_dataset(prof, tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) == len(DAY_GRID) * 2 + 3
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_seed_override(self, tmp_path):
        prof = PaperProfile(schedules=PAPER_SCHEDULES[:1], noise_std=1e-4)
        synth_dataset(prof, tmp_path / "a", seed=1)
        synth_dataset(prof, tmp_path / "b", seed=2)
        name = "waveforms/P04_d000_s0.csw"
        assert (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes()

    def test_mirrored_pairs_cancel(self, tmp_path):
        prof = PaperProfile(schedules=PAPER_SCHEDULES[:1], noise_std=1e-3)
        synth_dataset(prof, tmp_path)
        a = load_waveform(tmp_path / "waveforms/P04_d007_s0.csw")
        b = load_waveform(tmp_path / "waveforms/P04_d007_s1.csw")
        clean = synth_pulse(plan_schedule(prof, PAPER_SCHEDULES[0])[4].spec)
        assert np.allclose(0.5 * (a.samples + b.samples), clean.samples, atol=1e-15)

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(IoFailure):
            synth_dataset(PaperProfile(schedules=PAPER_SCHEDULES[:1]), blocker / "out")
