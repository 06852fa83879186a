import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carbosound.errors import InsufficientBins, UnsortedDays
from carbosound.phase_metrics import (
    PhaseSlopeIndex,
    default_band,
    phase_slope,
    phase_slope_series,
    travel_time,
)
from carbosound.regression import ModelFamily, fit
from carbosound.signal_model import Waveform
from carbosound.spectral import PhaseCurve, dft, phase_spectrum
from carbosound.synth_oracle import DAY_GRID, PAPER_SCHEDULES, PaperProfile, PulseSpec, apply_dispersion, phase_two_term_fixture, synth_pulse

F0 = 500e3
BAND = default_band(F0)


def slope_of(w, band=BAND):
    return phase_slope(phase_spectrum(dft(w)), band)


def pulse(delay, **kw):
    base = dict(carrier_f=F0, delay=delay, envelope=2e-6, n=4096)
    base.update(kw)
    return synth_pulse(PulseSpec(**base))


def idx(slope):
    return PhaseSlopeIndex(slope, 0.0, -1.0, BAND)


class TestPhaseSlope:
    def test_pure_delay(self):
        res = slope_of(pulse(1e-5))
        assert res.slope == pytest.approx(-6.28319e-5, rel=1e-3)
        assert abs(res.pearson_r) > 0.999999
        assert res.band == BAND and res.n_bins >= 8

    def test_zero_phase_pulse(self):
        n, dt = 4096, 1e-7
        k = np.arange(n)
        t = ((k + n // 2) % n - n // 2) * dt  # circularly centred on sample 0
        x = np.exp(-0.5 * (t / 2e-6) ** 2) * np.cos(2 * np.pi * F0 * t)
        assert slope_of(Waveform(x, dt)).slope == pytest.approx(0.0, abs=1e-8)

    def test_dispersive_pulse(self):
        delay = 1e-4
        w = pulse(delay)
        x = apply_dispersion(w.samples, w.dt, 2e-11, F0)
        res = slope_of(Waveform(x, w.dt))
        assert abs(res.pearson_r) < 1.0
        assert res.slope == pytest.approx(-2 * math.pi * delay, rel=0.02)

    def test_too_few_bins(self):
        pc = PhaseCurve(np.arange(5.0), np.zeros(5), np.arange(5), np.ones(5))
        with pytest.raises(InsufficientBins):
            phase_slope(pc, (0.0, 10.0))

    @settings(max_examples=20, deadline=None)
    @given(a=st.floats(1e-3, 1e3))
    def test_amplitude_invariance(self, a):
        w = pulse(3e-5)
        assert slope_of(w.scaled(a)).slope == pytest.approx(slope_of(w).slope, rel=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(tau0=st.floats(1e-7, 5e-5))
    def test_extra_delay_shift(self, tau0):
        base = 2e-5
        shift = slope_of(pulse(base + tau0)).slope - slope_of(pulse(base)).slope
        assert shift == pytest.approx(-2 * math.pi * tau0, rel=1e-3)


class TestTravelTime:
    def test_trivial(self):
        assert travel_time(idx(-6.28319e-5)) == pytest.approx(1.0e-5, rel=1e-5)
        assert travel_time(idx(0.0)) == 0.0

    @pytest.mark.parametrize("tau", [1e-6, 1e-5, 5e-5])
    def test_delay_chain(self, tau):
        base = 2e-5
        got = travel_time(slope_of(pulse(base + tau))) - travel_time(slope_of(pulse(base)))
        assert got == pytest.approx(tau, rel=1e-3)


def series_records(values, days=DAY_GRID, caco3=None):
    caco3 = caco3 if caco3 is not None else [None] * len(days)
    return [(d, c, idx(v)) for d, c, v in zip(days, caco3, values)]


class TestSeries:
    def test_exp_offset_recovery(self):
        x = np.array(DAY_GRID, dtype=float)
        y = -5.03e-3 + 3.8e-5 * np.exp(-2.03 * x)
        s = phase_slope_series(series_records(y))
        assert s.vs_day.params[2] == pytest.approx(2.03, abs=1e-4)
        assert s.vs_caco3 is None
        assert s.delta_vs_benchmark[0] == 0.0
        assert s.delta_vs_benchmark[-1] == pytest.approx(y[-1] - y[0])

    def test_constant_is_degenerate(self):
        s = phase_slope_series(series_records([-5e-3] * len(DAY_GRID)))
        assert "DegenerateFit" in s.vs_day.flags

    def test_two_term_fixture(self):
        profile = PaperProfile()
        sched = next(s for s in PAPER_SCHEDULES if s.wc_ratio == 0.6)
        x, y = phase_two_term_fixture(profile, sched)
        s = phase_slope_series(series_records(y, caco3=x))
        assert s.vs_caco3.dominant_rate == pytest.approx(-1.12, rel=0.05)

    def test_unsorted(self):
        with pytest.raises(UnsortedDays):
            phase_slope_series(series_records([1.0, 2.0, 3.0], days=(0, 3, 3)))

    def test_two_field_records(self):
        s = phase_slope_series([(d, idx(-1e-3 - 1e-5 * d)) for d in (0, 1, 2, 3, 4)])
        assert s.caco3 == (None,) * 5

    def test_outlier_is_flagged_not_dropped(self):
        x = np.array(DAY_GRID, dtype=float)
        y = -5.05e-3 + 3.1e-5 * np.exp(-0.53 * x)
        y[3] += 2e-5
        s = phase_slope_series(series_records(y))
        assert s.outliers == (5,)
        assert s.excluded == ()
        assert s.slopes[3] == y[3]
        cleaned = phase_slope_series(series_records(y), exclude_outliers=True)
        assert cleaned.excluded == (5,)
        assert cleaned.vs_day.params[2] == pytest.approx(0.53, rel=1e-6)
