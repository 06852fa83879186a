import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from carbosound.errors import AllBelowFloor, UnknownWindow
from carbosound.signal_model import Waveform
from carbosound.spectral import (
    dft,
    phase_spectrum,
    power_spectral_density,
    psd_rows,
    spectrum_rows,
    unwrap_phase,
)


def brute_force_dft(x):
    n = len(x)
    k = np.arange(n // 2 + 1)[:, None]
    m = np.arange(n)[None, :]
    return (np.asarray(x)[None, :] * np.exp(-2j * np.pi * k * m / n)).sum(axis=1)


class TestDft:
    def test_dc(self):
        s = dft(Waveform([1.0, 1.0, 1.0, 1.0], 1.0))
        np.testing.assert_allclose(s.coeffs, [4, 0, 0], atol=1e-15)

    def test_delta(self):
        s = dft(Waveform([1.0, 0.0, 0.0, 0.0], 1.0))
        np.testing.assert_allclose(s.coeffs, [1, 1, 1])

    @pytest.mark.parametrize("n", [256, 255, 17])
    def test_matches_brute_force(self, rng, n):
        x = rng.standard_normal(n)
        s = dft(Waveform(x, 1e-7))
        ref = brute_force_dft(x)
        assert np.max(np.abs(s.coeffs - ref)) / np.max(np.abs(ref)) < 1e-9

    def test_axis(self):
        s = dft(Waveform(np.zeros(10) + 1.0, 0.5))
        assert s.df == pytest.approx(0.2)
        np.testing.assert_allclose(np.diff(s.freqs), s.df)
        assert s.freqs[0] == 0 and s.freqs[-1] == pytest.approx(1.0)

    def test_padding_changes_grid_only(self, rng):
        x = rng.standard_normal(100)
        s = dft(Waveform(x, 1.0), pad_pow2=True)
        assert s.n_fft == 128 and s.n == 100
        assert s.coeffs[0] == pytest.approx(x.sum())

    @settings(max_examples=30, deadline=None)
    @given(
        x=arrays(np.float64, 32, elements=st.floats(-1, 1)),
        y=arrays(np.float64, 32, elements=st.floats(-1, 1)),
        a=st.floats(-5, 5),
        b=st.floats(-5, 5),
    )
    def test_linear(self, x, y, a, b):
        lhs = dft(Waveform(a * x + b * y, 1.0)).coeffs
        rhs = a * dft(Waveform(x, 1.0)).coeffs + b * dft(Waveform(y, 1.0)).coeffs
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * (1 + np.abs(rhs).max()))


class TestPsd:
    def test_zero(self):
        ps = power_spectral_density(Waveform(np.zeros(64), 1.0))
        assert np.all(ps.psd == 0)

    def test_on_bin_tone(self):
        n, dt = 1024, 1e-6
        f0 = 50 / (n * dt)
        x = np.sin(2 * np.pi * f0 * np.arange(n) * dt)
        ps = power_spectral_density(Waveform(x, dt))
        assert ps.freqs[np.argmax(ps.psd)] == pytest.approx(f0)
        assert np.sum(ps.psd) * ps.df == pytest.approx(0.5, rel=1e-6)
        hann = power_spectral_density(Waveform(x, dt), "hann")
        assert np.argmax(hann.psd) == np.argmax(ps.psd)

    def test_non_negative(self, rng):
        for window in ("rectangular", "hann"):
            assert np.all(power_spectral_density(Waveform(rng.standard_normal(99), 1.0), window).psd >= 0)

    @pytest.mark.parametrize("n", [256, 257])
    def test_parseval(self, rng, n):
        x = rng.standard_normal(n)
        ps = power_spectral_density(Waveform(x, 2e-7))
        # one-sided periodogram integrates to the mean-square value
        assert np.sum(ps.psd) * ps.df == pytest.approx(np.mean(x**2), rel=1e-9)

    def test_unknown_window(self):
        with pytest.raises(UnknownWindow):
            power_spectral_density(Waveform([1.0, 2.0], 1.0), "blackman")

    def test_band_power(self):
        n = 200
        x = np.cos(2 * np.pi * 10 * np.arange(n) / n)
        ps = power_spectral_density(Waveform(x, 1.0 / n))
        assert ps.band_power(5, 15) == pytest.approx(0.5)
        assert ps.band_power(20, 30) == pytest.approx(0.0, abs=1e-20)


class TestPhase:
    def test_unwrap_single_wrap(self):
        out = unwrap_phase(np.array([0, math.pi / 2, math.pi, -math.pi / 2]))
        np.testing.assert_allclose(out, [0, math.pi / 2, math.pi, 3 * math.pi / 2])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-math.pi, math.pi)))
    def test_unwrap_properties(self, wrapped):
        out = unwrap_phase(wrapped)
        steps = np.diff(out)
        assert np.all(steps <= math.pi + 1e-12) and np.all(steps > -math.pi - 1e-12)
        k = (out - wrapped) / (2 * math.pi)
        np.testing.assert_allclose(k, np.round(k), atol=1e-9)

    def test_delay_difference(self, gaussian_burst):
        tau = 1e-5
        w0 = gaussian_burst(delay=2e-4)
        w1 = gaussian_burst(delay=2e-4 + tau)
        s0, s1 = dft(w0), dft(w1)
        p0, p1 = phase_spectrum(s0), phase_spectrum(s1)
        common = np.intersect1d(p0.bins, p1.bins)
        band = (s0.freqs[common] > 300e3) & (s0.freqs[common] < 500e3)
        f = s0.freqs[common][band]
        d = p1.phase[np.isin(p1.bins, common)][band] - p0.phase[np.isin(p0.bins, common)][band]
        d = d - 2 * math.pi * np.round((d[0] + 2 * math.pi * f[0] * tau) / (2 * math.pi))
        assert np.max(np.abs(d + 2 * math.pi * f * tau)) < 1e-3

    def test_even_sequence(self):
        x = np.array([3.0, 1.0, 0.5, 0.2, 0.1, 0.2, 0.5, 1.0])
        pc = phase_spectrum(dft(Waveform(x, 1.0)))
        np.testing.assert_allclose(np.mod(pc.phase + 1e-9, math.pi), 1e-9, atol=1e-9)

    def test_floor_excludes_quiet_bins(self):
        n = 64
        x = np.cos(2 * np.pi * 5 * np.arange(n) / n)
        pc = phase_spectrum(dft(Waveform(x, 1.0)))
        assert pc.bins.tolist() == [5]

    def test_zero_spectrum(self):
        with pytest.raises(AllBelowFloor):
            phase_spectrum(dft(Waveform(np.zeros(8), 1.0)))


def test_export_rows():
    w = Waveform([1.0, 0.0, 0.0, 0.0], 0.5)
    assert spectrum_rows(dft(w))[1] == (0.5, 1.0, 0.0)
    assert len(psd_rows(power_spectral_density(w))) == 3


def test_runtime(rng):
    start = time.perf_counter()
    for _ in range(20):
        dft(Waveform(rng.standard_normal(256), 1.0))
    assert time.perf_counter() - start < 1.0
