import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import TP, coupler_grid, ladder_drives
from rydrx.errors import DimensionError, DomainError, FeatureAmbiguityError
from rydrx.spectroscopy import (BACKGROUND_TRANSMISSION, DEFAULT_OD, SpectrumScan,
                                extract_features, probe_transmission, scan_spectrum)


def test_transmission_limits():
    assert np.all(probe_transmission([0.0, 0.3, 2.0], 0.0) == 1.0)
    assert probe_transmission(0.0, 3.0) == 1.0
    assert probe_transmission(0.5, 2.0, 0.5) == pytest.approx(math.exp(-2.0), rel=1e-15)
    with pytest.raises(DomainError):
        probe_transmission(0.1, -1.0)


def test_background_calibration(sys3, vapor):
    scan = scan_spectrum(sys3, ladder_drives(18e6, 0.0), vapor, detunings=coupler_grid(41))
    assert DEFAULT_OD == pytest.approx(math.log(1 / 0.236), rel=1e-15)
    assert np.allclose(scan.transmission, BACKGROUND_TRANSMISSION, rtol=1e-12, atol=0)


def test_rf_off_single_peak(sys4, vapor):
    scan = scan_spectrum(sys4, ladder_drives(5e6, 2.5e6, 0.0), vapor, detunings=coupler_grid())
    f = extract_features(scan)
    assert f.splitting is None and len(f.peaks) == 1
    assert abs(f.peaks[0]) < scan.step


@pytest.mark.parametrize("rf_hz,rf_det_hz", [(20e6, 0.0), (20e6, 10e6), (30e6, -15e6)])
def test_rf_splitting_dressed_state(sys4, vapor, rf_hz, rf_det_hz):
    scan = scan_spectrum(sys4, ladder_drives(5e6, 2.5e6, rf_hz, rf_det_hz), vapor,
                         detunings=coupler_grid())
    f = extract_features(scan)
    expected = TP * math.hypot(rf_hz, rf_det_hz)
    assert f.splitting == pytest.approx(expected, rel=0.05)


def lorentzian(x, x0, fwhm):
    return 1.0 / (1.0 + ((x - x0) / (fwhm / 2)) ** 2)


def test_synthetic_doublet():
    x = coupler_grid(401)
    y = 0.2 + 0.5 * (lorentzian(x, -TP * 5e6, TP * 2e6) + lorentzian(x, TP * 5e6, TP * 2e6))
    f = extract_features(SpectrumScan(x, y, 1.0))
    assert f.splitting == pytest.approx(TP * 10e6, rel=0.01)
    assert f.fwhm is None


@pytest.mark.parametrize("center_hz", [0.0, 1.37e6])
def test_synthetic_single_peak(center_hz):
    x = coupler_grid(401)
    y = 0.3 + 0.4 * lorentzian(x, TP * center_hz, TP * 8e6)
    f = extract_features(SpectrumScan(x, y, 1.0))
    assert f.splitting is None
    assert f.fwhm == pytest.approx(TP * 8e6, rel=0.02)
    assert f.peaks[0] == pytest.approx(TP * center_hz, abs=0.1 * (x[1] - x[0]))


def test_flat_and_short_spectra():
    x = coupler_grid(101)
    with pytest.raises(FeatureAmbiguityError):
        extract_features(SpectrumScan(x, np.full_like(x, 0.4), 1.0))
    with pytest.raises(DimensionError):
        extract_features(SpectrumScan(x[:10], np.linspace(0, 1, 10), 1.0))


def test_three_peaks_are_ambiguous():
    x = coupler_grid(401)
    y = sum(lorentzian(x, TP * c, TP * 2e6) for c in (-20e6, 0.0, 20e6)) / 3
    with pytest.raises(FeatureAmbiguityError):
        extract_features(SpectrumScan(x, y, 1.0))


def test_scan_validation():
    with pytest.raises(DimensionError):
        SpectrumScan([0.0, 0.0], [0.5, 0.5], 1.0)
    with pytest.raises(DomainError):
        SpectrumScan([0.0, 1.0], [0.5, 1.5], 1.0)


def test_tie_break_toward_lower_detuning():
    x = coupler_grid(401)
    y = lorentzian(x, -TP * 20e6, TP * 2e6) + lorentzian(x, TP * 20e6, TP * 2e6) \
        + lorentzian(x, TP * 40e6, TP * 2e6) * 0.2
    f = extract_features(SpectrumScan(x, y / y.max(), 1.0))
    assert f.splitting == pytest.approx(TP * 40e6, rel=0.01)


@settings(max_examples=10, deadline=None)
@given(st.floats(1.0, 50.0), st.floats(0.5, 15.0), st.floats(0.0, 60.0), st.floats(0.0, 5.0))
def test_transmission_bounds(wp, wc, rf, od):
    from rydrx.atomic import load_species
    from rydrx.lindblad import four_level
    rb = load_species("Rb87")
    s = four_level(rb.intermediate_decay_rate, TP * 0.3e6, TP * 0.5e6)
    scan = scan_spectrum(s, ladder_drives(wp * 1e6, wc * 1e6, rf * 1e6), None, od,
                         detunings=coupler_grid(61))
    assert np.all((scan.transmission >= 0) & (scan.transmission <= 1))
