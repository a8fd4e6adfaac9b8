import math
import warnings

import numpy as np
import pytest

from conftest import DEPHASING_R, TP, coupler_grid, ladder_drives
from rydrx.constants import E_A0, PLANCK
from rydrx.demod import (ClippingWarning, ModulatedCarrier, demodulate, min_detectable_depth,
                         operating_point)
from rydrx.doppler import VaporConfig
from rydrx.errors import ConfigurationError, DomainError, NoOperatingPointError
from rydrx.estimation import eit_linewidth
from rydrx.lindblad import four_level
from rydrx.spectroscopy import SpectrumScan, scan_spectrum

D745 = 745.0 * E_A0
RF = TP * 10e6


@pytest.fixture(scope="module")
def receiver(sys4, vapor):
    drives = ladder_drives(5e6, 5e6, RF / TP)
    op = operating_point(scan_spectrum(sys4, drives, vapor, detunings=coupler_grid()))
    lw = eit_linewidth(sys4, drives, vapor, detunings=coupler_grid())
    return drives, op, lw


def test_tie_break_on_symmetric_line():
    x = coupler_grid(401)
    y = 0.2 + 0.5 / (1 + (x / (TP * 4e6)) ** 2)
    op = operating_point(SpectrumScan(x, y, 1.0))
    assert op < 0
    assert op == pytest.approx(-TP * 4e6 / math.sqrt(3), rel=0.02)


@pytest.mark.parametrize("sigma_hz", [3e6, 7.5e6])
def test_gaussian_inflection(sigma_hz):
    x = coupler_grid(801)
    y = 0.1 + 0.6 * np.exp(-x ** 2 / (2 * (TP * sigma_hz) ** 2))
    assert operating_point(SpectrumScan(x, y, 1.0)) == pytest.approx(-TP * sigma_hz, rel=0.02)


def test_flat_spectrum_has_no_operating_point():
    x = coupler_grid(101)
    with pytest.raises(NoOperatingPointError):
        operating_point(SpectrumScan(x, np.full_like(x, 0.3), 1.0))


def test_inner_flank_of_doublet(sys4, vapor):
    from rydrx.spectroscopy import extract_features
    scan = scan_spectrum(sys4, ladder_drives(5e6, 2.5e6, 20e6), vapor, detunings=coupler_grid())
    f = extract_features(scan)
    assert abs(operating_point(scan)) < f.splitting / 2


def test_min_detectable_depth():
    assert min_detectable_depth(5.0, D745, 5e6) == pytest.approx(0.105, abs=0.001)
    base = min_detectable_depth(5.0, D745, 5e6)
    assert min_detectable_depth(5.0, D745, 10e6) == pytest.approx(2 * base, rel=1e-15)
    assert min_detectable_depth(10.0, D745 / 2, 5e6) == pytest.approx(base, rel=1e-15)
    assert min_detectable_depth(10.0, D745, 5e6) == pytest.approx(base / 2, rel=1e-15)
    assert base == pytest.approx(PLANCK * 5e6 / (5.0 * D745), rel=1e-15)
    for bad in ((0.0, D745, 5e6), (5.0, 0.0, 5e6), (5.0, D745, 0.0)):
        with pytest.raises(DomainError):
            min_detectable_depth(*bad)


def test_carrier_validation():
    with pytest.raises(DomainError):
        ModulatedCarrier.sine(RF, 1.0)
    with pytest.raises(DomainError):
        ModulatedCarrier(RF, np.array([0.0, 1.5]), 0.1, 1e5)
    c = ModulatedCarrier.sine(RF, 0.25, 1e3, 100e3, 5)
    assert len(c.times) == 500 and c.bandwidth == 1e3
    assert np.allclose(c.rabi.max(), 1.25 * RF, rtol=1e-6)
    assert ModulatedCarrier(RF, np.sin(np.arange(200) * 0.1), 0.1, 1e3).bandwidth < 50


def test_zero_depth_is_degenerate(sys4, vapor, receiver):
    drives, op, _ = receiver
    res = demodulate(sys4, drives, vapor, ModulatedCarrier.sine(RF, 0.0), op)
    assert res.degenerate and math.isnan(res.correlation)
    assert np.all(res.recovered == 0)
    assert res.metrics()["correlation"] is None


def test_recovers_sine(sys4, vapor, receiver):
    drives, op, lw = receiver
    res = demodulate(sys4, drives, vapor, ModulatedCarrier.sine(RF, 0.05), op, linewidth=lw)
    assert res.correlation > 0.999
    assert abs(np.sqrt(np.mean(res.recovered ** 2)) - 1) < 1e-12
    assert abs(res.recovered.mean()) < 1e-12
    assert res.clipped_fraction == 0 and res.distortion < 0.02


def test_quasi_static_limit_enforced(sys4, vapor, receiver):
    drives, op, lw = receiver
    fast = ModulatedCarrier.sine(RF, 0.05, frequency=0.2 * lw / TP, sample_rate=4 * lw / TP)
    with pytest.raises(ConfigurationError):
        demodulate(sys4, drives, vapor, fast, op, linewidth=lw)


def test_clipping_warning(sys4, vapor):
    drives = ladder_drives(5e6, 2.5e6, 20e6)
    op = operating_point(scan_spectrum(sys4, drives, vapor, detunings=coupler_grid()))
    with pytest.warns(ClippingWarning):
        res = demodulate(sys4, drives, vapor, ModulatedCarrier.sine(TP * 20e6, 0.6), op)
    assert 0 < res.clipped_fraction < 1
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        demodulate(sys4, drives, vapor, ModulatedCarrier.sine(TP * 20e6, 0.05), op)


def test_small_signal_linearity(sys4, vapor, receiver):
    drives, op, lw = receiver
    limit = min_detectable_depth(RF * 1.0545718e-34 / D745, D745, lw / TP)
    depths = np.linspace(0.25, 1.0, 4) * min(limit, 0.2)
    amps = np.array([demodulate(sys4, drives, vapor, ModulatedCarrier.sine(RF, m), op).amplitude
                     for m in depths])
    slope = np.dot(amps, depths) / np.dot(depths, depths)
    assert np.max(np.abs(amps / (slope * depths) - 1)) < 0.10


def _mode_correlation(gamma_r, classes=201):
    from rydrx.atomic import load_species
    rb = load_species("Rb87")
    system = four_level(rb.intermediate_decay_rate, gamma_r, DEPHASING_R)
    vapor = VaporConfig.for_species(rb, n_classes=classes)
    drives = ladder_drives(5e6, 5e6, RF / TP)
    op = operating_point(scan_spectrum(system, drives, vapor, detunings=coupler_grid()))
    lw = eit_linewidth(system, drives, vapor, detunings=coupler_grid())
    tone = lw / TP / 100
    carrier = ModulatedCarrier.sine(RF, 0.05, tone, 20 * tone, 1)
    qs = demodulate(system, drives, vapor, carrier, op, linewidth=lw)
    full = demodulate(system, drives, vapor, carrier, op, mode="full")
    return float(np.corrcoef(qs.recovered, full.recovered)[0, 1])


@pytest.mark.xfail(strict=True, reason="slow Rydberg relaxation (0.3 MHz) makes the full-dynamics "
                   "readout lag the quasi-static one by ~0.1 us; correlation ~0.998")
def test_modes_agree_default_rydberg_decay():
    assert _mode_correlation(TP * 0.3e6) > 0.999


def test_modes_agree_fast_rydberg_decay():
    assert _mode_correlation(TP * 3e6) > 0.999
