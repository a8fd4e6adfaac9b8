import math
import warnings

import pytest
from hypothesis import given, strategies as st

from rydrx.atomic import (DegenerateTransitionWarning, QuantumDefect, RydbergLevel, Species,
                          load_species, lookup_dipole, parse_level, rf_rabi_from_field,
                          rydberg_energy, rydberg_level, transition_angular_frequency)
from rydrx.constants import E_A0, HBAR, PLANCK, SPEED_OF_LIGHT
from rydrx.errors import ConfigurationError, DomainError
from rydrx.estimation import field_from_splitting

TP = 2 * math.pi


def test_bundled_species_valid():
    for name in ("Rb87", "Cs133"):
        s = load_species(name)
        assert s.mass > 0 and s.probe_wavelength > 0 and s.intermediate_decay_rate > 0
        for qd in s.quantum_defects.values():
            assert 0 <= qd.delta0 < 5


def test_unknown_species():
    with pytest.raises(ConfigurationError):
        load_species("Xx")


def test_zero_defect_is_hydrogenic():
    rb = load_species("Rb87")
    h = Species("H", rb.mass, "1S", "2P", 1e-7, 1e-7, 1.0, rb.rydberg_constant,
                {"S1/2": QuantumDefect(0.0, 0.0)})
    expected = -PLANCK * SPEED_OF_LIGHT * rb.rydberg_constant / 100
    assert rydberg_energy(h, 10, "S1/2") == pytest.approx(expected, rel=1e-15)


def test_energy_monotonic_in_n():
    rb = load_species("Rb87")
    assert rydberg_energy(rb, 50, "S1/2") > rydberg_energy(rb, 49, "S1/2")
    for series in ("S1/2", "P1/2", "D5/2"):
        e = [rydberg_energy(rb, n, series) for n in range(10, 90)]
        assert all(x < 0 for x in e)
        assert all(b > a for a, b in zip(e, e[1:]))


def test_np_level_near_midpoint_of_s_levels():
    rb = load_species("Rb87")
    n = 47
    s0 = rydberg_energy(rb, n, "S1/2")
    s1 = rydberg_energy(rb, n + 1, "S1/2")
    p = rydberg_energy(rb, n, "P3/2")
    assert abs(p - 0.5 * (s0 + s1)) / abs(s1 - s0) < 0.1


def test_47s_47p_transition_band():
    rb = load_species("Rb87")
    w = transition_angular_frequency(rydberg_level(rb, "47S1/2"), rydberg_level(rb, "47P1/2"))
    assert TP * 20e9 < w < TP * 60e9


def test_transition_degenerate_and_linear():
    a = RydbergLevel("Rb87", 40, "S1/2", -1e-21)
    with pytest.warns(DegenerateTransitionWarning):
        assert transition_angular_frequency(a, a) == 0.0
    b = RydbergLevel("Rb87", 41, "S1/2", -0.9e-21)
    a2 = RydbergLevel("Rb87", 40, "S1/2", -2e-21)
    b2 = RydbergLevel("Rb87", 41, "S1/2", -1.8e-21)
    assert transition_angular_frequency(a2, b2) == pytest.approx(
        2 * transition_angular_frequency(a, b), rel=1e-14)


def test_level_parsing():
    assert parse_level("47S1/2") == (47, "S1/2")
    with pytest.raises(ConfigurationError):
        parse_level("S47")


def test_rabi_from_field_reference_value():
    d = lookup_dipole("Rb87", "47S1/2", "47P1/2")
    assert d.d_ea0 == 745.0 and d.d == 745.0 * E_A0
    omega = rf_rabi_from_field(5.0, d.d)
    assert omega / TP == pytest.approx(47.66e6, rel=1e-3)
    assert rf_rabi_from_field(0.0, d.d) == 0.0
    assert rf_rabi_from_field(10.0, d.d) == pytest.approx(2 * omega, rel=1e-15)


def test_rabi_domain_errors():
    with pytest.raises(DomainError):
        rf_rabi_from_field(1.0, 0.0)
    with pytest.raises(DomainError):
        rf_rabi_from_field(-1.0, 1e-27)


@given(st.floats(1e-3, 1e3), st.floats(1.0, 5000.0))
def test_field_rabi_inverse_pair(field, d_ea0):
    d = d_ea0 * E_A0
    back = field_from_splitting(rf_rabi_from_field(field, d), d).field
    assert abs(back - field) / field < 1e-12
    assert rf_rabi_from_field(field, d) == pytest.approx(field * d / HBAR, rel=1e-15)


@given(st.integers(10, 150))
def test_energy_monotonic_property(n):
    rb = load_species("Rb87")
    assert rydberg_energy(rb, n + 1, "P3/2") > rydberg_energy(rb, n, "P3/2")


@given(st.floats(0.0, 1e-3))
def test_quantum_defect_vanishes_smoothly(delta):
    rb = load_species("Rb87")
    h0 = Species("H", rb.mass, "1S", "2P", 1e-7, 1e-7, 1.0, rb.rydberg_constant,
                 {"S1/2": QuantumDefect(0.0, 0.0)})
    hd = Species("H", rb.mass, "1S", "2P", 1e-7, 1e-7, 1.0, rb.rydberg_constant,
                 {"S1/2": QuantumDefect(delta, 0.0)})
    e0, ed = rydberg_energy(h0, 30, "S1/2"), rydberg_energy(hd, 30, "S1/2")
    # first-order shift 2 delta / n relative
    assert abs(ed / e0 - 1) <= 2 * delta / 30 * 1.01 + 1e-15


def test_warnings_clean_for_normal_transition():
    rb = load_species("Rb87")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        transition_angular_frequency(rydberg_level(rb, "47S1/2"), rydberg_level(rb, "48S1/2"))
