"""Acceptance criteria. Each test records one PASS/FAIL line for the summary."""
import json
import math
import time
import warnings

import numpy as np

from conftest import TP, coupler_grid, ladder_drives, record_acceptance
from oracles import weak_probe_coherence
from rydrx.atomic import rf_rabi_from_field
from rydrx.constants import E_A0
from rydrx.demod import ModulatedCarrier, demodulate, operating_point
from rydrx.estimation import eit_linewidth, field_from_splitting
from rydrx.lindblad import DriveField, evolve, ground_state, steady_state, three_level
from rydrx.phase import (PhaseScheme, delay_to_phase, fit_phase_and_amplitude,
                         simulate_phase_scan)
from rydrx.spectroscopy import extract_features, scan_spectrum

D745 = 745.0 * E_A0
GAMMA = TP * 6.0666e6


def check(label, ok, detail):
    record_acceptance(label, ok, detail)
    assert ok, detail


def test_ac1_field_arithmetic():
    t0 = time.perf_counter()
    rabi = rf_rabi_from_field(5.0, D745)
    errs = [abs(field_from_splitting(rf_rabi_from_field(E, D745), D745).field / E - 1)
            for E in (5.0, 1e-3, 0.5, 50.0)]
    dt = time.perf_counter() - t0
    mhz = rabi / TP / 1e6
    ok = round(mhz, 1) == 47.7 and max(errs) < 1e-12 and dt < 1.0
    check("AC1: field <-> Rabi arithmetic", ok,
          f"5 V/m -> {mhz:.4f} MHz, round trip {max(errs):.1e}, {dt:.3f} s")


def test_ac2_at_linearity(sys4, vapor):
    t0 = time.perf_counter()
    drives0 = ladder_drives(5e6, 2.5e6, 0.0)
    lw = eit_linewidth(sys4, drives0, vapor, detunings=coupler_grid())
    ks = np.arange(1.0, 10.01, 0.5)
    applied, measured, unresolved = [], [], []
    for k in ks:
        rabi = k * lw
        grid = coupler_grid(1601, half_hz=max(60e6, 0.9 * rabi / TP))
        f = extract_features(scan_spectrum(sys4, ladder_drives(5e6, 2.5e6, rabi / TP), vapor,
                                           detunings=grid))
        if f.splitting is None:
            unresolved.append(float(k))
            continue
        applied.append(rabi)
        measured.append(f.splitting)
    applied, measured = np.array(applied), np.array(measured)
    slope = float(np.dot(measured, applied) / np.dot(applied, applied))
    dt = time.perf_counter() - t0
    ok = abs(slope - 1) <= 0.05 and len(applied) >= 0.9 * len(ks) and dt < 120
    check("AC2: AT splitting linear in RF Rabi", ok,
          f"slope {slope:.4f} over {len(applied)}/{len(ks)} points (linewidth "
          f"{lw / TP / 1e6:.2f} MHz, unresolved at k={unresolved}), {dt:.1f} s")


def test_ac3_linewidth_regime(sys3, vapor):
    t0 = time.perf_counter()
    grid = coupler_grid(1601, half_hz=120e6)
    big = eit_linewidth(sys3, ladder_drives(44e6, 10e6), vapor, detunings=grid) / TP / 1e6
    small = eit_linewidth(sys3, ladder_drives(18e6, 2.5e6), vapor, detunings=grid) / TP / 1e6
    dt = time.perf_counter() - t0
    within2 = 10.0 <= big <= 40.0
    narrow = small < 10.0
    order = big > small
    check("AC3: EIT linewidth regime", within2 and narrow and order and dt < 300,
          f"FWHM(44,10)={big:.2f} MHz (want 20 within x2: {within2}), FWHM(18,2.5)={small:.2f} "
          f"MHz (want <10: {narrow}), ordering {order}, {dt:.1f} s")


def test_ac4_coupler_transients(bundled_runs):
    out, _, secs = bundled_runs[("coupler-pulse", "pulse")]
    tr = json.loads((out / "coupler-pulse.pulse.json").read_text())["transient"]
    dip = tr["dip_time"] < 100e-9 and tr["dip_value"] < tr["background"]
    settle = tr["settle_deviation"] < 0.02
    gain = tr["gain_peak"] > tr["steady"]
    plateau = tr["plateau_deviation"] < 1e-4
    check("AC4: coupler-pulse transients", dip and settle and gain and plateau and secs < 600,
          f"dip {tr['dip_time'] * 1e9:.1f} ns, settle dev {tr['settle_deviation']:.2e}, gain "
          f"{tr['gain_peak']:.5f} > steady {tr['steady']:.5f}, plateau dev "
          f"{tr['plateau_deviation']:.1e}, {secs:.0f} s")


def test_ac5_rf_pulse_map(bundled_runs):
    from rydrx.scenario import bundled_scenarios, load_scenario
    sc = load_scenario(bundled_scenarios()["rf-pulse"])
    rf = next(d for d in sc.drive_fields if d.role == "rf")
    on, off = rf.envelope.on, rf.envelope.off
    rise = 0.35 / sc.pulse.detector_bandwidth_hz
    out, _, secs = bundled_runs[("rf-pulse", "pulse")]
    doc = json.loads((out / "rf-pulse.pulse.json").read_text())
    t = np.array(doc["splitting"]["t_s"])
    s = np.array(doc["splitting"]["splitting_Hz"])
    inside = (t >= on + rise) & (t <= off)
    outside = (t < on - rise) | (t > off + rise)
    median = float(np.median(s[inside])) if inside.any() else math.nan
    target = rf_rabi_from_field(5.0, D745) / TP
    in_ok = abs(median / target - 1) <= 0.10
    stray = t[outside]
    detail = (f"in-window median {median / 1e6:.2f} MHz vs {target / 1e6:.2f} MHz ({in_ok}); "
              f"{stray.size} split rows outside window+{rise * 1e9:.0f} ns")
    if stray.size:
        detail += f" spanning {stray.min() * 1e6:.3f}-{stray.max() * 1e6:.3f} us"
    check("AC5: RF-pulse time-domain map", in_ok and stray.size == 0 and secs < 900,
          detail + f", {secs:.0f} s")


def test_ac6_oracles():
    t0 = time.perf_counter()
    s = three_level(GAMMA, TP * 0.3e6, TP * 0.5e6)
    wp, wc = GAMMA / 1000, TP * 5e6
    dc = TP * np.linspace(-20e6, 20e6, 401)
    drives = [DriveField("g", "e", wp, role="probe"), DriveField("e", "r", wc, role="coupler")]
    off = np.zeros((len(dc), 2))
    off[:, 1] = dc
    rho = steady_state(s, drives, off)
    ref = weak_probe_coherence(wp, wc, 0.0, dc, GAMMA, TP * 0.3e6, TP * 0.5e6)
    rel = float(np.max(np.abs(rho[:, 0, 1] - ref) / np.abs(ref)))
    strong = [DriveField("g", "e", TP * 5e6, role="probe"),
              DriveField("e", "r", TP * 3e6, TP * 1e6, role="coupler")]
    tr = evolve(s, strong, ground_state(3), np.array([0, 30e-6]), rtol=1e-10, atol=1e-13)
    dev = float(np.max(np.abs(tr.states[-1] - steady_state(s, strong))))
    dt = time.perf_counter() - t0
    check("AC6: oracle equivalence", rel < 1e-4 and dev < 1e-8 and dt < 60,
          f"weak-probe max rel err {rel:.1e} over 401 points, evolve vs steady {dev:.1e}, "
          f"{dt:.1f} s")


def phase_scheme(field=1.0, phi_rf=0.0, delta=TP * 600e6):
    return PhaseScheme.from_field(field, D745, D745, TP * 25e6, TP * 25e6, delta, -delta,
                                  phi_rf=phi_rf)


def wrap(x):
    return (x + math.pi / 2) % math.pi - math.pi / 2


def test_ac7_phase_retrieval():
    t0 = time.perf_counter()
    phi = np.linspace(0, TP, 64, endpoint=False)
    truths = np.linspace(0.05, 3.0, 12)
    noiseless = max(abs(wrap(fit_phase_and_amplitude(simulate_phase_scan(phase_scheme(1.0, p), phi))
                             .phi_rf - p)) for p in truths)

    rng = np.random.default_rng(2024)
    hits = 0
    for trial in range(1000):
        p = rng.uniform(0, math.pi)
        s = phase_scheme(1.0, p)
        scan = simulate_phase_scan(s, phi, noise=0.05, seed=trial)
        hits += abs(math.degrees(wrap(fit_phase_and_amplitude(scan, s).phi_rf - p))) < 5.0
    frac = hits / 1000

    fits = [fit_phase_and_amplitude(simulate_phase_scan(phase_scheme(E, 1.0, TP * 2e9), phi)).phi_rf
            for E in (0.1, 10.0)]
    spread = abs(fits[1] - fits[0])

    devs = []
    coarse = np.linspace(0, TP, 32, endpoint=False)
    for delta in (TP * 600e6, TP * 1.2e9):
        s = phase_scheme(1.0, 0.4, delta)
        assert s.adiabatic_ratio >= 20
        a = simulate_phase_scan(s, coarse).strength
        f = simulate_phase_scan(s, coarse, mode="full").strength
        k = np.dot(f, a) / np.dot(a, a)
        devs.append(float(np.max(np.abs(f - k * a)) / np.max(np.abs(f))))
    dt = time.perf_counter() - t0
    ok = noiseless < 1e-6 and frac >= 0.95 and spread < 1e-9 and max(devs) < 0.02 and dt < 300
    check("AC7: phase retrieval", ok,
          f"noiseless err {noiseless:.1e} rad, {frac:.1%} of 1000 noisy trials < 5 deg, "
          f"E x100 shift {spread:.1e} rad, full vs algebraic {max(devs):.2%}, {dt:.1f} s")


def test_ac8_delay_line():
    t0 = time.perf_counter()
    phi = delay_to_phase(0.01, TP * 10e9)
    dt = time.perf_counter() - t0
    check("AC8: delay-line phase range", abs(phi - 8.38) < 0.005 and phi >= TP and dt < 1,
          f"1 cm at 10 GHz -> {phi:.4f} rad (2 pi = {TP:.4f}), {dt * 1e3:.2f} ms")


def test_ac9_demodulation(sys4, vapor):
    t0 = time.perf_counter()
    drives = ladder_drives(5e6, 5e6, 10e6)
    grid = coupler_grid()
    op = operating_point(scan_spectrum(sys4, drives, vapor, detunings=grid))
    lw = eit_linewidth(sys4, drives, vapor, detunings=grid)
    res = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for m in (0.05, 0.25, 0.45):
            carrier = ModulatedCarrier.sine(TP * 10e6, m, 1e3, 100e3, 5)
            res.append(demodulate(sys4, drives, vapor, carrier, op, linewidth=lw))
    amps = [r.amplitude for r in res]
    dt = time.perf_counter() - t0
    ok = (amps[0] < amps[1] < amps[2] and res[0].correlation > 0.99
          and res[2].distortion > res[0].distortion and dt < 120)
    check("AC9: AM demodulation", ok,
          f"amplitudes {', '.join(f'{a:.3e}' for a in amps)}, corr(5%) {res[0].correlation:.5f}, "
          f"distortion 5% {res[0].distortion:.2e} / 45% {res[2].distortion:.2e}, {dt:.1f} s")


def test_ac10_determinism(bundled_runs):
    mismatched, compared = [], 0
    for (name, cmd), (a, b, _) in sorted(bundled_runs.items()):
        for fa in sorted(a.glob(f"{name}.{cmd}.*")):
            compared += 1
            if fa.read_bytes() != (b / fa.name).read_bytes():
                mismatched.append(fa.name)
    scenarios = sorted({n for n, _ in bundled_runs})
    check("AC10: determinism", compared > 0 and not mismatched,
          f"{compared} files from {len(bundled_runs)} runs over {len(scenarios)} scenarios, "
          f"mismatched: {mismatched or 'none'}")
