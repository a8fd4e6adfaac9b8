"""Baseband AM reception at an EIT operating point."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .constants import PLANCK
from .doppler import VaporConfig, averaged_steady_state, velocity_grid, doppler_offsets
from .errors import ConfigurationError, DomainError, NoOperatingPointError
from .lindblad import Constant, HoldEnvelope, propagate, steady_state
from .spectroscopy import (DEFAULT_OD, SpectrumScan, probe_index, probe_transmission,
                           reference_absorption)

TABLE_NODES = 129
HARMONICS = 5


class ClippingWarning(UserWarning):
    """Modulation drives the operating point off its monotonic flank."""


@dataclass
class ModulatedCarrier:
    """AM carrier: the RF Rabi frequency is ``carrier_rabi * (1 + depth * m(t))``."""
    carrier_rabi: float
    baseband: np.ndarray
    depth: float
    sample_rate: float
    modulation: str = "AM"
    tone: float | None = None  # Hz, set when the baseband is a single sine

    def __post_init__(self):
        self.baseband = np.asarray(self.baseband, dtype=float)
        if self.modulation != "AM":
            raise ConfigurationError("only AM carriers are supported")
        if not 0 <= self.depth < 1:
            raise DomainError(f"modulation depth must be in [0, 1), got {self.depth}")
        if self.baseband.ndim != 1 or len(self.baseband) < 2:
            raise DomainError("baseband needs at least two samples")
        if np.max(np.abs(self.baseband)) > 1 + 1e-12:
            raise DomainError("baseband samples must lie in [-1, 1]")
        if self.sample_rate <= 0 or self.carrier_rabi <= 0:
            raise DomainError("sample rate and carrier Rabi frequency must be positive")

    @classmethod
    def sine(cls, carrier_rabi, depth, frequency=1e3, sample_rate=100e3, periods=5):
        n = int(round(periods * sample_rate / frequency))
        t = np.arange(n) / sample_rate
        return cls(carrier_rabi, np.sin(2 * math.pi * frequency * t), depth, sample_rate,
                   tone=frequency)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.baseband)) / self.sample_rate

    @property
    def rabi(self) -> np.ndarray:
        return self.carrier_rabi * (1.0 + self.depth * self.baseband)

    @property
    def bandwidth(self) -> float:
        """Frequency (Hz) below which 99.9 % of the Hann-windowed baseband power lies."""
        if self.tone is not None:
            return self.tone
        x = self.baseband - self.baseband.mean()
        power = np.abs(np.fft.rfft(x * np.hanning(len(x)))) ** 2
        if power.sum() == 0:
            return 0.0
        f = np.fft.rfftfreq(len(x), 1 / self.sample_rate)
        k = int(np.searchsorted(np.cumsum(power) / power.sum(), 0.999))
        return float(f[min(k, len(f) - 1)])


@dataclass
class DemodResult:
    times: np.ndarray
    recovered: np.ndarray      # mean-removed, unit-RMS, polarity-corrected
    transmission: np.ndarray   # raw probe transmission
    amplitude: float           # fundamental amplitude in transmission units
    gain: float                # transmission change per unit depth (signed)
    distortion: float
    correlation: float
    clipped_fraction: float
    operating_point: float     # rad/s
    mode: str
    degenerate: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.degenerate and not -1 - 1e-12 <= self.correlation <= 1 + 1e-12:
            raise DomainError("correlation outside [-1, 1]")

    def metrics(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "gain": self.gain,
            "distortion": self.distortion,
            "correlation": None if self.degenerate else self.correlation,
            "clipped_fraction": self.clipped_fraction,
            "operating_point_hz": self.operating_point / (2 * math.pi),
            "mode": self.mode,
            "degenerate": self.degenerate,
        }


def _refined_extremum(x, y, k):
    if 0 < k < len(y) - 1:
        xs, ys = x[k - 1:k + 2], y[k - 1:k + 2]
        a, b, _ = np.polyfit(xs - xs[1], ys, 2)
        if a < 0:
            return float(xs[1] + np.clip(-b / (2 * a), xs[0] - xs[1], xs[2] - xs[1]))
    return float(x[k])


def operating_point(scan: SpectrumScan, rtol=1e-9) -> float:
    """Coupler detuning of steepest transmission slope (ties go to lower detuning)."""
    x, y = scan.detuning, scan.transmission
    slope = np.abs(np.gradient(y, x))
    top = slope.max()
    if not np.isfinite(top) or top * (x[-1] - x[0]) <= 1e-9:
        raise NoOperatingPointError("spectrum is flat; no operating point")
    k = int(np.flatnonzero(slope >= top * (1 - rtol))[0])
    return _refined_extremum(x, slope, k)


def min_detectable_depth(field_v_per_m: float, dipole: float, linewidth_hz: float) -> float:
    """Typical smallest AM depth h * dGamma / (E d), with dGamma in Hz."""
    if field_v_per_m <= 0:
        raise DomainError("field must be positive")
    if dipole <= 0 or linewidth_hz <= 0:
        raise DomainError("dipole and linewidth must be positive")
    return PLANCK * linewidth_hz / (field_v_per_m * dipole)


def _with_rf(drives, rabi=None, envelope=None):
    out = []
    for d in drives:
        if d.role == "rf":
            d = d.with_(rabi=d.rabi if rabi is None else rabi,
                        envelope=d.envelope if envelope is None else envelope)
        out.append(d)
    return out


def _at_detuning(drives, detuning):
    return [d.with_(detuning=d.detuning + detuning) if d.role == "coupler" else d for d in drives]


def transfer_curve(system, drives, vapor, od, detuning, rabi_values, exact=True):
    """Steady-state transmission at fixed coupler detuning versus RF Rabi frequency."""
    i, j = probe_index(system, drives)
    base = _at_detuning(drives, detuning)
    ref = reference_absorption(system, drives, vapor, exact)
    n_opt = sum(d.optical for d in drives)
    im = np.array([averaged_steady_state(system, _with_rf(base, r), vapor,
                                         np.zeros((1, n_opt)), exact=exact)[0, i, j].imag
                   for r in rabi_values])
    return probe_transmission(im, od, ref)


def _distortion(x, carrier: ModulatedCarrier):
    x = x - x.mean()
    if carrier.tone is not None:
        n = len(x)
        t = carrier.times
        amps = []
        for h in range(1, HARMONICS + 1):
            z = np.exp(-2j * math.pi * h * carrier.tone * t)
            amps.append(abs(2 * np.dot(x, z) / n))
        return float(math.sqrt(sum(a * a for a in amps[1:])) / amps[0]) if amps[0] else math.inf
    m = carrier.baseband - carrier.baseband.mean()
    g = np.dot(x, m) / np.dot(m, m)
    resid = x - g * m
    return float(np.linalg.norm(resid) / np.linalg.norm(g * m)) if g else math.inf


def demodulate(system, drives, vapor: VaporConfig | None, carrier: ModulatedCarrier,
               detuning: float, od=DEFAULT_OD, mode="quasi-static", linewidth=None,
               quasi_static_limit=0.1, exact=True) -> DemodResult:
    """Recover the baseband from probe transmission at coupler detuning ``detuning``.

    ``quasi-static`` maps every sample through the steady-state transfer
    curve T(Omega_RF); ``full`` integrates the master equation with the RF
    envelope held constant between samples. Quasi-static mode requires the
    baseband bandwidth to stay below ``quasi_static_limit`` times the EIT
    ``linewidth`` (rad/s) when a linewidth is given.
    """
    if mode not in ("quasi-static", "full"):
        raise ConfigurationError(f"unknown demodulation mode {mode!r}")
    if not any(d.role == "rf" for d in drives):
        raise ConfigurationError("demodulation needs an RF drive")
    if mode == "quasi-static" and linewidth is not None:
        limit = quasi_static_limit * linewidth / (2 * math.pi)
        if carrier.bandwidth > limit:
            raise ConfigurationError(
                f"baseband {carrier.bandwidth:.4g} Hz exceeds the quasi-static limit "
                f"{limit:.4g} Hz; use mode='full'")
    lo = carrier.carrier_rabi * (1 - carrier.depth)
    hi = carrier.carrier_rabi * (1 + carrier.depth)
    # transfer curve on Chebyshev-Lobatto nodes around the carrier for slope and clipping
    span_lo, span_hi = (lo, hi) if carrier.depth > 0 else (0.99 * lo, 1.01 * hi)
    nodes = 0.5 * (span_lo + span_hi) - 0.5 * (span_hi - span_lo) * np.cos(
        np.linspace(0, math.pi, TABLE_NODES))
    curve = CubicSpline(nodes, transfer_curve(system, drives, vapor, od, detuning, nodes, exact))
    dcurve = curve.derivative()
    s0 = float(dcurve(carrier.carrier_rabi))
    polarity = 1.0 if s0 >= 0 else -1.0
    rabi = carrier.rabi
    clipped = float(np.mean(np.sign(dcurve(rabi)) != polarity)) if carrier.depth else 0.0
    if clipped > 0:
        warnings.warn(f"modulation leaves the monotonic flank for {clipped:.1%} of samples",
                      ClippingWarning, stacklevel=2)
    if mode == "quasi-static":
        T = curve(rabi)
    else:
        T = _full_transmission(system, drives, vapor, od, carrier, detuning)
    x = T - T.mean()
    rms = float(np.sqrt(np.mean(x * x)))
    degenerate = carrier.depth == 0 or rms <= 1e-15
    m = carrier.baseband - carrier.baseband.mean()
    if degenerate:
        rec = np.zeros_like(T)
        corr, amp, gain, dist = math.nan, 0.0, 0.0, 0.0
    else:
        rec = polarity * x / rms
        corr = float(np.clip(np.corrcoef(rec, m)[0, 1], -1.0, 1.0))
        slope = float(np.dot(x, m) / np.dot(m, m))
        amp = abs(slope) * float(np.max(np.abs(m)))
        gain = slope / carrier.depth
        dist = _distortion(T, carrier)
    return DemodResult(carrier.times, rec, T, amp, gain, dist, corr, clipped,
                       float(detuning), mode, degenerate,
                       {"depth": carrier.depth, "carrier_rabi_hz": carrier.carrier_rabi / (2 * math.pi)})


def _full_transmission(system, drives, vapor, od, carrier: ModulatedCarrier, detuning,
                       substeps=8):
    # the envelope is held at segment midpoints on a grid ``substeps`` times finer
    # than the sampling, so the readout lags the baseband by only dt / (2 substeps)
    t = carrier.times
    tf = t[0] + np.arange((len(t) - 1) * substeps + 1) * (t[1] - t[0]) / substeps
    mid = 0.5 * (tf[:-1] + tf[1:])
    rabi = carrier.carrier_rabi * (1 + carrier.depth * np.interp(mid, t, carrier.baseband))
    peak = carrier.carrier_rabi * (1 + carrier.depth)
    env = HoldEnvelope(tuple(tf[:-1]), tuple(rabi / peak))
    base = _with_rf(_at_detuning(drives, detuning), peak, env)
    i, j = probe_index(system, drives)
    n = system.n
    if vapor is None:
        w = np.ones(1)
        off = np.zeros((1, sum(d.optical for d in drives)))
    else:
        v, w = velocity_grid(vapor)
        off = doppler_offsets(v, vapor, drives)
    start = [d.with_(envelope=Constant(float(d.envelope(t[0])))) for d in base]
    rho0 = steady_state(system, start, off, check=False)
    im = propagate(system, base, rho0, tf, off, rows=[i * n + j],
                   observe=lambda Y: Y[:, 0] @ w).imag[::substeps]
    ref = reference_absorption(system, drives, vapor, exact=False)
    return probe_transmission(im, od, ref)
