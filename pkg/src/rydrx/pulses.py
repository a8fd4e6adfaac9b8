"""Time-domain simulation of pulsed coupler and pulsed RF detection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .doppler import VaporConfig, doppler_offsets, parallel_map, velocity_grid
from .errors import (ConfigurationError, DimensionError, DomainError, FeatureAmbiguityError,
                     IntegrationError)
from .lindblad import Constant, DriveField, LadderSystem, SquarePulse, propagate, steady_state
from .spectroscopy import (DEFAULT_OD, SpectrumScan, extract_features, probe_index,
                           probe_transmission, reference_absorption)

COUPLER_ON = 11.7e-6
COUPLER_OFF = 16.7e-6
RF_ON = 21.7e-6
RF_DURATION = 1e-6
DEFAULT_RISE = 10e-9
TRACE_CEILING = 1.5
MAX_BATCH = 20_000


@dataclass
class PulseScenario:
    """A ladder model with time-dependent drive envelopes and a sampling plan.

    ``detunings`` are coupler detunings (rad/s) added to the nominal coupler
    detuning; one value gives a single trace, several give a 2-D map.
    ``detector_bandwidth`` (Hz) applies a single-pole photodetector; ``None``
    leaves the atomic response unfiltered.
    """
    system: LadderSystem
    drives: Sequence[DriveField]
    vapor: VaporConfig | None
    od: float = DEFAULT_OD
    span: float = 25e-6
    dt: float = 5e-9
    t_start: float = 0.0
    detunings: Sequence[float] = (0.0,)
    detector_bandwidth: float | None = None
    mode: str = "absolute"
    scan_role: str = "coupler"

    def __post_init__(self):
        self.drives = list(self.drives)
        self.detunings = np.atleast_1d(np.asarray(self.detunings, dtype=float))
        if self.span <= 0 or self.dt <= 0:
            raise ConfigurationError("span and dt must be positive")
        if self.dt > self.span:
            raise ConfigurationError("dt exceeds span")
        if self.od < 0:
            raise ConfigurationError("optical depth must be non-negative")
        if self.mode not in ("absolute", "relative"):
            raise ConfigurationError(f"unknown transmission mode {self.mode!r}")
        if self.detector_bandwidth is not None and self.detector_bandwidth <= 0:
            raise ConfigurationError("detector bandwidth must be positive")
        if len(self.detunings) > 1 and np.any(np.diff(self.detunings) <= 0):
            raise ConfigurationError("detuning grid must be strictly increasing")
        end = self.t_start + self.span
        for d in self.drives:
            for b in d.envelope.breakpoints:
                if not self.t_start <= b <= end:
                    raise ConfigurationError(
                        f"breakpoint {b:.3e} s of drive {d.label!r} outside the span "
                        f"[{self.t_start:.3e}, {end:.3e}] s")

    @property
    def times(self) -> np.ndarray:
        n = int(round(self.span / self.dt))
        return self.t_start + np.arange(n + 1) * self.dt


@dataclass
class PulseTrace:
    """Probe transmission versus time, optionally versus coupler detuning too.

    ``values`` has shape ``(len(times),)`` or ``(len(times), len(detunings))``.
    """
    times: np.ndarray
    values: np.ndarray
    detunings: np.ndarray | None = None
    mode: str = "absolute"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise DimensionError("time grid must be strictly increasing")
        if self.values.shape[0] != len(self.times):
            raise DimensionError("values must have one row per time sample")
        if self.detunings is not None:
            self.detunings = np.asarray(self.detunings, dtype=float)
            if self.values.ndim != 2 or self.values.shape[1] != len(self.detunings):
                raise DimensionError("2-D trace needs one column per detuning")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("trace contains non-finite values")
        if self.values.min() < -1e-9 or self.values.max() > TRACE_CEILING:
            raise DomainError(
                f"trace values outside [0, {TRACE_CEILING}]: "
                f"[{self.values.min():.4g}, {self.values.max():.4g}]")

    def column(self, detuning=0.0) -> np.ndarray:
        if self.values.ndim == 1:
            return self.values
        return self.values[:, int(np.argmin(np.abs(self.detunings - detuning)))]

    def row(self, t) -> np.ndarray:
        return self.values[int(np.argmin(np.abs(self.times - t)))]


def photodetector_filter(trace: PulseTrace, bandwidth: float) -> PulseTrace:
    """Causal single-pole low-pass with corner ``bandwidth`` (Hz) along time.

    The filter starts in equilibrium with the first sample, so a constant
    input passes unchanged. The 10-90 % step response time is ln(9)/(2 pi BW).
    """
    if not bandwidth > 0:
        raise DomainError(f"bandwidth must be positive, got {bandwidth}")
    x = trace.values
    if math.isinf(bandwidth):
        y = x.copy()
    else:
        tau = 1.0 / (2 * math.pi * bandwidth)
        dt = np.diff(trace.times)
        if np.allclose(dt, dt[0], rtol=1e-9, atol=0):
            a = math.exp(-dt[0] / tau)
            zi = a * x[:1]
            y, _ = lfilter([1 - a], [1, -a], x, axis=0, zi=zi)
        else:
            y = np.empty_like(x)
            y[0] = x[0]
            for k, step in enumerate(dt, start=1):
                a = math.exp(-step / tau)
                y[k] = a * y[k - 1] + (1 - a) * x[k]
    meta = dict(trace.metadata, detector_bandwidth_hz=bandwidth)
    return PulseTrace(trace.times, y, trace.detunings, trace.mode, meta)


def _frozen(drives, t):
    return [d.with_(envelope=Constant(float(d.envelope(t)))) for d in drives]


def time_domain_absorption(system, drives, vapor, times, detunings, scan_role="coupler",
                           threads=1, max_batch=MAX_BATCH) -> np.ndarray:
    """Doppler-averaged Im(rho_ge)(t) for every coupler detuning, shape (T, D).

    Each (detuning, velocity) member starts in the steady state of the
    envelopes at ``times[0]``. The state is stationary until the first
    envelope breakpoint, so integration starts there.
    """
    drives = list(drives)
    times = np.asarray(times, dtype=float)
    detunings = np.asarray(detunings, dtype=float)
    n = system.n
    i, j = probe_index(system, drives)
    row = i * n + j
    if vapor is None:
        v, w = np.zeros(1), np.ones(1)
        dop = np.zeros((1, sum(d.optical for d in drives)))
    else:
        v, w = velocity_grid(vapor)
        dop = doppler_offsets(v, vapor, drives)
    opt = [d for d in drives if d.optical]
    cols = [k for k, d in enumerate(opt) if d.role == scan_role]
    if not cols:
        raise ConfigurationError(f"no {scan_role} drive to scan")
    bps = [b for d in drives for b in d.envelope.breakpoints if b > times[0]]
    first = min(bps) if bps else times[-1]
    k0 = max(0, int(np.searchsorted(times, first, side="right")) - 1)
    t_sim = times[k0:]
    N = len(v)
    per = max(1, max_batch // N)
    initial = _frozen(drives, times[0])

    def run(idx):
        det = detunings[idx]
        off = np.repeat(dop[None], len(idx), axis=0)
        off[..., cols] += det[:, None, None]
        rho0 = steady_state(system, initial, off, check=False)
        try:
            rec = propagate(system, drives, rho0, t_sim, off, rows=[row],
                            observe=lambda Y: Y[:, 0].reshape(len(idx), N) @ w)
        except IntegrationError as exc:
            err = IntegrationError(f"{exc} (coupler detuning {det[0]:.6e} rad/s)", exc.time)
            err.detuning = float(det[0])
            raise err from exc
        return rec.imag

    blocks = [np.arange(s, min(s + per, len(detunings))) for s in range(0, len(detunings), per)]
    im = np.concatenate(parallel_map(run, blocks, threads), axis=1)
    if k0:
        im = np.concatenate([np.repeat(im[:1], k0, axis=0), im], axis=0)
    return im


def simulate_pulse(scenario: PulseScenario, threads=1) -> PulseTrace:
    """Transmission trace (or map) for an arbitrary envelope schedule."""
    sc = scenario
    times = sc.times
    im = time_domain_absorption(sc.system, sc.drives, sc.vapor, times, sc.detunings,
                                sc.scan_role, threads)
    ref = reference_absorption(sc.system, sc.drives, sc.vapor, exact=False)
    T = probe_transmission(im, sc.od, ref)
    if sc.mode == "relative":
        T = T / math.exp(-sc.od)
    single = len(sc.detunings) == 1
    meta = {"reference_absorption": ref, "optical_depth": sc.od,
            "velocity_classes": 1 if sc.vapor is None else sc.vapor.n_classes}
    trace = PulseTrace(times, T[:, 0] if single else T, None if single else sc.detunings,
                       sc.mode, meta)
    if sc.detector_bandwidth is not None:
        trace = photodetector_filter(trace, sc.detector_bandwidth)
    return trace


def _drive(drives, role):
    found = [d for d in drives if d.role == role]
    if len(found) != 1:
        raise ConfigurationError(f"expected exactly one {role} drive, found {len(found)}")
    return found[0]


def simulate_rf_pulse(scenario: PulseScenario, threads=1) -> PulseTrace:
    """Time x coupler-detuning map for a pulsed RF drive (coupler CW or pulsed)."""
    rf = _drive(scenario.drives, "rf")
    if not rf.envelope.breakpoints:
        raise ConfigurationError("RF drive needs a pulsed envelope")
    if len(scenario.detunings) < 16:
        raise ConfigurationError("an RF-pulse map needs at least 16 coupler detunings")
    return simulate_pulse(scenario, threads)


def simulate_coupler_pulse(scenario: PulseScenario, threads=1) -> PulseTrace:
    """Probe transmission for a square coupler pulse with a CW probe."""
    c = _drive(scenario.drives, "coupler")
    if not isinstance(c.envelope, SquarePulse):
        raise ConfigurationError("coupler drive needs a SquarePulse envelope")
    return simulate_pulse(scenario, threads)


# --------------------------------------------------------------------------
# feature analysis

def splitting_series(trace: PulseTrace, **kw) -> np.ndarray:
    """AT splitting (rad/s) of every time row of a 2-D map; NaN where none is resolved."""
    if trace.detunings is None:
        raise DimensionError("splitting analysis needs a 2-D trace")
    out = np.full(len(trace.times), np.nan)
    for k, row in enumerate(trace.values):
        try:
            f = extract_features(SpectrumScan(trace.detunings, np.clip(row, 0, 1), 0.0), **kw)
        except FeatureAmbiguityError:
            continue
        if f.splitting is not None:
            out[k] = f.splitting
    return out


@dataclass
class TransientFeatures:
    background: float
    steady: float
    dip_time: float          # s after turn-on
    dip_value: float
    settle_deviation: float  # max |T - steady| / contrast from on + settle to off
    plateau_deviation: float
    gain_peak: float         # max T within ``window`` after turn-off
    gain_time: float         # s after turn-off
    excess_area: float       # integral of (T - background) after turn-off, s

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def coupler_transient_features(trace: PulseTrace, on: float, off: float, steady: float,
                               settle=2e-6, window=100e-9, plateau=(14e-6, None),
                               detuning=0.0) -> TransientFeatures:
    """Turn-on dip, settling, plateau and turn-off gain of a coupler-pulse trace."""
    t = trace.times
    y = trace.column(detuning)
    bg = float(y[t < on][-1]) if np.any(t < on) else float(y[0])
    w_on = (t >= on) & (t <= on + window)
    k_dip = int(np.flatnonzero(w_on)[np.argmin(y[w_on])])
    contrast = abs(steady - bg)
    w_set = (t >= on + settle) & (t <= off)
    p0, p1 = plateau
    w_pl = (t >= p0) & (t <= (off if p1 is None else p1))
    w_off = (t >= off) & (t <= off + window)
    k_gain = int(np.flatnonzero(w_off)[np.argmax(y[w_off])])
    after = t >= off
    return TransientFeatures(
        background=bg,
        steady=float(steady),
        dip_time=float(t[k_dip] - on),
        dip_value=float(y[k_dip]),
        settle_deviation=float(np.max(np.abs(y[w_set] - steady)) / contrast) if contrast else math.inf,
        plateau_deviation=float(np.max(np.abs(y[w_pl] - steady))),
        gain_peak=float(y[k_gain]),
        gain_time=float(t[k_gain] - off),
        excess_area=float(np.trapezoid(y[after] - bg, t[after])),
    )
