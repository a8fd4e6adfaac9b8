"""RF phase retrieval with sideband-dressed two-photon Rydberg couplings.

Level scheme: ground ``g``, intermediate ``e``, two S Rydberg levels ``nS``
and ``(n+1)S`` reached by the two coupler sidebands, and ``nP`` reached from
either S level by the RF field (absorbed from ``nS``, emitted from
``(n+1)S``). Adiabatically eliminating the S levels leaves an effective
``e -> nP`` coupling made of two channels whose RF phases enter with
opposite signs.

``delta_a`` and ``delta_b`` are the detunings of the sidebands from the
``e -> (n+1)S`` and ``e -> nS`` transitions (laser minus atom), i.e. the
frame detunings of the eliminated levels. With that convention the
two-photon Rabi frequencies below are exactly the adiabatic limit of the
five-level model used by the full-dynamics path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .constants import HBAR, SPEED_OF_LIGHT, TWO_PI
from .errors import ConfigurationError, DomainError, UnresolvedPhaseError
from .lindblad import DriveField, LadderSystem, detuning_matrix, steady_state

ADIABATIC_RATIO = 10.0
LEVELS = ("g", "e", "nS", "n1S", "nP")
RUNGS = (0, 1, 2, 2, 3)


@dataclass(frozen=True)
class PhaseScheme:
    omega_rf: float          # RF angular frequency, rad/s
    delta_a: float           # rad/s, channel A ((n+1)S)
    delta_b: float           # rad/s, channel B (nS)
    omega_5p_ns: float       # optical sideband Rabi frequencies, rad/s
    omega_5p_n1s: float
    omega_ns_np: float       # RF Rabi frequencies, rad/s
    omega_n1s_np: float
    phi_5p_ns: float = 0.0
    phi_5p_n1s: float = 0.0
    phi_rf: float = 0.0
    d_a: float = 0.0         # C m, (n+1)S <-> nP
    d_b: float = 0.0         # C m, nS <-> nP

    def __post_init__(self):
        if self.delta_a == 0 or self.delta_b == 0:
            raise DomainError("detunings delta_a and delta_b must be non-zero")
        rabis = [abs(x) for x in (self.omega_5p_ns, self.omega_5p_n1s,
                                  self.omega_ns_np, self.omega_n1s_np)]
        small = min(abs(self.delta_a), abs(self.delta_b))
        if max(rabis) * ADIABATIC_RATIO > small:
            raise DomainError(
                f"|delta| = {small:.4g} rad/s is less than {ADIABATIC_RATIO:g}x the largest "
                f"Rabi frequency {max(rabis):.4g} rad/s; adiabatic elimination invalid")

    @classmethod
    def from_field(cls, field_v_per_m, d_a, d_b, omega_5p_ns, omega_5p_n1s, delta_a, delta_b,
                   phi_rf=0.0, omega_rf=TWO_PI * 10e9, phi_opt=0.0):
        """Scheme whose RF Rabi pair is E*d/hbar for the given dipoles (C m)."""
        if d_a <= 0 or d_b <= 0:
            raise DomainError("dipole moments must be positive")
        s = cls(omega_rf, delta_a, delta_b, omega_5p_ns, omega_5p_n1s,
                field_v_per_m * d_b / HBAR, field_v_per_m * d_a / HBAR,
                phi_rf=phi_rf, d_a=d_a, d_b=d_b)
        return s.with_opt_phase(phi_opt)

    def with_(self, **kw) -> "PhaseScheme":
        return replace(self, **kw)

    def with_opt_phase(self, phi_opt: float) -> "PhaseScheme":
        """Set the sideband phases so the net coupling goes as cos(phi_rf + phi_opt)."""
        return replace(self, phi_5p_ns=phi_opt + math.pi / 2,
                       phi_5p_n1s=-phi_opt - math.pi / 2)

    def with_field(self, field_v_per_m: float) -> "PhaseScheme":
        if self.d_a <= 0 or self.d_b <= 0:
            raise DomainError("scheme has no dipoles to convert a field")
        return replace(self, omega_ns_np=field_v_per_m * self.d_b / HBAR,
                       omega_n1s_np=field_v_per_m * self.d_a / HBAR)

    @property
    def adiabatic_ratio(self) -> float:
        rabis = max(abs(self.omega_5p_ns), abs(self.omega_5p_n1s),
                    abs(self.omega_ns_np), abs(self.omega_n1s_np))
        return min(abs(self.delta_a), abs(self.delta_b)) / rabis if rabis else math.inf


def two_photon_rabi_a(s: PhaseScheme) -> complex:
    """Channel A: sideband into (n+1)S, RF photon emitted to nP."""
    return (s.omega_5p_n1s * s.omega_n1s_np / (2 * s.delta_a)
            * np.exp(1j * (s.phi_5p_n1s - s.phi_rf)))


def two_photon_rabi_b(s: PhaseScheme) -> complex:
    """Channel B: sideband into nS, RF photon absorbed to nP."""
    return (s.omega_5p_ns * s.omega_ns_np / (2 * s.delta_b)
            * np.exp(1j * (s.phi_5p_ns + s.phi_rf)))


def net_coupling(s: PhaseScheme) -> complex:
    """Coherent sum of both channels, no symmetry assumed."""
    return two_photon_rabi_a(s) + two_photon_rabi_b(s)


def net_coupling_symmetric(s: PhaseScheme) -> complex:
    """Closed form for equal channel magnitudes and delta_b = -delta_a = delta.

    Uses ``omega_5p_ns``, ``omega_ns_np`` and ``delta_b`` only. The result is
    the negative of :func:`net_coupling` under those assumptions (a global
    sign that drops out of every observable).
    """
    pre = s.omega_5p_ns * s.omega_ns_np / (2 * s.delta_b)
    return pre * (np.exp(1j * (s.phi_5p_n1s - s.phi_rf)) - np.exp(1j * (s.phi_5p_ns + s.phi_rf)))


def peak_coupling_per_field(s: PhaseScheme) -> float:
    """|Omega_C| at optimal phase per unit field (rad/s per V/m)."""
    if s.d_a <= 0 or s.d_b <= 0:
        raise DomainError("scheme has no dipoles")
    return (abs(s.omega_5p_n1s) * s.d_a / (2 * HBAR * abs(s.delta_a))
            + abs(s.omega_5p_ns) * s.d_b / (2 * HBAR * abs(s.delta_b)))


def delay_to_phase(length: float, omega_rf: float) -> float:
    """Change 4 L omega_rf / c of the sideband phase difference for a delay-line shift L.

    The net coupling goes as cos(phi_rf + phi_opt) with phi_opt equal to half
    the sideband phase difference, so the cos^2 argument advances by half of
    the returned value.
    """
    return 4.0 * length * omega_rf / SPEED_OF_LIGHT


# --------------------------------------------------------------------------
# full five-level model

@dataclass(frozen=True)
class FullModel:
    """Parameters of the five-level steady-state evaluation path."""
    probe_rabi: float = TWO_PI * 10e3
    gamma_e: float = TWO_PI * 6.0666e6
    gamma_r: float = TWO_PI * 0.3e6
    dephasing_r: float = TWO_PI * 0.5e6
    search_halfwidth: float = TWO_PI * 3e6


def phase_system(model: FullModel) -> LadderSystem:
    decays = [("e", "g", model.gamma_e)]
    if model.gamma_r:
        decays += [(k, "g", model.gamma_r) for k in ("nS", "n1S", "nP")]
    deph = [(k, model.dephasing_r) for k in ("nS", "n1S", "nP")] if model.dephasing_r else []
    return LadderSystem(LEVELS, RUNGS, decays, deph)


def phase_drives(s: PhaseScheme, model: FullModel, two_photon=0.0, carrier_rabi=None):
    """Drives of the five-level model at two-photon detuning ``two_photon`` (rad/s).

    A non-None ``carrier_rabi`` adds the coupler carrier on e -> nP, which the
    model builder rejects (that edge is not a dipole-allowed single step).
    """
    drives = [
        DriveField("g", "e", model.probe_rabi, 0.0, role="probe"),
        DriveField("e", "nS", s.omega_5p_ns, s.delta_b + two_photon, s.phi_5p_ns,
                   role="sideband", name="sideband_b"),
        DriveField("e", "n1S", s.omega_5p_n1s, s.delta_a + two_photon, s.phi_5p_n1s,
                   role="sideband", name="sideband_a"),
        DriveField("nS", "nP", s.omega_ns_np, -s.delta_b, s.phi_rf, role="rf", name="rf_b"),
        DriveField("n1S", "nP", s.omega_n1s_np, -s.delta_a, -s.phi_rf, role="rf", name="rf_a"),
    ]
    if carrier_rabi is not None:
        drives.append(DriveField("e", "nP", carrier_rabi, two_photon, role="coupler",
                                 name="carrier"))
    return drives


def build_phase_model(s: PhaseScheme, model: FullModel = FullModel(), carrier_rabi=None):
    system = phase_system(model)
    drives = phase_drives(s, model, 0.0, carrier_rabi)
    detuning_matrix(system, drives)  # validates the drive graph
    return system, drives


def full_line_strength(s: PhaseScheme, model: FullModel = FullModel()) -> float:
    """Peak reduction of probe absorption (Im rho_ge, Doppler-free) by the dressed coupling."""
    system = phase_system(model)

    def absorption(delta):
        rho = steady_state(system, phase_drives(s, model, float(delta)), check=False)
        return rho[0, 1].imag

    base = absorption_without_coupling(s, model)
    w = model.search_halfwidth
    grid = np.linspace(-w, w, 25)
    vals = np.array([absorption(x) for x in grid])
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(absorption, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-6 * w})
    return float(base - min(res.fun, vals[k]))


def absorption_without_coupling(s: PhaseScheme, model: FullModel) -> float:
    system = phase_system(model)
    drives = [d.with_(rabi=0.0) if d.role != "probe" else d for d in phase_drives(s, model)]
    return float(steady_state(system, drives, check=False)[0, 1].imag)


# --------------------------------------------------------------------------
# scans and fitting

@dataclass
class PhaseFit:
    phi_rf: float            # rad in [0, pi)
    omega_c0: float          # rad/s, peak |Omega_C|
    field: float             # V/m (nan without dipoles)
    residual: float          # RMS residual relative to the largest line strength
    amplitude: float         # a of a cos^2(phi + b) + c
    offset: float            # c
    r_squared: float

    def to_dict(self) -> dict:
        return {
            "phi_rf_rad": self.phi_rf,
            "omega_c0_rad_per_s": self.omega_c0,
            "E_V_per_m": self.field,
            "residual": self.residual,
            "amplitude": self.amplitude,
            "offset": self.offset,
            "r_squared": self.r_squared,
        }


@dataclass
class PhaseScan:
    phi_opt: np.ndarray
    strength: np.ndarray
    mode: str = "algebraic"
    delays: np.ndarray | None = None
    fit: PhaseFit | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.phi_opt = np.asarray(self.phi_opt, dtype=float)
        self.strength = np.asarray(self.strength, dtype=float)
        if self.phi_opt.shape != self.strength.shape:
            raise DomainError("phase grid and line strengths differ in length")
        if np.any(self.strength < 0):
            raise DomainError("line strengths must be non-negative")


def _check_grid(phi):
    phi = np.asarray(phi, dtype=float)
    if len(phi) < 16:
        raise DomainError(f"phase scan needs >= 16 points, got {len(phi)}")
    step = float(np.median(np.abs(np.diff(phi))))
    if np.ptp(phi) + step < TWO_PI * (1 - 1e-9):
        raise DomainError("phase scan must span at least 2 pi")
    return phi


def simulate_phase_scan(scheme: PhaseScheme, phi_opt=None, delays=None, mode="algebraic",
                        noise=0.0, floor=0.0, seed=None, model: FullModel = FullModel()) -> PhaseScan:
    """Line strength versus optical phase.

    ``mode="algebraic"`` returns |Omega_C|^2 (rad^2/s^2); ``mode="full"``
    returns the absorption reduction of the five-level steady state, which is
    proportional to |Omega_C|^2 for weak dressed coupling. ``noise`` is the
    relative standard deviation of multiplicative Gaussian noise and
    ``floor`` a constant offset added to every point.
    """
    if (phi_opt is None) == (delays is None):
        raise ConfigurationError("give exactly one of phi_opt or delays")
    if delays is not None:
        delays = np.asarray(delays, dtype=float)
        phi_opt = np.array([delay_to_phase(L, scheme.omega_rf) / 2 for L in delays])
    phi = _check_grid(phi_opt)
    if mode == "algebraic":
        S = np.array([abs(net_coupling(scheme.with_opt_phase(p))) ** 2 for p in phi])
    elif mode == "full":
        S = np.array([full_line_strength(scheme.with_opt_phase(p), model) for p in phi])
    else:
        raise ConfigurationError(f"unknown phase-scan mode {mode!r}")
    if noise < 0:
        raise ConfigurationError("noise must be non-negative")
    if noise:
        rng = np.random.default_rng(seed)
        S = S * (1.0 + noise * rng.standard_normal(len(S)))
    S = np.maximum(S + floor, 0.0)
    return PhaseScan(phi, S, mode, delays, None,
                     {"noise": noise, "floor": floor, "seed": seed})


def _cos2_design(phi, b):
    return np.stack([np.cos(phi + b) ** 2, np.ones_like(phi)], axis=-1)


def fit_cos2(phi, y, grid_step=math.pi / 32):
    """Least-squares fit of ``a cos^2(phi + b) + c``; returns ``(a, b, c)`` with a >= 0, b in [0, pi)."""
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    best = None
    for b in np.arange(0.0, math.pi, grid_step):
        A = _cos2_design(phi, b)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        sse = float(np.sum((A @ coef - y) ** 2))
        if best is None or sse < best[0]:
            best = (sse, coef[0], b, coef[1])
    _, a0, b0, c0 = best

    def resid(p):
        return p[0] * np.cos(phi + p[1]) ** 2 + p[2] - y

    sol = least_squares(resid, [a0, b0, c0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    a, b, c = sol.x
    if a < 0:
        a, b, c = -a, b + math.pi / 2, c + a
    return float(a), float(b % math.pi), float(c)


def fit_phase_and_amplitude(scan: PhaseScan, scheme: PhaseScheme | None = None,
                            strength_scale=1.0, min_snr=3.0) -> PhaseFit:
    """Fit the phase scan and invert the peak coupling into a field.

    Line strengths are ``strength_scale * |Omega_C|^2``; the default suits
    algebraic scans. The field needs the scheme's dipoles and detunings.
    Raises :class:`UnresolvedPhaseError` when the fitted contrast is not
    ``min_snr`` times the residual RMS (or is zero).
    """
    phi = _check_grid(scan.phi_opt)
    y = scan.strength
    scale = float(np.max(np.abs(y)))
    if scale == 0:
        raise UnresolvedPhaseError("line strength is identically zero")
    a, b, c = fit_cos2(phi, y / scale)
    model = a * np.cos(phi + b) ** 2 + c
    rms = float(np.sqrt(np.mean((model - y / scale) ** 2)))
    if a <= max(min_snr * rms, 1e-12):
        raise UnresolvedPhaseError(
            f"phase contrast {a:.3g} below noise floor ({min_snr:g} x residual {rms:.3g})")
    ss_tot = float(np.sum((y / scale - np.mean(y / scale)) ** 2))
    r2 = 1.0 - float(np.sum((model - y / scale) ** 2)) / ss_tot if ss_tot else 1.0
    peak = math.sqrt(max(a + c, 0.0) * scale / strength_scale)
    E = math.nan
    if scheme is not None and scheme.d_a > 0 and scheme.d_b > 0:
        E = peak / peak_coupling_per_field(scheme)
    fit = PhaseFit(b, peak, E, rms, a * scale, c * scale, r2)
    scan.fit = fit
    return fit
