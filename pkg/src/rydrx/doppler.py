"""Thermal-vapor velocity averaging along the beam axis."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_hermitenorm, wofz

from .constants import BOLTZMANN
from .errors import ConfigurationError, DimensionError, NonConvergenceError
from .lindblad import (DriveField, Generator, _diag_superop, _trace_row,
                       level_detunings, steady_state)

DEFAULT_TEMPERATURE = 294.0  # K; labelled assumption, no cell temperature is given


@dataclass(frozen=True)
class VaporConfig:
    """Velocity-averaging parameters.

    ``method`` selects the quadrature: ``"uniform"`` is the trapezoid rule on
    an evenly spaced grid spanning ``+-span`` thermal widths (weights
    renormalized); ``"stretched"`` maps a uniform grid through a sinh so the
    spacing near ``v = 0`` is ``stretch/sinh(stretch)`` times the uniform one
    and grows smoothly into the wings, which suppresses the periodic revivals
    a uniform grid produces in time-domain runs; ``"gauss-hermite"`` uses
    Gauss-Hermite nodes, which place few nodes near ``v = 0`` and resolve
    narrow two-photon resonances poorly.
    """
    temperature: float
    mass: float
    k_probe: float
    k_coupler: float
    counter_propagating: bool = True
    n_classes: int = 801
    span: float = 5.0
    method: str = "stretched"
    stretch: float = 3.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        if self.mass <= 0:
            raise ConfigurationError("mass must be positive")
        if self.n_classes < 1:
            raise ConfigurationError("need at least one velocity class")
        if self.n_classes != 1 and self.n_classes < 3:
            raise ConfigurationError("velocity grid needs N = 1 or N >= 3 classes")
        if self.method not in ("uniform", "stretched", "gauss-hermite"):
            raise ConfigurationError(f"unknown quadrature method {self.method!r}")
        if self.span <= 0:
            raise ConfigurationError("span must be positive")
        if self.stretch <= 0:
            raise ConfigurationError("stretch must be positive")

    @property
    def thermal_velocity(self) -> float:
        """1-D RMS velocity sqrt(k_B T / m)."""
        return math.sqrt(BOLTZMANN * self.temperature / self.mass)

    @classmethod
    def for_species(cls, species, temperature=DEFAULT_TEMPERATURE, **kw):
        return cls(temperature, species.mass, species.k_probe, species.k_coupler, **kw)


def velocity_grid(config: VaporConfig) -> tuple[np.ndarray, np.ndarray]:
    """Velocity classes (m/s) and normalized weights for the 1-D Maxwell-Boltzmann law."""
    n = config.n_classes
    sigma = config.thermal_velocity
    if n == 1:
        return np.zeros(1), np.ones(1)
    if config.method == "gauss-hermite":
        x, w = roots_hermitenorm(n)
        return x * sigma, w / w.sum()
    u = np.linspace(-1.0, 1.0, n)
    if config.method == "stretched":
        a = config.stretch
        x = config.span * np.sinh(a * u) / math.sinh(a)
        jac = np.cosh(a * u)
    else:
        x = config.span * u
        jac = np.ones(n)
    w = np.exp(-0.5 * x**2) * jac
    w[[0, -1]] *= 0.5
    return x * sigma, w / w.sum()


def doppler_offsets(velocity, config: VaporConfig, drives: Sequence[DriveField]) -> np.ndarray:
    """Detuning offsets (rad/s) for every optical drive, shape ``(..., n_optical)``.

    The probe sees ``-k_p v``; coupler and sideband drives see ``+k_c v``
    when counter-propagating (``-k_c v`` otherwise). RF drives are excluded
    (RF wavelength far exceeds the cell).
    """
    v = np.asarray(velocity, dtype=float)[..., None]
    ks = []
    for d in drives:
        if not d.optical:
            continue
        if d.role == "probe":
            ks.append(-config.k_probe)
        else:
            ks.append(config.k_coupler if config.counter_propagating else -config.k_coupler)
    return v * np.array(ks)


def averaged_observable(values, weights) -> np.ndarray:
    """Weighted sum over the leading (velocity) axis in a fixed order."""
    values = np.asarray(values)
    weights = np.asarray(weights)
    if values.shape[:1] != weights.shape:
        raise DimensionError(
            f"{values.shape[0] if values.ndim else 0} values for {weights.size} weights")
    return np.tensordot(weights, values, axes=(0, 0))


def gaussian_resolvent_mean(poles, sigma):
    """Mean of ``1/(v - p)`` over a zero-mean Gaussian of width ``sigma``.

    Uses the Faddeeva function; ``p`` must be off the real axis.
    """
    p = np.asarray(poles, dtype=complex)
    z = p / (math.sqrt(2.0) * sigma)
    upper = wofz(np.where(z.imag >= 0, z, np.conj(z)))
    w = np.where(z.imag >= 0, upper, -np.conj(upper))
    return 1j * math.sqrt(math.pi / 2.0) / sigma * w


def exact_average_steady_state(system, drives, config: VaporConfig, offsets=None,
                               max_condition=1e9):
    """Maxwell-Boltzmann average of the steady state without velocity quadrature.

    The stationary state of ``L0 + v L1`` (trace row substituted) is rational
    in ``v``. Eliminating the velocity-independent components by a Schur
    complement leaves ``(S + v)^-1`` whose eigen-expansion is averaged
    analytically with :func:`gaussian_resolvent_mean`.

    ``offsets`` are fixed per-optical-drive detuning offsets with leading
    batch dimensions (e.g. a coupler-detuning scan). Batch points whose
    eigenbasis is ill-conditioned are returned as NaN in the second output
    mask so callers can fall back to quadrature.

    Returns ``(rho, ok)`` with ``rho`` of shape ``(*batch, n, n)``.
    """
    n = system.n
    m = n * n
    n_opt = sum(d.optical for d in drives)
    base = np.zeros(n_opt) if offsets is None else np.asarray(offsets, dtype=float)
    batch = base.shape[:-1]
    gen = Generator(system, drives, base)
    A0 = gen.static().reshape(-1, m, m)
    A0[:, 0, :] = _trace_row(n)
    unit = doppler_offsets(1.0, config, drives)
    sens = _diag_superop(level_detunings(system, [d.with_(detuning=0.0) for d in drives], unit))
    sens[0] = 0.0
    P = np.flatnonzero(np.abs(sens) > 0)
    Q = np.flatnonzero(np.abs(sens) == 0)
    b = np.zeros(m, dtype=complex)
    b[0] = 1.0
    AQQ = A0[:, Q][:, :, Q]
    AQP = A0[:, Q][:, :, P]
    APQ = A0[:, P][:, :, Q]
    APP = A0[:, P][:, :, P]
    try:
        sol = np.linalg.solve(AQQ, np.concatenate(
            [AQP, np.broadcast_to(b[Q][:, None], AQP.shape[:-1] + (1,))], axis=-1))
    except np.linalg.LinAlgError:
        return np.full(batch + (n, n), np.nan + 0j), np.zeros(batch, dtype=bool)
    X, y = sol[..., :-1], sol[..., -1]
    K = APP - APQ @ X
    c = b[P][None, :] - np.einsum("bij,bj->bi", APQ, y)
    d = sens[P]
    S = K / d[None, :, None]
    lam, V = np.linalg.eig(S)
    cond = np.linalg.cond(V)
    coeff = np.linalg.solve(V, (c / d[None, :])[..., None])[..., 0]
    G = gaussian_resolvent_mean(-lam, config.thermal_velocity)
    xP = np.einsum("bij,bj->bi", V, G * coeff)
    xQ = y - np.einsum("bij,bj->bi", X, xP)
    x = np.empty((A0.shape[0], m), dtype=complex)
    x[:, P] = xP
    x[:, Q] = xQ
    ok = np.isfinite(cond) & (cond < max_condition) & np.all(np.isfinite(x), axis=-1)
    rho = x.reshape(batch + (n, n))
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    return rho, ok.reshape(batch)


def quadrature_average_steady_state(system, drives, config: VaporConfig, offsets=None,
                                    chunk=200_000):
    """Velocity-quadrature average of the steady state, shape ``(*batch, n, n)``."""
    n_opt = sum(d.optical for d in drives)
    base = np.zeros(n_opt) if offsets is None else np.asarray(offsets, dtype=float)
    batch = base.shape[:-1]
    base = base.reshape(-1, n_opt)
    v, w = velocity_grid(config)
    dop = doppler_offsets(v, config, drives)
    rows = max(1, chunk // len(v))
    out = []
    first = True
    for start in range(0, len(base), rows):
        o = base[start:start + rows, None, :] + dop[None, :, :]
        rho = steady_state(system, drives, o, check=first)
        first = False
        out.append(np.einsum("v,bvij->bij", w, rho))
    return np.concatenate(out).reshape(batch + (system.n, system.n))


def averaged_steady_state(system, drives, config: VaporConfig | None, offsets=None,
                          exact=True):
    """Doppler-averaged steady state; exact route with quadrature fallback."""
    if config is None or config.n_classes == 1:
        n_opt = sum(d.optical for d in drives)
        base = np.zeros(n_opt) if offsets is None else np.asarray(offsets, dtype=float)
        return steady_state(system, drives, base)
    if not any(r > 0 for _, _, r in system.decays):
        raise NonConvergenceError("system has no decay channel; steady state undefined")
    if exact:
        rho, ok = exact_average_steady_state(system, drives, config, offsets)
        if ok.all():
            return rho
        base = np.asarray(offsets, dtype=float)
        bad = ~ok
        rho[bad] = quadrature_average_steady_state(system, drives, config, base[bad])
        return rho
    return quadrature_average_steady_state(system, drives, config, offsets)


def parallel_map(func: Callable, items: Sequence, threads: int = 1) -> list:
    """Map preserving input order; with ``threads > 1`` items run on a pool."""
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
