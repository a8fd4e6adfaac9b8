"""Probe transmission, coupler-detuning scans and spectral feature extraction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks, peak_widths

from .doppler import VaporConfig, averaged_steady_state, parallel_map
from .errors import DimensionError, DomainError, FeatureAmbiguityError, ScanError
from .lindblad import DriveField, LadderSystem

BACKGROUND_TRANSMISSION = 0.236
DEFAULT_OD = math.log(1.0 / BACKGROUND_TRANSMISSION)
DEFAULT_SPAN = 2 * math.pi * 60e6
DEFAULT_POINTS = 401
DETECTION_FLOOR = 1e-6  # transmission units; smaller structure counts as flat


def probe_transmission(im_coherence, od: float, reference: float = 1.0):
    """Beer-Lambert transmission ``exp(-od * Im(rho_ge) / reference)``.

    ``reference`` is the probe absorption (Im rho_ge) of the coupler-free,
    resonant system, so that configuration transmits exactly ``exp(-od)``.
    """
    if od < 0:
        raise DomainError(f"optical depth must be non-negative, got {od}")
    if reference <= 0:
        raise DomainError(f"reference absorption must be positive, got {reference}")
    return np.exp(-od * np.asarray(im_coherence, dtype=float) / reference)


def probe_index(system: LadderSystem, drives: Sequence[DriveField]) -> tuple[int, int]:
    probes = [d for d in drives if d.role == "probe"]
    if len(probes) != 1:
        raise DomainError(f"expected exactly one probe drive, found {len(probes)}")
    p = probes[0]
    return system.index(p.lower), system.index(p.upper)


def _optical_column(drives, role):
    cols = [k for k, d in enumerate([d for d in drives if d.optical]) if d.role == role]
    if not cols:
        raise DomainError(f"no {role} drive to scan")
    return cols


def reference_absorption(system, drives, vapor: VaporConfig | None, exact=True) -> float:
    """Im(rho_ge) with every non-probe drive off and the probe on resonance."""
    ref_drives = [d.with_(detuning=0.0) if d.role == "probe" else d.with_(rabi=0.0, detuning=0.0)
                  for d in drives]
    i, j = probe_index(system, drives)
    rho = averaged_steady_state(system, ref_drives, vapor, np.zeros((1, sum(d.optical for d in drives))),
                                exact=exact)
    return float(rho[0, i, j].imag)


@dataclass
class SpectrumScan:
    """Transmission versus coupler detuning (rad/s)."""
    detuning: np.ndarray
    transmission: np.ndarray
    optical_depth: float
    absorption: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, dtype=float)
        self.transmission = np.asarray(self.transmission, dtype=float)
        if self.detuning.shape != self.transmission.shape or self.detuning.ndim != 1:
            raise DimensionError("detuning and transmission must be equal-length 1-D arrays")
        if np.any(np.diff(self.detuning) <= 0):
            raise DimensionError("detuning grid must be strictly increasing")
        if np.any(self.transmission < -1e-12) or np.any(self.transmission > 1 + 1e-12):
            raise DomainError("transmission outside [0, 1]")

    @property
    def step(self) -> float:
        return float(np.median(np.diff(self.detuning)))


def scan_spectrum(system: LadderSystem, drives: Sequence[DriveField], vapor: VaporConfig | None,
                  od: float = DEFAULT_OD, detunings=None, scan_role="coupler", exact=True,
                  threads=1, chunk=64, metadata=None) -> SpectrumScan:
    """Doppler-averaged steady-state transmission on a coupler-detuning grid.

    The scanned detuning is added to the nominal detuning of every optical
    drive with ``scan_role`` (coupler, or both sidebands in a sideband scheme).
    """
    if detunings is None:
        detunings = np.linspace(-DEFAULT_SPAN, DEFAULT_SPAN, DEFAULT_POINTS)
    detunings = np.asarray(detunings, dtype=float)
    cols = _optical_column(drives, scan_role)
    n_opt = sum(d.optical for d in drives)
    i, j = probe_index(system, drives)
    ref = reference_absorption(system, drives, vapor, exact)

    def block(idx):
        off = np.zeros((len(idx), n_opt))
        off[:, cols] = detunings[idx, None]
        try:
            rho = averaged_steady_state(system, drives, vapor, off, exact=exact)
        except Exception as exc:
            if len(idx) == 1:
                raise ScanError(f"steady state failed: {exc}", detuning=float(detunings[idx[0]])) from exc
            return np.concatenate([block(idx[k:k + 1]) for k in range(len(idx))])
        im = rho[:, i, j].imag
        bad = ~np.isfinite(im)
        if bad.any():
            raise ScanError("non-finite coherence", detuning=float(detunings[idx][bad][0]))
        return im

    blocks = [np.arange(s, min(s + chunk, len(detunings))) for s in range(0, len(detunings), chunk)]
    im = np.concatenate(parallel_map(block, blocks, threads))
    T = probe_transmission(im, od, ref)
    meta = {"reference_absorption": ref, "scan_role": scan_role}
    meta.update(metadata or {})
    return SpectrumScan(detunings, np.clip(T, 0.0, 1.0), od, im, meta)


@dataclass
class SpectralFeatures:
    peaks: tuple                  # rad/s, ascending
    peak_transmission: tuple
    splitting: float | None       # rad/s, only for exactly two dominant peaks
    fwhm: float | None            # rad/s, only for single-peak scans
    contrast: float
    uncertainty: float            # rad/s, interpolation half-width of the reported quantity

    def to_dict(self) -> dict:
        tau = 2 * math.pi
        return {
            "peaks_hz": [p / tau for p in self.peaks],
            "peak_transmission": list(self.peak_transmission),
            "splitting_hz": None if self.splitting is None else self.splitting / tau,
            "fwhm_hz": None if self.fwhm is None else self.fwhm / tau,
            "contrast": self.contrast,
            "uncertainty_hz": self.uncertainty / tau,
        }


def _refine(x, y, i):
    """Vertex of the parabola through points i-1, i, i+1."""
    if i == 0 or i == len(y) - 1:
        return float(x[i]), float(y[i])
    xs, ys = x[i - 1:i + 2], y[i - 1:i + 2]
    a, b, c = np.polyfit(xs - xs[1], ys, 2)
    if a >= 0:
        return float(x[i]), float(y[i])
    dx = float(np.clip(-b / (2 * a), xs[0] - xs[1], xs[2] - xs[1]))
    return float(xs[1] + dx), float(c - b * b / (4 * a))


def find_dominant_peaks(x, y, min_prominence=0.05, dominant_fraction=0.25,
                        floor=DETECTION_FLOOR):
    """Indices of dominant local maxima, ordered by prominence (ties: lower x first).

    Peaks need a prominence of at least ``min_prominence`` of the full range
    and at least ``floor`` in absolute terms.
    """
    span = float(np.max(y) - np.min(y))
    if not np.isfinite(span) or span <= floor:
        return np.array([], dtype=int), np.array([])
    idx, props = find_peaks(y, prominence=max(min_prominence * span, floor))
    if len(idx) == 0:
        return idx, np.array([])
    prom = props["prominences"]
    keep = prom >= dominant_fraction * prom.max()
    idx, prom = idx[keep], prom[keep]
    order = np.lexsort((x[idx], -prom))
    return idx[order], prom[order]


def extract_features(scan: SpectrumScan, min_prominence=0.05, dominant_fraction=0.25,
                     floor=DETECTION_FLOOR) -> SpectralFeatures:
    """Peak positions, AT splitting or FWHM from a transmission scan.

    Peaks are local maxima whose prominence exceeds ``min_prominence`` of the
    scan's full range; of those, peaks within ``dominant_fraction`` of the
    strongest are dominant. Two dominant peaks give a splitting, one gives a
    FWHM (measured at half the peak's prominence). Anything else, including a
    spectrum flatter than ``floor``, raises :class:`FeatureAmbiguityError`.
    """
    x, y = scan.detuning, scan.transmission
    if len(x) < 16:
        raise DimensionError(f"feature extraction needs >= 16 points, got {len(x)}")
    idx, prom = find_dominant_peaks(x, y, min_prominence, dominant_fraction, floor)
    if len(idx) == 0:
        raise FeatureAmbiguityError("no spectral peak found", n_peaks=0)
    if len(idx) > 2:
        raise FeatureAmbiguityError(f"{len(idx)} dominant peaks; splitting is ambiguous",
                                    n_peaks=int(len(idx)))
    h = scan.step
    refined = sorted(_refine(x, y, i) for i in idx)
    contrast = float(np.max(y) - np.min(y))
    if len(idx) == 2:
        (p0, t0), (p1, t1) = refined
        return SpectralFeatures((p0, p1), (t0, t1), p1 - p0, None, contrast, h / math.sqrt(2))
    i = int(idx[0])
    widths, _, left, right = peak_widths(y, [i], rel_height=0.5)
    grid = np.arange(len(x))
    fwhm = float(np.interp(right[0], grid, x) - np.interp(left[0], grid, x))
    (p0, t0), = refined
    return SpectralFeatures((p0,), (t0,), None, fwhm, contrast, h / math.sqrt(2))
