"""RF field amplitude from spectroscopic features."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .constants import HBAR, TWO_PI
from .errors import DomainError, FeatureAmbiguityError
from .spectroscopy import DEFAULT_OD, extract_features, scan_spectrum

DEFAULT_BAND = (1.0, 10.0)  # weak-field band in units of the EIT linewidth


@dataclass(frozen=True)
class FieldEstimate:
    field: float                 # V/m
    method: str                  # "at-splitting" or "phase-scan-peak"
    weak_field: bool
    splitting_resolved: bool
    uncertainty: float           # V/m; interpolation half-width only
    rabi: float = math.nan       # rad/s, the Rabi frequency that was inverted
    linewidth: float | None = None

    def __post_init__(self):
        if self.field < 0 or self.uncertainty < 0:
            raise DomainError("field and uncertainty must be non-negative")
        if self.method == "phase-scan-peak" and self.splitting_resolved:
            raise DomainError("phase-scan estimates carry no splitting")

    def to_dict(self) -> dict:
        return {
            "E_V_per_m": self.field,
            "method": self.method,
            "weak_field": self.weak_field,
            "splitting_resolved": self.splitting_resolved,
            "uncertainty_V_per_m": self.uncertainty,
            "rabi_hz": self.rabi / TWO_PI,
            "linewidth_hz": None if self.linewidth is None else self.linewidth / TWO_PI,
        }


def in_weak_field_band(rabi: float, linewidth: float | None, band=DEFAULT_BAND) -> bool:
    if linewidth is None or not linewidth > 0:
        return False
    lo, hi = band
    return lo * linewidth < rabi < hi * linewidth


def field_from_splitting(splitting: float, dipole: float, linewidth: float | None = None,
                         band=DEFAULT_BAND, splitting_uncertainty: float = 0.0,
                         resolved: bool | None = None) -> FieldEstimate:
    """Invert an AT splitting (rad/s) into a field E = hbar * splitting / d."""
    if dipole <= 0:
        raise DomainError(f"dipole moment must be positive, got {dipole}")
    if splitting < 0:
        raise DomainError(f"splitting must be non-negative, got {splitting}")
    field = HBAR * splitting / dipole
    return FieldEstimate(
        field=field,
        method="at-splitting",
        weak_field=in_weak_field_band(splitting, linewidth, band),
        splitting_resolved=bool(splitting > 0) if resolved is None else resolved,
        uncertainty=HBAR * abs(splitting_uncertainty) / dipole,
        rabi=splitting,
        linewidth=linewidth,
    )


def eit_linewidth(system, drives, vapor, od=DEFAULT_OD, detunings=None, exact=True) -> float:
    """FWHM (rad/s) of the RF-free EIT line for the same optical configuration."""
    off = [d.with_(rabi=0.0) if d.role == "rf" else d for d in drives]
    f = extract_features(scan_spectrum(system, off, vapor, od, detunings, exact=exact))
    return f.fwhm


def end_to_end_estimate(system, drives, vapor, dipole, od=DEFAULT_OD, detunings=None,
                        band=DEFAULT_BAND, exact=True, threads=1) -> FieldEstimate:
    """Simulate a coupler scan, extract the AT splitting and invert it.

    The field is whatever the RF drive in ``drives`` encodes; the estimate
    uses only the extracted splitting, the dipole and hbar.
    """
    scan = scan_spectrum(system, drives, vapor, od, detunings, exact=exact, threads=threads)
    feats = extract_features(scan)
    if feats.splitting is None:
        raise FeatureAmbiguityError("AT splitting not resolved; no field estimate", n_peaks=1)
    lw = eit_linewidth(system, drives, vapor, od, detunings, exact)
    return field_from_splitting(feats.splitting, dipole, lw, band, feats.uncertainty, True)
