"""Atomic species data, Rydberg level energies and dipole lookup."""
from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .constants import ATOMIC_MASS_UNIT, E_A0, HBAR, PLANCK, SPEED_OF_LIGHT, TWO_PI
from .errors import ConfigurationError, DomainError

SCHEMA_VERSION = 1

_LEVEL_RE = re.compile(r"^\s*(\d+)\s*([SPDF]\d/2)\s*$")


class DegenerateTransitionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class QuantumDefect:
    delta0: float
    delta2: float = 0.0
    source: str = ""

    def at(self, n: int) -> float:
        return self.delta0 + self.delta2 / (n - self.delta0) ** 2


@dataclass(frozen=True)
class Species:
    name: str
    mass: float
    ground_state: str
    intermediate_state: str
    probe_wavelength: float
    coupler_wavelength: float
    intermediate_decay_rate: float
    rydberg_constant: float
    quantum_defects: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mass <= 0:
            raise ConfigurationError(f"{self.name}: mass must be positive")
        if self.probe_wavelength <= 0 or self.coupler_wavelength <= 0:
            raise ConfigurationError(f"{self.name}: wavelengths must be positive")
        if self.intermediate_decay_rate <= 0:
            raise ConfigurationError(f"{self.name}: decay rate must be positive")
        for series, qd in self.quantum_defects.items():
            if not 0 <= qd.delta0 < 5:
                raise ConfigurationError(
                    f"{self.name} {series}: delta0={qd.delta0} outside [0, 5)")

    @property
    def k_probe(self) -> float:
        return TWO_PI / self.probe_wavelength

    @property
    def k_coupler(self) -> float:
        return TWO_PI / self.coupler_wavelength


@dataclass(frozen=True)
class RydbergLevel:
    species: str
    n: int
    series: str
    energy: float  # J, relative to the ionization limit

    @property
    def label(self) -> str:
        return f"{self.n}{self.series}"


@dataclass(frozen=True)
class TransitionDipole:
    lower: str
    upper: str
    d_ea0: float
    source: str = ""

    def __post_init__(self):
        if self.d_ea0 <= 0:
            raise DomainError("dipole moment must be positive")

    @property
    def d(self) -> float:
        """Dipole moment in C m."""
        return self.d_ea0 * E_A0


def _data_text(name: str) -> str:
    return resources.files("rydrx").joinpath("data", name).read_text(encoding="utf-8")


def parse_species_table(text: str) -> dict[str, Species]:
    raw = json.loads(text)
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigurationError(
            f"unsupported species schema_version {raw.get('schema_version')!r}")
    out = {}
    for name, s in raw["species"].items():
        defects = {k: QuantumDefect(v["delta0"], v.get("delta2", 0.0), v.get("source", ""))
                   for k, v in s["quantum_defects"].items()}
        out[name] = Species(
            name=name,
            mass=s["mass_amu"] * ATOMIC_MASS_UNIT,
            ground_state=s["ground_state"],
            intermediate_state=s["intermediate_state"],
            probe_wavelength=s["probe_wavelength_m"],
            coupler_wavelength=s["coupler_wavelength_m"],
            intermediate_decay_rate=TWO_PI * s["intermediate_decay_rate_hz"],
            rydberg_constant=s["rydberg_constant_per_m"],
            quantum_defects=defects,
        )
    return out


@lru_cache(maxsize=None)
def _bundled_species() -> dict[str, Species]:
    return parse_species_table(_data_text("species.json"))


def load_species(name: str, path: str | Path | None = None) -> Species:
    """Look up a species in the bundled table, or in ``path`` if given."""
    table = (parse_species_table(Path(path).read_text(encoding="utf-8"))
             if path is not None else _bundled_species())
    try:
        return table[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown species {name!r}; available: {sorted(table)}") from None


def parse_level(label: str) -> tuple[int, str]:
    """Split a label such as ``'47S1/2'`` into ``(47, 'S1/2')``."""
    m = _LEVEL_RE.match(label)
    if not m:
        raise ConfigurationError(f"cannot parse Rydberg level label {label!r}")
    return int(m.group(1)), m.group(2)


def rydberg_energy(species: Species, n: int, series: str) -> float:
    """Binding energy -hcR/(n - delta(n))**2 in joules."""
    if n < 5:
        raise DomainError(f"principal quantum number {n} < 5")
    try:
        qd = species.quantum_defects[series]
    except KeyError:
        raise ConfigurationError(
            f"series {series!r} not in the {species.name} quantum-defect table") from None
    n_eff = n - qd.at(n)
    return -PLANCK * SPEED_OF_LIGHT * species.rydberg_constant / n_eff**2


def rydberg_level(species: Species, label: str) -> RydbergLevel:
    n, series = parse_level(label)
    return RydbergLevel(species.name, n, series, rydberg_energy(species, n, series))


def transition_angular_frequency(a: RydbergLevel, b: RydbergLevel) -> float:
    """|E_a - E_b| / hbar in rad/s. Warns when the levels are degenerate."""
    if a.species != b.species:
        raise ConfigurationError(
            f"levels belong to different species ({a.species}, {b.species})")
    omega = abs(a.energy - b.energy) / HBAR
    if omega == 0.0:
        warnings.warn(f"degenerate transition {a.label} -> {b.label}",
                      DegenerateTransitionWarning, stacklevel=2)
    return omega


def rf_rabi_from_field(field: float, dipole: float) -> float:
    """RF Rabi frequency E*d/hbar (rad/s) for a field in V/m and a dipole in C m."""
    if dipole <= 0:
        raise DomainError(f"dipole moment must be positive, got {dipole}")
    if field < 0:
        raise DomainError(f"field amplitude must be non-negative, got {field}")
    return field * dipole / HBAR


def parse_dipole_table(text: str) -> dict[tuple[str, str, str], TransitionDipole]:
    raw = json.loads(text)
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigurationError(
            f"unsupported dipole schema_version {raw.get('schema_version')!r}")
    return {
        (e["species"], e["lower"], e["upper"]):
            TransitionDipole(e["lower"], e["upper"], e["d_ea0"], e.get("source", ""))
        for e in raw["dipoles"]
    }


@lru_cache(maxsize=None)
def _bundled_dipoles():
    return parse_dipole_table(_data_text("dipoles.json"))


def lookup_dipole(species: str, lower: str, upper: str) -> TransitionDipole:
    table = _bundled_dipoles()
    for key in ((species, lower, upper), (species, upper, lower)):
        if key in table:
            return table[key]
    raise ConfigurationError(f"no dipole entry for {species} {lower} <-> {upper}")
