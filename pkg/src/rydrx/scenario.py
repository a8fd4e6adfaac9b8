"""Scenario files: schema, validation and canonical YAML serialization.

Every physical quantity carries its unit in the key name. Frequencies and
rates use ``_hz`` and mean angular value / 2 pi; times use ``_s``, fields
``_v_per_m``, dipoles ``_ea0``, phases ``_rad``, lengths ``_m`` and
temperatures ``_k``.
"""
from __future__ import annotations

from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_core import PydanticCustomError

from .atomic import load_species, lookup_dipole
from .constants import E_A0, HBAR, TWO_PI
from .doppler import VaporConfig
from .errors import ConfigurationError, RydrxError
from .lindblad import CW, OFF, DriveField, LadderSystem, SquarePulse, detuning_matrix
from .spectroscopy import DEFAULT_OD

SCHEMA_VERSION = 1
UNIT_SUFFIXES = ("_hz", "_s", "_v_per_m", "_ea0", "_rad", "_m", "_k")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="before")
    @classmethod
    def _unit_hints(cls, data):
        if isinstance(data, dict):
            for key in data:
                if key in cls.model_fields or not isinstance(key, str):
                    continue
                hints = [key + s for s in UNIT_SUFFIXES if key + s in cls.model_fields]
                if hints:
                    raise PydanticCustomError(
                        "missing_unit_suffix",
                        "field '{key}' needs a unit suffix; did you mean '{hint}'?",
                        {"key": key, "hint": hints[0]})
        return data


class Decay(_Strict):
    upper: str
    lower: str
    rate_hz: float = Field(ge=0)


class Dephasing(_Strict):
    level: str
    rate_hz: float = Field(ge=0)


class Ladder(_Strict):
    levels: list[str]
    rungs: Optional[list[int]] = None
    decays: list[Decay] = []
    dephasing: list[Dephasing] = []


class EnvelopeSpec(_Strict):
    kind: Literal["cw", "off", "square"] = "cw"
    on_s: Optional[float] = None
    off_s: Optional[float] = None
    rise_s: float = Field(10e-9, ge=0)
    fall_s: Optional[float] = Field(None, ge=0)
    level: float = Field(1.0, ge=-1, le=1)

    @model_validator(mode="after")
    def _times(self):
        if self.kind == "square" and (self.on_s is None or self.off_s is None):
            raise ValueError("square envelope needs on_s and off_s")
        return self

    def build(self):
        if self.kind == "cw":
            return CW
        if self.kind == "off":
            return OFF
        return SquarePulse(self.on_s, self.off_s, self.rise_s, self.fall_s, self.level)


class Drive(_Strict):
    role: Literal["probe", "coupler", "sideband", "rf"]
    lower: str
    upper: str
    rabi_hz: Optional[float] = None
    field_v_per_m: Optional[float] = Field(None, ge=0)
    dipole_ea0: Optional[float] = Field(None, gt=0)
    detuning_hz: float = 0.0
    phase_rad: float = 0.0
    envelope: EnvelopeSpec = EnvelopeSpec()
    name: str = ""

    @model_validator(mode="after")
    def _amplitude(self):
        by_field = self.field_v_per_m is not None or self.dipole_ea0 is not None
        if by_field and self.role != "rf":
            raise ValueError("field_v_per_m/dipole_ea0 are only valid for rf drives")
        if by_field and (self.field_v_per_m is None or self.dipole_ea0 is None):
            raise ValueError("give both field_v_per_m and dipole_ea0")
        if by_field == (self.rabi_hz is not None):
            raise ValueError("give exactly one of rabi_hz or field_v_per_m + dipole_ea0")
        return self

    @property
    def rabi(self) -> float:
        if self.rabi_hz is not None:
            return TWO_PI * self.rabi_hz
        return self.field_v_per_m * self.dipole_ea0 * E_A0 / HBAR

    def build(self) -> DriveField:
        return DriveField(self.lower, self.upper, self.rabi, TWO_PI * self.detuning_hz,
                          self.phase_rad, self.envelope.build(), self.role, self.name)


class Vapor(_Strict):
    temperature_k: float = Field(294.0, gt=0)
    n_classes: int = Field(801, ge=1)
    span: float = Field(5.0, gt=0)
    method: Literal["stretched", "uniform", "gauss-hermite"] = "stretched"
    counter_propagating: bool = True
    exact: bool = True


class Grid(_Strict):
    start_hz: float = -60e6
    stop_hz: float = 60e6
    points: int = Field(401, ge=1)

    @model_validator(mode="after")
    def _order(self):
        if self.points > 1 and not self.stop_hz > self.start_hz:
            raise ValueError("stop_hz must exceed start_hz")
        return self

    def values(self) -> np.ndarray:
        if self.points == 1:
            return np.array([TWO_PI * self.start_hz])
        return TWO_PI * np.linspace(self.start_hz, self.stop_hz, self.points)


class SpectrumBlock(_Strict):
    grid: Grid = Grid()
    scan_role: Literal["coupler", "sideband"] = "coupler"


class PulseBlock(_Strict):
    kind: Literal["auto", "rf", "coupler"] = "auto"
    span_s: float = Field(25e-6, gt=0)
    dt_s: float = Field(5e-9, gt=0)
    t_start_s: float = 0.0
    detector_bandwidth_hz: Optional[float] = Field(None, gt=0)
    mode: Literal["absolute", "relative"] = "absolute"
    grid: Grid = Grid(points=1, start_hz=0.0, stop_hz=0.0)


class PhaseBlock(_Strict):
    field_v_per_m: float = Field(gt=0)
    d_a_ea0: float = Field(gt=0)
    d_b_ea0: float = Field(gt=0)
    omega_5p_ns_hz: float
    omega_5p_n1s_hz: float
    delta_a_hz: float
    delta_b_hz: float
    phi_rf_rad: float = 0.0
    rf_frequency_hz: float = Field(10e9, gt=0)
    points: int = Field(64, ge=16)
    delay_stop_m: Optional[float] = Field(None, gt=0)
    mode: Literal["algebraic", "full"] = "algebraic"
    noise: float = Field(0.0, ge=0)
    floor: float = Field(0.0, ge=0)


class DemodBlock(_Strict):
    depth: float = Field(0.05, ge=0, lt=1)
    tone_hz: float = Field(1e3, gt=0)
    sample_rate_hz: float = Field(100e3, gt=0)
    periods: int = Field(5, ge=1)
    baseband_csv: Optional[str] = None
    mode: Literal["quasi-static", "full"] = "quasi-static"
    operating_point_hz: Optional[float] = None
    quasi_static_limit: float = Field(0.1, gt=0)
    grid: Grid = Grid(points=801)


class Transition(_Strict):
    lower: str
    upper: str


class EstimateBlock(_Strict):
    dipole_ea0: Optional[float] = Field(None, gt=0)
    transition: Optional[Transition] = None
    band: tuple[float, float] = (1.0, 10.0)

    @model_validator(mode="after")
    def _dipole(self):
        if (self.dipole_ea0 is None) == (self.transition is None):
            raise ValueError("give exactly one of dipole_ea0 or transition")
        return self


class Output(_Strict):
    directory: str = "."
    prefix: Optional[str] = None


class Scenario(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = "scenario"
    species: str = "Rb87"
    seed: int = 0
    ladder: Optional[Ladder] = None
    drives: list[Drive] = []
    vapor: Optional[Vapor] = Vapor()
    optical_depth: float = Field(DEFAULT_OD, ge=0)
    spectrum: Optional[SpectrumBlock] = None
    pulse: Optional[PulseBlock] = None
    phase: Optional[PhaseBlock] = None
    demod: Optional[DemodBlock] = None
    estimate: Optional[EstimateBlock] = None
    output: Output = Output()

    @model_validator(mode="after")
    def _model(self):
        if bool(self.drives) != (self.ladder is not None):
            raise ValueError("ladder and drives must be given together")
        for block in ("spectrum", "pulse", "demod"):
            if getattr(self, block) is not None and not self.drives:
                raise ValueError(f"the {block} block needs a ladder and drives")
        try:
            load_species(self.species)
            if self.drives:
                detuning_matrix(self.system, self.drive_fields)
        except RydrxError as exc:
            raise ValueError(str(exc)) from None
        return self

    # derived objects -----------------------------------------------------

    @cached_property
    def system(self) -> LadderSystem:
        lad = self.ladder
        return LadderSystem(tuple(lad.levels), None if lad.rungs is None else tuple(lad.rungs),
                            tuple((d.upper, d.lower, TWO_PI * d.rate_hz) for d in lad.decays),
                            tuple((d.level, TWO_PI * d.rate_hz) for d in lad.dephasing))

    @cached_property
    def drive_fields(self) -> list[DriveField]:
        return [d.build() for d in self.drives]

    @cached_property
    def vapor_config(self) -> VaporConfig | None:
        if self.vapor is None:
            return None
        v = self.vapor
        return VaporConfig.for_species(load_species(self.species), temperature=v.temperature_k,
                                       n_classes=v.n_classes, span=v.span, method=v.method,
                                       counter_propagating=v.counter_propagating)

    @property
    def exact(self) -> bool:
        return True if self.vapor is None else self.vapor.exact

    def dipole(self) -> float:
        """Estimate-block dipole in C m."""
        est = self.estimate
        if est is None:
            raise ConfigurationError("scenario has no estimate block")
        if est.dipole_ea0 is not None:
            return est.dipole_ea0 * E_A0
        return lookup_dipole(self.species, est.transition.lower, est.transition.upper).d


def _problems(exc: ValidationError):
    out = []
    for err in exc.errors():
        loc = [str(x) for x in err["loc"]]
        if err["type"] == "missing_unit_suffix":
            loc.append(err["ctx"]["key"])
        path = ".".join(loc) or "<root>"
        out.append((path, err["msg"]))
    return out


def parse_scenario(text: str) -> Scenario:
    """Validate scenario text (YAML or JSON) into a :class:`Scenario`.

    Raises :class:`ConfigurationError` listing every problem as (path, reason).
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"scenario is not valid YAML: {exc}",
                                 [("<root>", str(exc))]) from None
    if not isinstance(raw, dict):
        raise ConfigurationError("scenario must be a mapping", [("<root>", "not a mapping")])
    try:
        return Scenario.model_validate(raw)
    except ValidationError as exc:
        problems = _problems(exc)
        summary = "; ".join(f"{p}: {r}" for p, r in problems)
        raise ConfigurationError(f"invalid scenario: {summary}", problems) from None


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario {path}: {exc}") from None
    return parse_scenario(text)


def dump_scenario(scenario: Scenario) -> str:
    """Canonical YAML: every field present, declaration order, repr floats."""
    data = scenario.model_dump(mode="json")
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False, allow_unicode=True)


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("rydrx") / "data" / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".scenario")}


def phase_grid(block: PhaseBlock):
    """Optical phases (rad) and delays (m, or None) of a phase block."""
    from .phase import delay_to_phase
    if block.delay_stop_m is None:
        return np.linspace(0.0, TWO_PI, block.points, endpoint=False), None
    delays = np.linspace(0.0, block.delay_stop_m, block.points)
    omega = TWO_PI * block.rf_frequency_hz
    return np.array([delay_to_phase(L, omega) / 2 for L in delays]), delays

