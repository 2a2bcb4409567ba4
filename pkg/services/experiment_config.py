"""
Experiment Config - Validated JSON configuration for runs and sweeps

Fields marked cosmetic (json_schema_extra={"cosmetic": True}) do not affect
the physics and are left out of the config digest.
"""

import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from services.digest import canonical_digest
from services.errors import ConfigError
from services.green_kernel import ScattererSet
from services.rect_basis import BilliardConfig
from services.secular_solver import EnergyWindow, IndexWindow, SolverSettings, Window
from services.spectral_stats import DEFAULT_L_VALUES

logger = logging.getLogger(__name__)

COSMETIC = {"cosmetic": True}


class WindowConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["index", "energy"] = "index"
    lo: float
    hi: float

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.kind == "index":
            if self.lo != int(self.lo) or self.hi != int(self.hi):
                raise ValueError("index window bounds must be integers")
            if not 1 <= self.lo <= self.hi:
                raise ValueError("index window must satisfy 1 <= lo <= hi")
        elif not self.lo < self.hi:
            raise ValueError("energy window must satisfy lo < hi")
        return self

    def to_window(self) -> Window:
        if self.kind == "index":
            return IndexWindow(int(self.lo), int(self.hi))
        return EnergyWindow(self.lo, self.hi)


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    energy_cutoff: Optional[float] = Field(None, gt=0, description="E_cut; default cutoff_factor x window top")
    cutoff_factor: float = Field(8.0, gt=1)
    safety_fraction: float = Field(0.5, gt=0, lt=1)
    tol_omega: float = Field(1e-10, gt=0, description="Root tolerance in mean spacings")
    exclusion_tolerance: float = Field(1e-8, gt=0, description="Pole exclusion in mean spacings")
    tail_correction: bool = True
    workers: Optional[int] = Field(None, ge=1, json_schema_extra=COSMETIC)

    def settings(self) -> SolverSettings:
        return SolverSettings(
            tol_omega=self.tol_omega,
            exclusion_tolerance=self.exclusion_tolerance,
            safety_fraction=self.safety_fraction,
            tail_correction=self.tail_correction,
            workers=self.workers,
        )


class StatsConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    bins: int = Field(30, ge=1)
    s_max: float = Field(3.0, gt=0)
    L_grid: Tuple[float, ...] = Field(DEFAULT_L_VALUES, min_length=1)
    window_step: float = Field(0.25, gt=0, description="Window step as a fraction of L")

    @field_validator("L_grid")
    @classmethod
    def _positive_lengths(cls, value):
        if any(L <= 0 for L in value):
            raise ValueError("L_grid values must be positive")
        return tuple(sorted(value))


class SweepConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    inverse_strengths: Tuple[float, ...] = ()
    scatterer_counts: Tuple[int, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.inverse_strengths and not self.scatterer_counts


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    billiard: BilliardConfig
    scatterers: Optional[ScattererSet] = None
    window: WindowConfig
    solver: SolverConfig = SolverConfig()
    stats: StatsConfig = StatsConfig()
    sweep: SweepConfig = SweepConfig()
    seed: int = 0
    label: str = Field("", json_schema_extra=COSMETIC)
    output_dir: str = Field("results", json_schema_extra=COSMETIC)

    @model_validator(mode="after")
    def _check_nested(self):
        if self.scatterers is not None:
            for k, (x, y) in enumerate(self.scatterers.positions):
                if not self.billiard.contains(x, y, strict=True):
                    raise ValueError(f"scatterer {k} at ({x}, {y}) is not strictly inside the rectangle")
        if self.sweep.scatterer_counts:
            available = 0 if self.scatterers is None else len(self.scatterers)
            bad = [n for n in self.sweep.scatterer_counts if not 1 <= n <= available]
            if bad:
                raise ValueError(f"sweep scatterer_counts {bad} outside 1..{available}")
        if self.sweep.inverse_strengths and self.scatterers is None:
            raise ValueError("sweep over inverse_strengths needs scatterers")
        return self

    @property
    def scatterer_count(self) -> int:
        return 0 if self.scatterers is None else len(self.scatterers)

    def cells(self) -> List[Tuple[str, "ExperimentConfig"]]:
        """Sweep grid as (cell name, single-run config); one cell when the sweep is empty"""
        if self.sweep.empty:
            return [(self.label or "single", self)]
        counts = self.sweep.scatterer_counts or (self.scatterer_count,)
        strengths = self.sweep.inverse_strengths or (None,)
        cells = []
        for n in counts:
            for inverse in strengths:
                name = f"N{n}" + ("" if inverse is None else f"_v{inverse:g}")
                cell = self.model_copy(
                    update={
                        "scatterers": self.scatterers.first(n, inverse),
                        "sweep": SweepConfig(),
                        "label": name,
                    }
                )
                cells.append((name, cell))
        return cells


def _is_cosmetic(info) -> bool:
    extra = info.json_schema_extra
    return isinstance(extra, dict) and bool(extra.get("cosmetic"))


def _plain(value):
    if isinstance(value, BaseModel):
        return physics_payload(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def physics_payload(model: BaseModel) -> dict:
    payload = {}
    for name, info in type(model).model_fields.items():
        if _is_cosmetic(info):
            continue
        payload[info.alias or name] = _plain(getattr(model, name))
    return payload


def config_digest(config: ExperimentConfig) -> str:
    return canonical_digest(physics_payload(config))


def serialize(config: ExperimentConfig) -> str:
    return config.model_dump_json(by_alias=True, indent=2)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from e
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigError(f"{source}: invalid configuration: {problems}") from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    config = parse_config(text, str(path))
    logger.info(f"Loaded config {path} (digest {config_digest(config)[:12]})")
    return config
