"""
Rect Basis - Unperturbed eigenbasis of the rectangular Dirichlet billiard

Levels are enumerated by energy cutoff and kept in strictly ascending order;
eigenfunction values at scatterer positions are cached on the table.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from services.errors import DegenerateLevelError, DomainError

logger = logging.getLogger(__name__)

# Two levels are degenerate when |E_a - E_b| < TIE_TOLERANCE * max(E_a, E_b)
TIE_TOLERANCE = 1e-9


class BilliardConfig(BaseModel):
    """Geometry and masses fixing the unperturbed problem"""

    model_config = ConfigDict(
        frozen=True, extra="forbid", populate_by_name=True, allow_inf_nan=False
    )

    lx: float = Field(..., gt=0, description="Side length along x")
    ly: float = Field(..., gt=0, description="Side length along y")
    mass: float = Field(..., gt=0, description="Particle mass M")
    lam: float = Field(..., gt=0, alias="lambda", description="Scale mass Lambda")

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def perimeter(self) -> float:
        return 2.0 * (self.lx + self.ly)

    def contains(self, x: float, y: float, strict: bool = False) -> bool:
        if strict:
            return 0.0 < x < self.lx and 0.0 < y < self.ly
        return 0.0 <= x <= self.lx and 0.0 <= y <= self.ly


@dataclass(frozen=True)
class BasisLevel:
    nx: int
    ny: int
    energy: float


@dataclass(frozen=True, eq=False)
class BasisTable:
    """Energy-ordered unperturbed levels up to energy_cutoff.

    The arrays are parallel: level i has quantum numbers (nx[i], ny[i]) and
    energy energies[i]. phi_cache[i, k] is phi_i at positions[k]; it has zero
    columns until the table is bound to a scatterer set.
    """

    config: BilliardConfig
    nx: np.ndarray
    ny: np.ndarray
    energies: np.ndarray
    energy_cutoff: float
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    phi_cache: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.phi_cache is None:
            object.__setattr__(self, "phi_cache", np.zeros((len(self.energies), 0)))
        for array in (self.nx, self.ny, self.energies, self.positions, self.phi_cache):
            array.setflags(write=False)

    def __len__(self) -> int:
        return len(self.energies)

    @property
    def levels(self) -> List[BasisLevel]:
        return [
            BasisLevel(int(a), int(b), float(e))
            for a, b, e in zip(self.nx, self.ny, self.energies)
        ]

    @property
    def density(self) -> float:
        return mean_level_density(self.config)

    @property
    def mean_spacing(self) -> float:
        return 1.0 / self.density

    @property
    def scatterer_count(self) -> int:
        return self.phi_cache.shape[1]

    def level(self, index: int) -> BasisLevel:
        return BasisLevel(int(self.nx[index]), int(self.ny[index]), float(self.energies[index]))

    def count_below(self, energy: float) -> int:
        """Unperturbed staircase: number of levels with E <= energy"""
        return int(np.searchsorted(self.energies, energy, side="right"))

    def bind(self, positions: Sequence[Tuple[float, float]]) -> "BasisTable":
        """Return a copy whose phi_cache holds the eigenfunctions at positions"""
        points = np.asarray(positions, dtype=float).reshape(-1, 2)
        for x, y in points:
            if not self.config.contains(x, y):
                raise DomainError(f"Point ({x}, {y}) lies outside the rectangle")
        if len(points) == len(self.positions) and np.array_equal(points, self.positions):
            return self
        amplitude = math.sqrt(4.0 / self.config.area)
        phi = (
            amplitude
            * np.sin(np.pi * np.outer(self.nx, points[:, 0] / self.config.lx))
            * np.sin(np.pi * np.outer(self.ny, points[:, 1] / self.config.ly))
        )
        return replace(self, positions=points, phi_cache=phi)


def level_energy(config: BilliardConfig, nx, ny):
    """Closed-form E_{nx,ny}; works elementwise on arrays"""
    kx = np.asarray(nx) * math.pi / config.lx
    ky = np.asarray(ny) * math.pi / config.ly
    return (kx * kx + ky * ky) / (2.0 * config.mass)


def mean_level_density(config: BilliardConfig) -> float:
    return config.mass * config.area / (2.0 * math.pi)


def weyl_count(config: BilliardConfig, energy: float) -> float:
    """Smooth level count with the Dirichlet perimeter correction"""
    if energy <= 0:
        return 0.0
    k = math.sqrt(2.0 * config.mass * energy)
    return mean_level_density(config) * energy - config.perimeter * k / (4.0 * math.pi)


def eigenfunction_value(config: BilliardConfig, level: BasisLevel, point: Tuple[float, float]) -> float:
    x, y = point
    if not config.contains(x, y):
        raise DomainError(
            f"Point ({x}, {y}) lies outside the rectangle [0, {config.lx}] x [0, {config.ly}]"
        )
    return (
        math.sqrt(4.0 / config.area)
        * math.sin(level.nx * math.pi * x / config.lx)
        * math.sin(level.ny * math.pi * y / config.ly)
    )


def enumerate_basis(
    config: BilliardConfig,
    energy_cutoff: float,
    tie_tolerance: float = TIE_TOLERANCE,
) -> BasisTable:
    """
    Enumerate every level with E <= energy_cutoff in ascending order

    Args:
        config: Billiard geometry and masses
        energy_cutoff: Largest retained energy
        tie_tolerance: Relative gap below which two levels count as degenerate

    Returns:
        Unbound BasisTable (no scatterer positions cached yet)
    """
    ground = float(level_energy(config, 1, 1))
    if not energy_cutoff > ground:
        raise DomainError(
            f"Energy cutoff {energy_cutoff!r} does not exceed the ground level E_11={ground!r}"
        )

    k_max = math.sqrt(2.0 * config.mass * energy_cutoff)
    nx_max = math.ceil(config.lx * k_max / math.pi)
    ny_max = math.ceil(config.ly * k_max / math.pi)

    grid_x, grid_y = np.meshgrid(
        np.arange(1, nx_max + 1), np.arange(1, ny_max + 1), indexing="ij"
    )
    grid_x = grid_x.ravel()
    grid_y = grid_y.ravel()
    grid_e = level_energy(config, grid_x, grid_y)

    keep = grid_e <= energy_cutoff
    grid_x, grid_y, grid_e = grid_x[keep], grid_y[keep], grid_e[keep]

    order = np.lexsort((grid_y, grid_x, grid_e))
    nx, ny, energies = grid_x[order], grid_y[order], grid_e[order]

    gaps = np.diff(energies)
    ties = np.nonzero(gaps < tie_tolerance * energies[1:])[0]
    if ties.size:
        i = int(ties[0])
        raise DegenerateLevelError(
            (int(nx[i]), int(ny[i])), (int(nx[i + 1]), int(ny[i + 1])), float(gaps[i])
        )

    logger.info(
        f"Enumerated {len(energies)} levels up to E_cut={energy_cutoff:g} "
        f"(lattice {nx_max}x{ny_max})"
    )
    return BasisTable(
        config=config,
        nx=nx.astype(np.int64),
        ny=ny.astype(np.int64),
        energies=energies.astype(float),
        energy_cutoff=float(energy_cutoff),
    )
