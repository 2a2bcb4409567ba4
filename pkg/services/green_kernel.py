"""
Green Kernel - Regularized Green's-function matrix G(omega) at the scatterers

Diagonal entries carry the subtraction E_n/(E_n^2 + Lambda^2) that makes the
2D sum converge; off-diagonal entries are the bare Green's function between
two scatterer positions. Sums run over the truncated basis; the diagonal tail
above the cutoff is replaced by its mean-field integral.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from services.errors import DomainError, PoleProximityError, TruncationUnsafeError
from services.rect_basis import BasisTable, BilliardConfig

logger = logging.getLogger(__name__)


class ScattererSet(BaseModel):
    """Positions and inverse strengths v_k^-1 of the point scatterers (diagonal A)"""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    positions: Tuple[Tuple[float, float], ...] = Field(..., min_length=1)
    inverse_strengths: Tuple[float, ...] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _check_rows(self):
        if len(self.positions) != len(self.inverse_strengths):
            raise ValueError(
                f"{len(self.positions)} positions but {len(self.inverse_strengths)} inverse strengths"
            )
        seen = {}
        for k, point in enumerate(self.positions):
            if point in seen:
                raise ValueError(f"positions {seen[point]} and {k} coincide at {point}")
            seen[point] = k
        return self

    def __len__(self) -> int:
        return len(self.positions)

    def check_interior(self, config: BilliardConfig) -> None:
        for k, (x, y) in enumerate(self.positions):
            if not config.contains(x, y, strict=True):
                raise DomainError(
                    f"Scatterer {k} at ({x}, {y}) is not strictly inside the rectangle"
                )

    def first(self, count: int, inverse_strength: Optional[float] = None) -> "ScattererSet":
        """The first count scatterers, optionally with a common inverse strength"""
        if not 1 <= count <= len(self):
            raise DomainError(f"Cannot take {count} of {len(self)} scatterers")
        strengths = (
            self.inverse_strengths[:count]
            if inverse_strength is None
            else (float(inverse_strength),) * count
        )
        return ScattererSet(positions=self.positions[:count], inverse_strengths=strengths)


@dataclass(frozen=True)
class KernelSettings:
    safety_fraction: float = 0.5
    # pole exclusion, in units of the mean level spacing
    exclusion_tolerance: float = 1e-8
    tail_correction: bool = True


@dataclass(frozen=True, eq=False)
class GreenEvaluation:
    omega: float
    matrix: np.ndarray
    truncation_error_bound: float


class GreenKernel:
    """Evaluates G(omega) for one basis bound to one scatterer set"""

    def __init__(
        self,
        basis: BasisTable,
        scatterers: Optional[ScattererSet] = None,
        settings: Optional[KernelSettings] = None,
    ):
        if scatterers is not None:
            scatterers.check_interior(basis.config)
            basis = basis.bind(scatterers.positions)
        if basis.scatterer_count == 0:
            raise DomainError("Basis table is not bound to any scatterer positions")

        self.basis = basis
        self.settings = settings or KernelSettings()
        self.size = basis.scatterer_count

        config = basis.config
        energies = basis.energies
        self._energies = energies
        self._phi = basis.phi_cache
        self._lam = config.lam
        self._cutoff = basis.energy_cutoff
        self._tail_weight = basis.density / config.area
        self._fluctuation = 3.0 / math.sqrt(basis.density * basis.energy_cutoff)
        self._exclusion = self.settings.exclusion_tolerance * basis.mean_spacing
        self._omega_limit = self.settings.safety_fraction * basis.energy_cutoff

        # omega-independent part of the diagonal subtraction
        subtraction = energies / (energies * energies + self._lam * self._lam)
        self._regularization = (self._phi * self._phi * subtraction[:, None]).sum(axis=0)

    @property
    def exclusion(self) -> float:
        return self._exclusion

    @property
    def omega_limit(self) -> float:
        return self._omega_limit

    def check(self, omega: float) -> None:
        if omega > self._omega_limit:
            raise TruncationUnsafeError(omega, self._omega_limit)
        energies = self._energies
        idx = int(np.searchsorted(energies, omega))
        for j in (idx - 1, idx):
            if 0 <= j < len(energies):
                distance = abs(omega - energies[j])
                if distance < self._exclusion:
                    raise PoleProximityError(j, omega, distance)

    def tail(self, omega):
        """Mean-field diagonal tail: rho/S * integral_{E_cut}^inf (1/(w-E) + E/(E^2+L^2)) dE"""
        if not self.settings.tail_correction:
            return 0.0
        cutoff = self._cutoff
        if isinstance(omega, complex):
            log_gap = np.log(complex(cutoff) - omega)
        else:
            log_gap = math.log(cutoff - omega)
        return self._tail_weight * (log_gap - 0.5 * math.log(cutoff * cutoff + self._lam * self._lam))

    def truncation_bound(self, omega: float) -> float:
        drift = abs(math.log1p(-omega / self._cutoff))
        return self._tail_weight * (drift + self._fluctuation)

    def diag(self, k: int, omega: float) -> float:
        self.check(omega)
        phi_k = self._phi[:, k]
        value = np.dot(phi_k * phi_k, 1.0 / (omega - self._energies))
        return float(value + self._regularization[k] + self.tail(omega))

    def offdiag(self, k: int, l: int, omega: float) -> float:
        if k == l:
            raise DomainError(f"offdiag requires distinct scatterers, got k=l={k}")
        self.check(omega)
        value = np.dot(self._phi[:, k] * self._phi[:, l], 1.0 / (omega - self._energies))
        return float(value)

    def matrix(self, omega: float) -> np.ndarray:
        self.check(omega)
        return self._assemble(omega, 1.0 / (omega - self._energies))

    def evaluate(self, omega: float) -> GreenEvaluation:
        return GreenEvaluation(
            omega=float(omega),
            matrix=self.matrix(omega),
            truncation_error_bound=self.truncation_bound(omega),
        )

    def imaginary_matrix(self, sign: int = 1) -> np.ndarray:
        """G(+-i Lambda); the only complex energies the kernel accepts"""
        if sign not in (1, -1):
            raise DomainError(f"sign must be +1 or -1, got {sign}")
        omega = complex(0.0, sign * self._lam)
        return self._assemble(omega, 1.0 / (omega - self._energies))

    def _assemble(self, omega, resolvent: np.ndarray) -> np.ndarray:
        full = self._phi.T @ (self._phi * resolvent[:, None])
        # one value per unordered pair keeps the matrix exactly symmetric
        upper = np.triu(full)
        matrix = upper + np.triu(full, 1).T
        matrix[np.diag_indices(self.size)] += self._regularization + self.tail(omega)
        return matrix


def green_diag(
    basis: BasisTable, k: int, omega: float, settings: Optional[KernelSettings] = None
) -> float:
    return GreenKernel(basis, settings=settings).diag(k, omega)


def green_offdiag(
    basis: BasisTable, k: int, l: int, omega: float, settings: Optional[KernelSettings] = None
) -> float:
    return GreenKernel(basis, settings=settings).offdiag(k, l, omega)


def green_matrix(
    basis: BasisTable,
    scatterers: ScattererSet,
    omega: float,
    settings: Optional[KernelSettings] = None,
) -> GreenEvaluation:
    return GreenKernel(basis, scatterers, settings).evaluate(omega)


def green_matrix_imaginary(
    basis: BasisTable,
    scatterers: ScattererSet,
    sign: int = 1,
    settings: Optional[KernelSettings] = None,
) -> np.ndarray:
    return GreenKernel(basis, scatterers, settings).imaginary_matrix(sign)
