"""
Coupling Predictor - Semi-quantitative strong-coupling band of a point scatterer

A scatterer with inverse strength v^-1 mixes the unperturbed states mainly
where v^-1 lies within half a band width of the centre curve
g(omega) = (M/2pi) ln(omega/Lambda). The width pi*M/2 does not depend on energy,
while the centre drifts logarithmically, so every scatterer decouples at high
enough energy.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

from services.errors import DomainError
from services.green_kernel import ScattererSet
from services.rect_basis import BilliardConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CouplingBand:
    mass: float
    lam: float

    def __post_init__(self):
        if not (self.mass > 0 and self.lam > 0):
            raise DomainError(f"mass and lambda must be positive, got M={self.mass}, Lambda={self.lam}")

    @classmethod
    def from_config(cls, config: BilliardConfig) -> "CouplingBand":
        return cls(mass=config.mass, lam=config.lam)

    @property
    def width(self) -> float:
        return math.pi * self.mass / 2.0

    @property
    def half_width(self) -> float:
        return self.width / 2.0

    def center(self, omega: float) -> float:
        return g_of_omega(self, omega)


@dataclass(frozen=True)
class ScattererVerdict:
    index: int
    inverse_strength: float
    strong_lo: bool
    strong_hi: bool
    margin_lo: float
    margin_hi: float
    coverage: float


def g_of_omega(band: CouplingBand, omega: float) -> float:
    if not omega > 0:
        raise DomainError(f"omega must be positive, got {omega!r}")
    return band.mass / (2.0 * math.pi) * math.log(omega / band.lam)


def is_strong(band: CouplingBand, inverse_strength: float, omega: float) -> Tuple[bool, float]:
    """
    Band test |v^-1 - g(omega)| <= Delta/2 as a sharp inequality

    Returns:
        (strong, margin) with margin = Delta/2 - |v^-1 - g(omega)|, positive inside
    """
    margin = band.half_width - abs(inverse_strength - g_of_omega(band, omega))
    return margin >= 0.0, margin


def crossover_energies(band: CouplingBand, inverse_strength: float) -> Tuple[float, float]:
    scale = 2.0 * math.pi / band.mass
    return (
        band.lam * math.exp(scale * (inverse_strength - band.half_width)),
        band.lam * math.exp(scale * (inverse_strength + band.half_width)),
    )


def band_coverage(
    band: CouplingBand, inverse_strength: float, omega_lo: float, omega_hi: float
) -> float:
    """Fraction of [omega_lo, omega_hi], measured in ln omega, inside the strong band"""
    if not 0 < omega_lo <= omega_hi:
        raise DomainError(f"Need 0 < omega_lo <= omega_hi, got ({omega_lo!r}, {omega_hi!r})")
    if omega_lo == omega_hi:
        return 1.0 if is_strong(band, inverse_strength, omega_lo)[0] else 0.0
    edge_lo, edge_hi = crossover_energies(band, inverse_strength)
    lo, hi = math.log(omega_lo), math.log(omega_hi)
    overlap = min(hi, math.log(edge_hi)) - max(lo, math.log(edge_lo))
    return max(0.0, overlap) / (hi - lo)


def scatterer_verdicts(
    band: CouplingBand, scatterers: ScattererSet, omega_lo: float, omega_hi: float
) -> List[ScattererVerdict]:
    verdicts = []
    for k, inverse in enumerate(scatterers.inverse_strengths):
        strong_lo, margin_lo = is_strong(band, inverse, omega_lo)
        strong_hi, margin_hi = is_strong(band, inverse, omega_hi)
        verdicts.append(
            ScattererVerdict(
                index=k,
                inverse_strength=inverse,
                strong_lo=strong_lo,
                strong_hi=strong_hi,
                margin_lo=margin_lo,
                margin_hi=margin_hi,
                coverage=band_coverage(band, inverse, omega_lo, omega_hi),
            )
        )
    weak = [v.index for v in verdicts if v.coverage == 0.0]
    if weak:
        logger.info(f"Scatterers {weak} are weakly coupled over [{omega_lo:g}, {omega_hi:g}]")
    return verdicts
