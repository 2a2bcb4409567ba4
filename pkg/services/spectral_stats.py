"""
Spectral Stats - Nearest-neighbour spacing distribution and spectral rigidity

Spectra are unfolded by the constant mean level density and renormalised to
unit mean spacing. Delta_3(L) is the window average of the least-squares
deviation of the staircase from a straight line; since the staircase is
piecewise constant every integral reduces to a finite sum over the levels in
the window.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from services.errors import DomainError, StatsError

logger = logging.getLogger(__name__)

KINDS = ("poisson", "goe")
GOE_RIGIDITY_OFFSET = 0.0687
DEFAULT_L_VALUES = tuple(float(L) for L in range(1, 21))


@dataclass(frozen=True, eq=False)
class UnfoldedSpectrum:
    values: np.ndarray
    indices: np.ndarray
    energies: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def span(self) -> float:
        return float(self.values[-1] - self.values[0])

    @property
    def mean_spacing(self) -> float:
        return float(np.diff(self.values).mean())


@dataclass(frozen=True, eq=False)
class SpacingHistogram:
    bin_edges: np.ndarray
    densities: np.ndarray
    sample_count: int
    overflow: int
    spacings: np.ndarray

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def mass(self) -> float:
        return float(np.sum(self.densities * np.diff(self.bin_edges)))

    @property
    def overflow_fraction(self) -> float:
        return self.overflow / self.sample_count


@dataclass(frozen=True, eq=False)
class RigidityCurve:
    L_values: np.ndarray
    delta3: np.ndarray
    window_count: np.ndarray


@dataclass(frozen=True, eq=False)
class StatisticsReport:
    unfolded: UnfoldedSpectrum
    histogram: SpacingHistogram
    rigidity: RigidityCurve
    distances: Dict[str, float] = field(default_factory=dict)


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise DomainError(f"Unknown reference kind {kind!r}; expected one of {KINDS}")


def unfold_levels(
    omegas: Sequence[float], density: float, indices: Optional[Sequence[int]] = None
) -> UnfoldedSpectrum:
    energies = np.asarray(omegas, dtype=float)
    if len(energies) < 2:
        raise StatsError(f"Unfolding needs at least 2 levels, got {len(energies)}")
    if not density > 0:
        raise DomainError(f"Mean level density must be positive, got {density!r}")
    if np.any(np.diff(energies) <= 0):
        raise StatsError("Spectrum is not strictly ascending")

    staircase = density * energies
    # affine rescale: first level fixed, mean spacing exactly 1
    mean = (staircase[-1] - staircase[0]) / (len(staircase) - 1)
    values = staircase[0] + (staircase - staircase[0]) / mean
    if indices is None:
        indices = np.arange(1, len(energies) + 1)
    return UnfoldedSpectrum(
        values=values, indices=np.asarray(indices, dtype=np.int64), energies=energies
    )


def unfold(spectrum, density: float) -> UnfoldedSpectrum:
    """Unfold a PerturbedSpectrum with the constant density rho_av"""
    return unfold_levels(spectrum.omegas, density, spectrum.indices)


def spacing_histogram(u: UnfoldedSpectrum, bins: int = 30, s_max: float = 3.0) -> SpacingHistogram:
    """
    Density-normalised histogram of nearest-neighbour spacings on [0, s_max]

    Densities are normalised by the total spacing count, so the histogram mass
    is 1 - overflow_fraction; spacings above s_max are kept in spacings.
    """
    if bins < 1:
        raise DomainError(f"bins must be >= 1, got {bins}")
    if not s_max > 0:
        raise DomainError(f"s_max must be positive, got {s_max!r}")
    if len(u) < 2:
        raise StatsError(f"Spacing histogram needs at least 2 levels, got {len(u)}")

    spacings = np.sort(np.diff(u.values))
    counts, edges = np.histogram(spacings, bins=bins, range=(0.0, s_max))
    total = len(spacings)
    overflow = int(np.count_nonzero(spacings > s_max))
    densities = counts / (total * np.diff(edges))
    if overflow:
        logger.info(f"{overflow} of {total} spacings exceed s_max={s_max:g}")
    return SpacingHistogram(
        bin_edges=edges, densities=densities, sample_count=total, overflow=overflow, spacings=spacings
    )


def reference_pofs(kind: str, s):
    _check_kind(kind)
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("Spacings must be nonnegative")
    if kind == "poisson":
        return np.exp(-s)
    return 0.5 * math.pi * s * np.exp(-0.25 * math.pi * s * s)


def reference_cdf(kind: str, s):
    _check_kind(kind)
    s = np.clip(np.asarray(s, dtype=float), 0.0, None)
    if kind == "poisson":
        return -np.expm1(-s)
    return -np.expm1(-0.25 * math.pi * s * s)


def distribution_distance(h: SpacingHistogram, kind: str) -> float:
    """Kolmogorov-Smirnov distance of the raw spacings to the reference CDF"""
    _check_kind(kind)
    result = stats.kstest(h.spacings, lambda s: reference_cdf(kind, s))
    return float(result.statistic)


def _window_delta3(offsets: np.ndarray, L: float) -> float:
    """Least-squares deviation of the staircase over [0, L]; offsets are level positions inside"""
    if len(offsets) == 0:
        return 0.0
    edges = np.concatenate(([0.0], offsets, [L]))
    steps = np.arange(len(offsets) + 1, dtype=float)
    widths = np.diff(edges)

    first = np.dot(steps, widths)
    second = np.dot(steps * steps, widths)
    moment = 0.5 * np.dot(steps, edges[1:] ** 2 - edges[:-1] ** 2) - 0.5 * L * first
    value = (second - first * first / L - moment * moment * 12.0 / L**3) / L
    return max(0.0, float(value))


def delta3(u: UnfoldedSpectrum, L: float, window_step: Optional[float] = None) -> Tuple[float, int]:
    """
    Spectral rigidity averaged over sliding windows of length L

    Args:
        u: Unfolded spectrum
        L: Window length in unfolded units
        window_step: Distance between window starts (default L/4)

    Returns:
        (mean Delta_3, number of windows)
    """
    if not L > 0:
        raise DomainError(f"L must be positive, got {L!r}")
    step = 0.25 * L if window_step is None else window_step
    if not step > 0:
        raise DomainError(f"window_step must be positive, got {step!r}")
    if u.span < L:
        raise StatsError(f"Spectrum spans {u.span:g} unfolded units, shorter than L={L:g}")

    values = u.values
    starts = values[0] + step * np.arange(int(math.floor((u.span - L) / step)) + 1)
    lo = np.searchsorted(values, starts, side="right")
    hi = np.searchsorted(values, starts + L, side="left")
    total = 0.0
    for start, i, j in zip(starts, lo, hi):
        total += _window_delta3(values[i:j] - start, L)
    return total / len(starts), len(starts)


def rigidity_curve(
    u: UnfoldedSpectrum, L_values: Sequence[float] = DEFAULT_L_VALUES, step_fraction: float = 0.25
) -> RigidityCurve:
    L_values = np.asarray(sorted(L_values), dtype=float)
    results = [delta3(u, L, step_fraction * L) for L in L_values]
    return RigidityCurve(
        L_values=L_values,
        delta3=np.array([value for value, _ in results], dtype=float),
        window_count=np.array([count for _, count in results], dtype=np.int64),
    )


def reference_delta3(kind: str, L):
    _check_kind(kind)
    L = np.asarray(L, dtype=float)
    if np.any(L <= 0):
        raise DomainError("L must be positive")
    if kind == "poisson":
        return L / 15.0
    return (np.log(L) - GOE_RIGIDITY_OFFSET) / math.pi**2


def poisson_levels(count: int, seed: int) -> np.ndarray:
    """Seeded uncorrelated spectrum with unit mean spacing"""
    rng = np.random.default_rng(seed)
    return np.cumsum(rng.exponential(1.0, size=count))


def analyse(
    spectrum,
    density: float,
    bins: int = 30,
    s_max: float = 3.0,
    L_values: Sequence[float] = DEFAULT_L_VALUES,
    step_fraction: float = 0.25,
) -> StatisticsReport:
    unfolded = unfold(spectrum, density)
    histogram = spacing_histogram(unfolded, bins, s_max)
    usable = [L for L in L_values if L <= unfolded.span]
    if len(usable) < len(L_values):
        logger.warning(f"Dropped L values above the spectrum span {unfolded.span:g}")
    rigidity = rigidity_curve(unfolded, usable, step_fraction)
    distances = {kind: distribution_distance(histogram, kind) for kind in KINDS}
    logger.info(
        f"Statistics over {len(unfolded)} levels: KS(poisson)={distances['poisson']:.4f}, "
        f"KS(goe)={distances['goe']:.4f}"
    )
    return StatisticsReport(unfolded=unfolded, histogram=histogram, rigidity=rigidity, distances=distances)
