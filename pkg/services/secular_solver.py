"""
Secular Solver - Perturbed eigenvalues as roots of det(diag(v^-1) - G(omega)) = 0

Between two consecutive unperturbed levels the real symmetric matrix
D(omega) = diag(v_k^-1) - G(omega) is nondecreasing (dD/domega is a Gram
matrix), so every sorted eigenvalue of D is a monotone branch and each root is
the zero crossing of one branch. Roots are bracketed per interval on a grid,
bisected to tol_omega and finished with one secant step.

Counting: with nu(omega) the number of negative eigenvalues of D(omega), the
number of perturbed levels at or below omega is
    N + #{unperturbed levels <= omega} - nu(omega).
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from dotenv import load_dotenv

from services.digest import canonical_digest
from services.errors import (
    BracketingError,
    DegenerateRootError,
    DiagnosticError,
    DomainError,
    TruncationUnsafeError,
)
from services.green_kernel import GreenKernel, KernelSettings, ScattererSet
from services.rect_basis import BasisTable, BilliardConfig, enumerate_basis

load_dotenv()

logger = logging.getLogger(__name__)

POLE_ADJACENT = "pole_adjacent"
DECOUPLED = "decoupled"
AMBIGUOUS = "ambiguous"

INDEX_CONVENTION = (
    "1-based index over the perturbed spectrum counted from its bottom, "
    "bound states below E_1 included; host_level m means E_m < omega < E_m+1 "
    "(m = 0 for omega < E_1)"
)

# |phi_m(x_k)| below this fraction of sqrt(4/S) at every scatterer: level m is decoupled
DECOUPLED_THRESHOLD = 1e-12


@dataclass(frozen=True)
class SolverSettings:
    # tolerances are in units of the mean level spacing
    tol_omega: float = 1e-10
    exclusion_tolerance: float = 1e-8
    safety_fraction: float = 0.5
    tail_correction: bool = True
    grid_per_scatterer: int = 4
    refine_cap: int = 6
    max_bisection: int = 200
    null_tolerance: float = 1e-6
    workers: Optional[int] = None

    def kernel_settings(self) -> KernelSettings:
        return KernelSettings(
            safety_fraction=self.safety_fraction,
            exclusion_tolerance=self.exclusion_tolerance,
            tail_correction=self.tail_correction,
        )

    def physics_fields(self) -> dict:
        fields = asdict(self)
        fields.pop("workers")
        return fields


@dataclass(frozen=True)
class IndexWindow:
    lo: int
    hi: int

    def __post_init__(self):
        if not 1 <= self.lo <= self.hi:
            raise DomainError(f"Index window must satisfy 1 <= lo <= hi, got ({self.lo}, {self.hi})")


@dataclass(frozen=True)
class EnergyWindow:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"Energy window must satisfy lo < hi, got ({self.lo}, {self.hi})")


Window = Union[IndexWindow, EnergyWindow]


@dataclass(frozen=True, eq=False)
class SecularProblem:
    basis: BasisTable
    scatterers: ScattererSet
    window: Window
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if isinstance(self.window, EnergyWindow):
            limit = self.settings.safety_fraction * self.basis.energy_cutoff
            if self.window.hi > limit:
                raise TruncationUnsafeError(self.window.hi, limit)

    @property
    def size(self) -> int:
        return len(self.scatterers)

    def digest(self) -> str:
        return canonical_digest({
            "billiard": self.basis.config.model_dump(by_alias=True),
            "scatterers": self.scatterers.model_dump(),
            "energy_cutoff": self.basis.energy_cutoff,
            "solver": self.settings.physics_fields(),
        })


@dataclass(frozen=True, eq=False)
class PerturbedSpectrum:
    omegas: np.ndarray
    brackets: np.ndarray
    residuals: np.ndarray
    indices: np.ndarray
    host_levels: np.ndarray
    flags: Tuple[str, ...]
    config_digest: str
    index_convention: str = INDEX_CONVENTION

    def __len__(self) -> int:
        return len(self.omegas)

    def flagged(self, flag: str) -> int:
        return sum(1 for f in self.flags if flag in f.split("|"))


@dataclass(frozen=True, eq=False)
class EigenfunctionExpansion:
    omega: float
    coefficients: np.ndarray
    norm: float
    weights: np.ndarray


@dataclass
class _Root:
    omega: float
    host: int
    bracket: Tuple[float, float]
    residual: float
    flags: List[str] = field(default_factory=list)


def resolve_workers(requested: Optional[int] = None) -> int:
    cap = os.getenv("SPECTRA_THREADS")
    workers = requested if requested is not None else (int(cap) if cap else 1)
    if cap:
        workers = min(workers, int(cap))
    return max(1, workers)


def default_cutoff(
    config: BilliardConfig, window: Window, scatterer_count: int, factor: float = 8.0
) -> float:
    """factor x the top of the analysis window"""
    if isinstance(window, EnergyWindow):
        return factor * window.hi
    # provisional basis: enough levels to reach index hi + N + 1
    needed = window.hi + scatterer_count + 1
    density = config.mass * config.area / (2.0 * math.pi)
    provisional = 2.0 * needed / density + 100.0
    basis = enumerate_basis(config, provisional)
    while len(basis) < needed:
        provisional *= 2.0
        basis = enumerate_basis(config, provisional)
    return factor * float(basis.energies[needed - 1])


class SecularSolver:
    """Root finder for one SecularProblem; intervals are independent work units"""

    def __init__(self, problem: SecularProblem):
        self.problem = problem
        self.settings = problem.settings
        self.kernel = GreenKernel(problem.basis, problem.scatterers, self.settings.kernel_settings())
        self.basis = self.kernel.basis
        self.size = problem.size
        self.inverse = np.diag(np.asarray(problem.scatterers.inverse_strengths, dtype=float))
        self.energies = self.basis.energies
        self.tol = self.settings.tol_omega * self.basis.mean_spacing
        # sample offset from a pole; anything closer is snapped
        self.guard = 2.0 * self.kernel.exclusion
        self.grid_size = self.settings.grid_per_scatterer * self.size + 4
        self.workers = resolve_workers(self.settings.workers)

        amplitude = math.sqrt(4.0 / self.basis.config.area)
        weight = np.abs(self.basis.phi_cache).max(axis=1)
        self.coupled = weight > DECOUPLED_THRESHOLD * amplitude

    # -- D(omega) -----------------------------------------------------------

    def d_matrix(self, omega: float) -> np.ndarray:
        return self.inverse - self.kernel.matrix(omega)

    def branches(self, omega: float) -> np.ndarray:
        return np.linalg.eigvalsh(self.d_matrix(omega))

    def negative_count(self, omega: float) -> int:
        return int(np.count_nonzero(self.branches(omega) < 0.0))

    def count_below(self, omega: float) -> int:
        """Number of perturbed levels <= omega"""
        return self.size + self.basis.count_below(omega) - self.negative_count(omega)

    def level(self, m: int) -> float:
        """E_m with 1-based labels; E_0 = -inf, +inf past the cutoff"""
        if m <= 0:
            return -math.inf
        if m > len(self.energies):
            return math.inf
        return float(self.energies[m - 1])

    def roots_before_host(self, m: int) -> int:
        if m <= 0:
            return 0
        return self.size + (m - 1) - self.negative_count(self.level(m) - self.guard)

    # -- window resolution --------------------------------------------------

    def host_range(self) -> Tuple[int, int]:
        window = self.problem.window
        if isinstance(window, EnergyWindow):
            m_lo = self.basis.count_below(window.lo)
            m_hi = self.basis.count_below(window.hi)
        else:
            m_lo = self._host_of_index(window.lo)
            m_hi = self._host_of_index(window.hi)
        self._check_host_safe(m_hi)
        return m_lo, m_hi

    def _host_of_index(self, index: int) -> int:
        # roots_before_host(m) lies in [m - 1, m - 1 + N], so only a few hosts qualify
        top = min(index, len(self.energies) - 1)
        self._check_host_safe(top)
        for m in range(top, max(0, index - self.size - 1) - 1, -1):
            if self.roots_before_host(m) < index:
                return m
        return 0

    def _check_host_safe(self, m: int) -> None:
        if self.level(m + 1) - self.guard > self.kernel.omega_limit:
            raise TruncationUnsafeError(self.level(m + 1), self.kernel.omega_limit)

    # -- per-interval work --------------------------------------------------

    def _floor(self) -> float:
        """A point below E_1 where all N branches are negative"""
        top = self.level(1)
        distance = self.basis.mean_spacing
        for _ in range(self.settings.max_bisection):
            omega = top - distance
            if self.negative_count(omega) == self.size:
                return omega
            distance *= 2.0
            if not math.isfinite(top - distance) or distance > 1e300:
                break
        raise BracketingError("Could not find a lower edge for the bound states below E_1")

    def solve_host(self, m: int) -> List[_Root]:
        roots: List[_Root] = []
        upper = self.level(m + 1)
        bracket = (self.level(m), upper)
        hi = upper - self.guard
        eig_hi = self.branches(hi)
        n_right = int(np.count_nonzero(eig_hi < 0.0))

        if m == 0:
            lo = self._floor()
            eig_lo = self.branches(lo)
        else:
            pole = self.level(m)
            lo = pole + self.guard
            eig_lo = self.branches(lo)
            outer = self.negative_count(pole - self.guard)
            rank = 1 if self.coupled[m - 1] else 0
            inner = int(np.count_nonzero(eig_lo < 0.0))
            snapped = rank - (inner - outer)
            if snapped < 0:
                raise BracketingError(
                    f"Inertia drops by {-snapped} across level {m}; the Green kernel is inconsistent"
                )
            if rank == 0:
                roots.append(_Root(pole, m, (self.level(m - 1), upper), 0.0, [DECOUPLED]))
                logger.warning(f"Level {m} (E={pole:.10g}) is decoupled from every scatterer")
            for _ in range(snapped):
                roots.append(_Root(lo, m, bracket, float(np.abs(eig_lo).min()), [POLE_ADJACENT]))
                logger.warning(f"Root within the exclusion zone of level {m} snapped to {lo:.12g}")

        n_left = int(np.count_nonzero(eig_lo < 0.0))
        if n_left < n_right:
            raise BracketingError(
                f"Interval {m}: {n_left} negative branches at the left edge but {n_right} at the right"
            )
        branch_ids = list(range(n_right, n_left))
        if branch_ids:
            roots.extend(self._isolate(m, bracket, lo, hi, eig_lo, eig_hi, branch_ids))
        return roots

    def _isolate(self, m, bracket, lo, hi, eig_lo, eig_hi, branch_ids) -> List[_Root]:
        cells = self._grid_brackets(lo, hi, eig_lo, eig_hi, branch_ids)
        ambiguous = set()
        for _ in range(self.settings.refine_cap):
            crowded = self._crowded(cells)
            if not crowded:
                break
            for group in crowded:
                self._refine(cells, group)
        else:
            for group in self._crowded(cells):
                ambiguous.update(group)
                a, b = cells[group[0]][:2]
                logger.warning(
                    f"Interval {m}: branches {group} cross zero inside [{a:.15g}, {b:.15g}] "
                    f"below grid resolution"
                )

        roots = []
        for i in branch_ids:
            omega, residual = self._bisect(i, *cells[i])
            flags = [AMBIGUOUS] if i in ambiguous else []
            roots.append(_Root(omega, m, bracket, residual, flags))
        return roots

    def _grid_brackets(self, lo, hi, eig_lo, eig_hi, branch_ids) -> dict:
        grid = np.linspace(lo, hi, self.grid_size + 2)
        values = np.vstack(
            [eig_lo] + [self.branches(w) for w in grid[1:-1]] + [eig_hi]
        )
        return {i: self._first_crossing(grid, values[:, i]) for i in branch_ids}

    @staticmethod
    def _first_crossing(grid: np.ndarray, column: np.ndarray) -> list:
        j = int(np.argmax(column >= 0.0))
        return [grid[j - 1], grid[j], column[j - 1], column[j]]

    @staticmethod
    def _crowded(cells: dict) -> List[List[int]]:
        groups = {}
        for i, (a, b, _, _) in cells.items():
            groups.setdefault((a, b), []).append(i)
        return [sorted(g) for g in groups.values() if len(g) > 1]

    def _refine(self, cells: dict, group: List[int]) -> None:
        a, b = cells[group[0]][:2]
        grid = np.linspace(a, b, self.grid_size + 2)
        inner = np.vstack([self.branches(w) for w in grid[1:-1]])
        for i in group:
            column = np.concatenate(([cells[i][2]], inner[:, i], [cells[i][3]]))
            cells[i] = self._first_crossing(grid, column)

    def _bisect(self, i: int, a: float, b: float, fa: float, fb: float) -> Tuple[float, float]:
        for _ in range(self.settings.max_bisection):
            if b - a <= self.tol:
                break
            mid = 0.5 * (a + b)
            if not a < mid < b:
                break
            fm = self.branches(mid)[i]
            if fm < 0.0:
                a, fa = mid, fm
            else:
                b, fb = mid, fm
        else:
            raise BracketingError(f"Bisection did not reach width {self.tol:g} in [{a!r}, {b!r}]")

        # secant polish inside the final bracket
        omega = a - fa * (b - a) / (fb - fa) if fb > fa else 0.5 * (a + b)
        omega = min(max(omega, a), b)
        return float(omega), float(abs(self.branches(omega)[i]))

    # -- assembly -----------------------------------------------------------

    def run(self, host_solver=None) -> PerturbedSpectrum:
        host_solver = host_solver or self.solve_host
        m_lo, m_hi = self.host_range()
        hosts = list(range(m_lo, m_hi + 1))
        logger.info(
            f"Solving {len(hosts)} intervals (hosts {m_lo}..{m_hi}) for N={self.size} "
            f"with {self.workers} worker(s)"
        )
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                per_host = list(pool.map(host_solver, hosts))
        else:
            per_host = [host_solver(m) for m in hosts]

        roots = [root for host_roots in per_host for root in host_roots if root.host <= m_hi]
        roots.sort(key=lambda r: r.omega)
        offset = self.roots_before_host(m_lo)
        indices = offset + 1 + np.arange(len(roots))

        window = self.problem.window
        if isinstance(window, IndexWindow):
            keep = [k for k in range(len(roots)) if window.lo <= indices[k] <= window.hi]
        else:
            keep = [k for k, r in enumerate(roots) if window.lo <= r.omega <= window.hi]
        return self._spectrum([roots[k] for k in keep], indices[keep])

    def _spectrum(self, roots: List[_Root], indices: np.ndarray) -> PerturbedSpectrum:
        spectrum = PerturbedSpectrum(
            omegas=np.array([r.omega for r in roots], dtype=float),
            brackets=np.array([r.bracket for r in roots], dtype=float).reshape(-1, 2),
            residuals=np.array([r.residual for r in roots], dtype=float),
            indices=np.asarray(indices, dtype=np.int64),
            host_levels=np.array([r.host for r in roots], dtype=np.int64),
            flags=tuple("|".join(r.flags) for r in roots),
            config_digest=self.problem.digest(),
        )
        logger.info(
            f"Found {len(spectrum)} roots; pole-adjacent={spectrum.flagged(POLE_ADJACENT)}, "
            f"ambiguous={spectrum.flagged(AMBIGUOUS)}, decoupled={spectrum.flagged(DECOUPLED)}"
        )
        return spectrum

    # -- N = 1 specialisation -------------------------------------------------

    def single_value(self, omega: float) -> float:
        """v_1^-1 - G(omega), increasing between poles"""
        return self.inverse[0, 0] - self.kernel.diag(0, omega)

    def solve_single_host(self, m: int) -> List[_Root]:
        upper = self.level(m + 1)
        bracket = (self.level(m), upper)
        b = upper - self.guard
        fb = self.single_value(b)
        if m == 0:
            distance = self.basis.mean_spacing
            a = upper - distance
            fa = self.single_value(a)
            while fa >= 0.0:
                distance *= 2.0
                if distance > 1e300:
                    raise BracketingError("Could not bracket the bound state below E_1")
                a = upper - distance
                fa = self.single_value(a)
        else:
            if not self.coupled[m - 1]:
                raise BracketingError(
                    f"Level {m} is decoupled from the scatterer; solve_multi handles decoupled levels"
                )
            a = self.level(m) + self.guard
            fa = self.single_value(a)
            if fa >= 0.0:
                logger.warning(f"Root within the exclusion zone of level {m} snapped to {a:.12g}")
                return [_Root(a, m, bracket, abs(fa), [POLE_ADJACENT])]
        if fb <= 0.0:
            # the root sits in the exclusion zone of the next level and is owned by host m + 1
            snapped = upper + self.guard
            logger.warning(f"Root within the exclusion zone of level {m + 1} snapped to {snapped:.12g}")
            return [_Root(snapped, m + 1, (upper, self.level(m + 2)), abs(fb), [POLE_ADJACENT])]

        for _ in range(self.settings.max_bisection):
            if b - a <= self.tol:
                break
            mid = 0.5 * (a + b)
            if not a < mid < b:
                break
            fm = self.single_value(mid)
            if fm < 0.0:
                a, fa = mid, fm
            else:
                b, fb = mid, fm
        else:
            raise BracketingError(f"Bisection did not converge in interval {m}")
        omega = min(max(a - fa * (b - a) / (fb - fa), a), b)
        return [_Root(float(omega), m, bracket, float(abs(self.single_value(omega))))]


def solve_single(problem: SecularProblem) -> PerturbedSpectrum:
    """Unique root of G(omega) = v_1^-1 on every interval touching the window"""
    if problem.size != 1:
        raise DomainError(f"solve_single needs exactly one scatterer, got {problem.size}")
    solver = SecularSolver(problem)
    if isinstance(problem.window, IndexWindow):
        return solver.run(solver.solve_single_host)

    m_lo, m_hi = solver.host_range()
    roots = []
    for m in range(m_lo, m_hi + 1):
        roots.extend(r for r in solver.solve_single_host(m) if r.host <= m_hi)
    roots.sort(key=lambda r: r.omega)
    indices = solver.roots_before_host(m_lo) + 1 + np.arange(len(roots))
    return solver._spectrum(roots, indices)


def solve_multi(problem: SecularProblem) -> PerturbedSpectrum:
    return SecularSolver(problem).run()


def eigenfunction_expansion(problem: SecularProblem, omega: float) -> EigenfunctionExpansion:
    """Expansion coefficients of the perturbed eigenfunction at a converged root"""
    solver = SecularSolver(problem)
    values, vectors = np.linalg.eigh(solver.d_matrix(omega))
    order = np.argsort(np.abs(values))
    if problem.size > 1:
        scale = max(1.0, float(np.abs(values).max()))
        if abs(values[order[1]]) <= problem.settings.null_tolerance * scale:
            raise DegenerateRootError(
                f"Null space of D({omega!r}) is at least two-dimensional "
                f"(eigenvalues {values[order[0]]:.3e}, {values[order[1]]:.3e})"
            )
    weights = vectors[:, order[0]]
    weights = weights * np.sign(weights[np.argmax(np.abs(weights))])

    coefficients = (solver.basis.phi_cache @ weights) / (omega - solver.energies)
    norm = float(np.sqrt(np.dot(coefficients, coefficients)))
    return EigenfunctionExpansion(
        omega=float(omega), coefficients=coefficients / norm, norm=norm, weights=weights
    )


def normality_deviation(
    inverse_strengths, g_imaginary: np.ndarray, lam: float, frame: str = "metric"
) -> float:
    """
    Relative non-normality ||T T^+ - T^+ T||_F / ||T||_F^2 of T(i Lambda)

    Args:
        inverse_strengths: Diagonal of A
        g_imaginary: G(i Lambda), complex symmetric
        lam: Scale mass Lambda
        frame: "metric" expresses T in the orthonormalised deficiency basis
            (Gram matrix K = -Im G(i Lambda) / Lambda); "coordinate" uses the
            scatterer coordinates directly

    In the metric frame T^-1 = K^-1/2 (A - Re G) K^-1/2 + i Lambda I whenever G
    is complex symmetric, which is normal at any cutoff; a nonzero value there
    only flags a non-symmetric G. The coordinate frame assumes orthonormal
    deficiency vectors and stays of order 1e-2 for distinct scatterers.
    """
    t_inverse = np.diag(np.asarray(inverse_strengths, dtype=float)).astype(complex) - g_imaginary
    if frame == "metric":
        gram = -g_imaginary.imag / lam
        gram = 0.5 * (gram + gram.T)
        values, vectors = np.linalg.eigh(gram)
        if values.min() <= 0.0:
            raise DiagnosticError(f"Deficiency Gram matrix is not positive definite (min eigenvalue {values.min():.3e})")
        inv_root = (vectors / np.sqrt(values)) @ vectors.T
        t_inverse = inv_root @ t_inverse @ inv_root
    elif frame != "coordinate":
        raise DomainError(f"Unknown frame {frame!r}")

    if not np.isfinite(np.linalg.cond(t_inverse)) or np.linalg.cond(t_inverse) > 1e14:
        raise DiagnosticError("A - G(i Lambda) is singular")
    t = np.linalg.inv(t_inverse)
    t_dagger = t.conj().T
    commutator = t @ t_dagger - t_dagger @ t
    return float(np.linalg.norm(commutator) / np.linalg.norm(t) ** 2)


def normality_diagnostic(problem: SecularProblem, frame: str = "metric") -> float:
    kernel = GreenKernel(problem.basis, problem.scatterers, problem.settings.kernel_settings())
    return normality_deviation(
        problem.scatterers.inverse_strengths,
        kernel.imaginary_matrix(1),
        problem.basis.config.lam,
        frame,
    )
