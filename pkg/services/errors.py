"""
Errors - Exception hierarchy shared by the spectra services

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class SpectraError(Exception):
    """Root of all expected failures"""

    exit_code = 1


class ConfigError(SpectraError):
    """Configuration could not be parsed or validated"""

    exit_code = 2


class SolverError(SpectraError):
    """Basis, Green's function or root-finding failure"""

    exit_code = 3


class StatsError(SpectraError):
    """Statistics stage failure (bad spectrum file, too few levels, ...)"""

    exit_code = 4


class DomainError(SpectraError, ValueError):
    """Argument outside the domain of an operation"""

    exit_code = 2


class DegenerateLevelError(SolverError):
    def __init__(self, first: tuple, second: tuple, gap: float):
        self.first = first
        self.second = second
        self.gap = gap
        super().__init__(
            f"Degenerate unperturbed levels (nx, ny)={first} and {second}: "
            f"|E_a - E_b| = {gap:.3e} is below the tie tolerance"
        )


class PoleProximityError(SolverError):
    def __init__(self, level_index: int, omega: float, distance: float):
        self.level_index = level_index
        self.omega = omega
        self.distance = distance
        super().__init__(
            f"omega={omega!r} lies {distance:.3e} from unperturbed level #{level_index}, "
            f"inside the pole-exclusion tolerance"
        )


class TruncationUnsafeError(SolverError):
    def __init__(self, omega: float, limit: float):
        self.omega = omega
        self.limit = limit
        super().__init__(
            f"omega={omega!r} exceeds the truncation-safe limit {limit!r}; raise the energy cutoff"
        )


class BracketingError(SolverError):
    pass


class DegenerateRootError(SolverError):
    pass


class DiagnosticError(SolverError):
    pass


def exit_code_for(error: Optional[BaseException]) -> int:
    if error is None:
        return 0
    return getattr(error, "exit_code", 1)
