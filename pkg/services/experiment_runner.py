"""
Experiment Runner - Drives the solver and the statistics stage and writes results

All tables are plain CSV with a fixed column order, '.' decimals and doubles
written with 17 significant digits. Every file is written to a temporary file
in the target directory and renamed into place.
"""

import csv
import io
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from services import __version__
from services.coupling_predictor import CouplingBand, scatterer_verdicts
from services.errors import DiagnosticError, SolverError, SpectraError, StatsError, exit_code_for
from services.experiment_config import ExperimentConfig, config_digest, serialize
from services.rect_basis import BasisTable, enumerate_basis, mean_level_density
from services.secular_solver import (
    AMBIGUOUS,
    DECOUPLED,
    INDEX_CONVENTION,
    POLE_ADJACENT,
    IndexWindow,
    PerturbedSpectrum,
    SecularProblem,
    default_cutoff,
    normality_diagnostic,
    solve_multi,
)
from services.spectral_stats import StatisticsReport, analyse, reference_delta3, reference_pofs

logger = logging.getLogger(__name__)

SPECTRUM_COLUMNS = ["index", "omega", "host_interval_lo", "host_interval_hi", "residual"]
FLAG_COLUMNS = ["index", "host_level", "flag"]
POFS_COLUMNS = ["bin_center", "density", "reference_poisson", "reference_goe"]
DELTA3_COLUMNS = ["L", "value", "window_count", "reference_poisson", "reference_goe"]


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(temp, path)
    except BaseException:
        if os.path.exists(temp):
            os.unlink(temp)
        raise


def write_csv(path: Path, columns: Sequence[str], rows) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([cell if isinstance(cell, str) else fmt(cell) for cell in row])
    atomic_write_text(path, buffer.getvalue())
    return path


def write_json(path: Path, payload: dict) -> Path:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_spectrum(path: Union[str, Path]) -> PerturbedSpectrum:
    """Parse spectrum.csv (and spectrum_flags.csv beside it, when present)"""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
    except OSError as e:
        raise StatsError(f"Cannot read spectrum file {path}: {e}") from e
    if not rows or rows[0] != SPECTRUM_COLUMNS:
        raise StatsError(f"{path}: expected header {','.join(SPECTRUM_COLUMNS)}")
    try:
        table = np.array([[float(cell) for cell in row] for row in rows[1:]], dtype=float)
    except ValueError as e:
        raise StatsError(f"{path}: malformed row: {e}") from e
    if table.size and table.shape[1] != len(SPECTRUM_COLUMNS):
        raise StatsError(f"{path}: rows must have {len(SPECTRUM_COLUMNS)} columns")
    table = table.reshape(-1, len(SPECTRUM_COLUMNS))

    hosts = np.zeros(len(table), dtype=np.int64)
    flags = [""] * len(table)
    flag_path = path.with_name("spectrum_flags.csv")
    if flag_path.exists():
        with open(flag_path, newline="", encoding="utf-8") as handle:
            flag_rows = list(csv.reader(handle))[1:]
        if len(flag_rows) == len(table):
            hosts = np.array([int(row[1]) for row in flag_rows], dtype=np.int64)
            flags = [row[2] for row in flag_rows]

    return PerturbedSpectrum(
        omegas=table[:, 1],
        brackets=table[:, 2:4],
        residuals=table[:, 4],
        indices=table[:, 0].astype(np.int64),
        host_levels=hosts,
        flags=tuple(flags),
        config_digest="",
    )


@dataclass
class RunResult:
    spectrum: PerturbedSpectrum
    manifest: dict
    files: List[Path] = field(default_factory=list)


@dataclass
class StatsResult:
    report: StatisticsReport
    files: List[Path] = field(default_factory=list)


def cell_exit_code(error: Exception) -> int:
    """Exit code of a failed sweep cell; anything outside the hierarchy counts as a solver failure"""
    if isinstance(error, SpectraError):
        return exit_code_for(error)
    return SolverError.exit_code


@dataclass
class SweepResult:
    cells: List[str]
    failures: Dict[str, Exception] = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        if not self.failures:
            return 0
        return max(cell_exit_code(e) for e in self.failures.values())


def unperturbed_spectrum(basis: BasisTable, config: ExperimentConfig) -> PerturbedSpectrum:
    """N = 0 calibration: the unperturbed levels in the window"""
    window = config.window.to_window()
    energies = basis.energies
    if isinstance(window, IndexWindow):
        if window.hi > len(energies):
            raise SolverError(f"Basis has only {len(energies)} levels, window needs {window.hi}")
        picked = np.arange(window.lo, window.hi + 1)
    else:
        picked = np.nonzero((energies >= window.lo) & (energies <= window.hi))[0] + 1
    padded = np.concatenate(([-math.inf], energies, [math.inf]))
    return PerturbedSpectrum(
        omegas=energies[picked - 1].copy(),
        brackets=np.column_stack((padded[picked - 1], padded[picked + 1])),
        residuals=np.zeros(len(picked)),
        indices=picked.astype(np.int64),
        host_levels=picked.astype(np.int64),
        flags=("",) * len(picked),
        config_digest=config_digest(config),
    )


class ExperimentRunner:
    """Runs one experiment config into one results directory"""

    def __init__(self, config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None):
        self.config = config
        self.output_dir = Path(output_dir or config.output_dir)

    def run_spectrum(self) -> RunResult:
        config = self.config
        started = time.perf_counter()
        window = config.window.to_window()
        n = config.scatterer_count
        cutoff = config.solver.energy_cutoff or default_cutoff(
            config.billiard, window, n, config.solver.cutoff_factor
        )
        basis = enumerate_basis(config.billiard, cutoff)
        basis_seconds = time.perf_counter() - started

        normality = {}
        verdicts = []
        if n == 0:
            logger.info("No scatterers configured: emitting the unperturbed levels")
            spectrum = unperturbed_spectrum(basis, config)
        else:
            problem = SecularProblem(basis, config.scatterers, window, config.solver.settings())
            spectrum = solve_multi(problem)
            for frame in ("metric", "coordinate"):
                try:
                    normality[frame] = normality_diagnostic(problem, frame)
                except DiagnosticError as e:
                    logger.warning(f"Normality diagnostic ({frame}) failed: {e}")
                    normality[frame] = None
            positive = spectrum.omegas[spectrum.omegas > 0]
            if len(positive):
                band = CouplingBand.from_config(config.billiard)
                verdicts = [
                    asdict(v)
                    for v in scatterer_verdicts(band, config.scatterers, positive[0], positive[-1])
                ]
        solve_seconds = time.perf_counter() - started - basis_seconds

        files = [
            write_csv(
                self.output_dir / "spectrum.csv",
                SPECTRUM_COLUMNS,
                zip(spectrum.indices, spectrum.omegas, spectrum.brackets[:, 0], spectrum.brackets[:, 1], spectrum.residuals),
            ),
            write_csv(
                self.output_dir / "spectrum_flags.csv",
                FLAG_COLUMNS,
                zip(spectrum.indices, spectrum.host_levels, spectrum.flags),
            ),
            write_json(self.output_dir / "config.json", json.loads(serialize(config))),
        ]
        manifest = {
            "config_digest": config_digest(config),
            "tool_version": __version__,
            "label": config.label,
            "energy_cutoff": cutoff,
            "index_convention": INDEX_CONVENTION,
            "timings": {
                "basis_seconds": round(basis_seconds, 3),
                "solve_seconds": round(solve_seconds, 3),
            },
            "record_counts": {
                "basis_levels": len(basis),
                "scatterers": n,
                "roots": len(spectrum),
                POLE_ADJACENT: spectrum.flagged(POLE_ADJACENT),
                AMBIGUOUS: spectrum.flagged(AMBIGUOUS),
                DECOUPLED: spectrum.flagged(DECOUPLED),
            },
            "max_residual": float(spectrum.residuals.max()) if len(spectrum) else 0.0,
            "normality_deviation": normality,
            "coupling": verdicts,
        }
        files.append(write_json(self.output_dir / "manifest.json", manifest))
        logger.info(f"Wrote {len(spectrum)} levels to {self.output_dir / 'spectrum.csv'}")
        return RunResult(spectrum=spectrum, manifest=manifest, files=files)

    def run_stats(self, spectrum_file: Optional[Union[str, Path]] = None) -> StatsResult:
        config = self.config
        spectrum = read_spectrum(spectrum_file or self.output_dir / "spectrum.csv")
        settings = config.stats
        report = analyse(
            spectrum,
            mean_level_density(config.billiard),
            bins=settings.bins,
            s_max=settings.s_max,
            L_values=settings.L_grid,
            step_fraction=settings.window_step,
        )
        histogram = report.histogram
        centers = histogram.bin_centers
        rigidity = report.rigidity
        files = [
            write_csv(
                self.output_dir / "pofs.csv",
                POFS_COLUMNS,
                zip(centers, histogram.densities, reference_pofs("poisson", centers), reference_pofs("goe", centers)),
            ),
            write_csv(
                self.output_dir / "delta3.csv",
                DELTA3_COLUMNS,
                zip(
                    rigidity.L_values,
                    rigidity.delta3,
                    rigidity.window_count,
                    reference_delta3("poisson", rigidity.L_values),
                    reference_delta3("goe", rigidity.L_values),
                ),
            ),
            write_json(
                self.output_dir / "distances.json",
                {
                    "ks_poisson": report.distances["poisson"],
                    "ks_goe": report.distances["goe"],
                    "sample_count": histogram.sample_count,
                    "overflow": histogram.overflow,
                },
            ),
        ]
        return StatsResult(report=report, files=files)

    def run_sweep(self) -> SweepResult:
        cells = self.config.cells()
        result = SweepResult(cells=[name for name, _ in cells])
        delta3_rows, pofs_rows, distance_rows, status_rows = [], [], [], []

        for name, cell in cells:
            runner = ExperimentRunner(cell, self.output_dir / name)
            n = cell.scatterer_count
            strengths = set(cell.scatterers.inverse_strengths) if cell.scatterers else set()
            inverse = fmt(strengths.pop()) if len(strengths) == 1 else ""
            try:
                run = runner.run_spectrum()
                stats = runner.run_stats()
            except SpectraError as e:
                logger.warning(f"Sweep cell {name} failed: {e}")
                result.failures[name] = e
                status_rows.append((name, "failed", cell_exit_code(e), str(e)))
                continue
            except Exception as e:
                logger.error(f"Sweep cell {name} failed unexpectedly: {str(e)}", exc_info=True)
                result.failures[name] = e
                status_rows.append((name, "failed", cell_exit_code(e), f"{type(e).__name__}: {e}"))
                continue

            report = stats.report
            for L, value, count in zip(report.rigidity.L_values, report.rigidity.delta3, report.rigidity.window_count):
                delta3_rows.append((name, n, inverse, L, value, count))
            for center, density in zip(report.histogram.bin_centers, report.histogram.densities):
                pofs_rows.append((name, n, inverse, center, density))
            coverage = [v["coverage"] for v in run.manifest["coupling"]]
            distance_rows.append(
                (name, n, inverse, report.distances["poisson"], report.distances["goe"],
                 min(coverage) if coverage else 0.0)
            )
            status_rows.append((name, "ok", 0, ""))

        out = self.output_dir
        result.files = [
            write_csv(out / "sweep_delta3.csv", ["cell", "N", "inverse_strength", "L", "value", "window_count"], delta3_rows),
            write_csv(out / "sweep_pofs.csv", ["cell", "N", "inverse_strength", "bin_center", "density"], pofs_rows),
            write_csv(
                out / "sweep_distances.csv",
                ["cell", "N", "inverse_strength", "ks_poisson", "ks_goe", "band_coverage"],
                distance_rows,
            ),
            write_csv(out / "sweep_status.csv", ["cell", "status", "exit_code", "message"], status_rows),
        ]
        logger.info(f"Sweep finished: {len(cells) - len(result.failures)}/{len(cells)} cells succeeded")
        return result


def run_spectrum(config: ExperimentConfig, output_dir=None) -> RunResult:
    return ExperimentRunner(config, output_dir).run_spectrum()


def run_stats(config: ExperimentConfig, spectrum_file, output_dir=None) -> StatsResult:
    output_dir = output_dir or Path(spectrum_file).parent
    return ExperimentRunner(config, output_dir).run_stats(spectrum_file)


def run_sweep(config: ExperimentConfig, output_dir=None) -> SweepResult:
    return ExperimentRunner(config, output_dir).run_sweep()
