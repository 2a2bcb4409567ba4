"""
Plot Scripts - gnuplot scripts for the spacing distribution and Delta_3 results

Scripts reference the CSVs by path relative to the results directory and are
meant to be run from there (gnuplot pofs.gp). Regeneration is idempotent.
"""

import logging
from pathlib import Path
from typing import List, Tuple, Union

from services.errors import StatsError
from services.experiment_runner import atomic_write_text

logger = logging.getLogger(__name__)

POFS_SCRIPT = "pofs.gp"
DELTA3_SCRIPT = "delta3.gp"

HEADER = """# generated by spectra plots; run from this directory
set datafile separator ","
set terminal pngcairo size 900,650
"""


def _series(results_dir: Path, name: str) -> List[Tuple[str, str]]:
    """(relative csv path, series title) for every run below results_dir"""
    found = []
    for path in sorted(results_dir.rglob(name)):
        relative = path.relative_to(results_dir).as_posix()
        title = path.parent.relative_to(results_dir).as_posix()
        found.append((relative, "run" if title == "." else title))
    return found


def _plot_lines(entries: List[str]) -> str:
    return "plot " + ", \\\n     ".join(entries) + "\n"


def pofs_script(series: List[Tuple[str, str]], s_max: float = 3.0) -> str:
    entries = [
        f'"{path}" skip 1 using 1:2 with histeps title "{title}"' for path, title in series
    ]
    entries.append('exp(-x) with lines dashtype 2 lc rgb "black" title "Poisson"')
    entries.append('(pi*x/2)*exp(-pi*x*x/4) with lines lc rgb "black" title "GOE"')
    return (
        HEADER
        + 'set output "pofs.png"\n'
        + 'set xlabel "S"\nset ylabel "P(S)"\n'
        + f"set xrange [0:{s_max:g}]\nset yrange [0:*]\n"
        + "set samples 400\n"
        + _plot_lines(entries)
    )


def delta3_script(series: List[Tuple[str, str]]) -> str:
    entries = [
        f'"{path}" skip 1 using 1:2 with linespoints title "{title}"' for path, title in series
    ]
    entries.append('x/15 with lines dashtype 2 lc rgb "black" title "Poisson"')
    entries.append('(log(x)-0.0687)/pi**2 with lines lc rgb "black" title "GOE"')
    return (
        HEADER
        + 'set output "delta3.png"\n'
        + 'set xlabel "L"\nset ylabel "Delta_3(L)"\n'
        + "set xrange [0:*]\nset yrange [0:*]\n"
        + "set key top left\n"
        + _plot_lines(entries)
    )


def emit_plots(results_dir: Union[str, Path], s_max: float = 3.0) -> List[Path]:
    results_dir = Path(results_dir)
    pofs = _series(results_dir, "pofs.csv")
    delta3 = _series(results_dir, "delta3.csv")
    if not pofs and not delta3:
        raise StatsError(f"No pofs.csv or delta3.csv below {results_dir}; run `spectra stats` first")

    written = []
    if pofs:
        path = results_dir / POFS_SCRIPT
        atomic_write_text(path, pofs_script(pofs, s_max))
        written.append(path)
    if delta3:
        path = results_dir / DELTA3_SCRIPT
        atomic_write_text(path, delta3_script(delta3))
        written.append(path)
    logger.info(f"Wrote {', '.join(p.name for p in written)} for {max(len(pofs), len(delta3))} series")
    return written
