"""
Write a synthetic spectrum.csv for exercising the statistics stage.

Usage:
  python -m tools.make_fixture poisson <count> <seed> <output_dir>
  python -m tools.make_fixture picket <count> <output_dir>

Levels are generated with unit mean spacing; pair the fixture with a config
whose mean level density is 1 (M * S = 2 pi), such as configs/fig1_v5.json.
"""

import sys
from pathlib import Path

import numpy as np

from services.experiment_runner import SPECTRUM_COLUMNS, write_csv
from services.spectral_stats import poisson_levels


def fixture_levels(kind: str, count: int, seed: int = 0) -> np.ndarray:
    if kind == "poisson":
        return poisson_levels(count, seed)
    if kind == "picket":
        return np.arange(1, count + 1, dtype=float)
    raise ValueError(f"Unknown fixture kind {kind!r}")


def write_fixture(output_dir: Path, levels: np.ndarray) -> Path:
    padded = np.concatenate(([levels[0] - 1.0], levels, [levels[-1] + 1.0]))
    rows = (
        (i + 1, levels[i], padded[i], padded[i + 2], 0.0)
        for i in range(len(levels))
    )
    return write_csv(Path(output_dir) / "spectrum.csv", SPECTRUM_COLUMNS, rows)


def main():
    if len(sys.argv) < 4 or sys.argv[1] not in ("poisson", "picket"):
        print(__doc__)
        sys.exit(1)

    kind = sys.argv[1]
    count = int(sys.argv[2])
    if kind == "poisson":
        if len(sys.argv) < 5:
            print(__doc__)
            sys.exit(1)
        seed, output_dir = int(sys.argv[3]), sys.argv[4]
    else:
        seed, output_dir = 0, sys.argv[3]

    path = write_fixture(Path(output_dir), fixture_levels(kind, count, seed))
    print(f"Saved {count} {kind} levels to {path}")


if __name__ == "__main__":
    main()
