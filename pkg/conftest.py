"""
Shared fixtures: the reference billiard, its scatterer positions and bases
"""

import math

import pytest

from services.green_kernel import ScattererSet
from services.rect_basis import BilliardConfig, enumerate_basis

# side lengths (pi/3, 3/pi), M = 2 pi, Lambda = 1: mean level density exactly 1
REFERENCE = dict(lx=math.pi / 3, ly=3 / math.pi, mass=2 * math.pi, lam=1.0)

POSITIONS = [
    (0.6224826, 0.2758356),
    (0.8202505, 0.4561782),
    (0.1802603, 0.6365209),
    (0.3780281, 0.8168635),
    (0.5757960, 0.2332624),
    (0.7735638, 0.4136051),
    (0.1335736, 0.5939477),
    (0.3313415, 0.7742904),
    (0.5291093, 0.1906893),
    (0.7268772, 0.3710320),
]


def scatterers(count: int, inverse_strength: float = 5.0) -> ScattererSet:
    return ScattererSet(
        positions=tuple(POSITIONS[:count]),
        inverse_strengths=(inverse_strength,) * count,
    )


@pytest.fixture(scope="session")
def billiard() -> BilliardConfig:
    return BilliardConfig(**REFERENCE)


@pytest.fixture(scope="session")
def basis(billiard):
    # truncation-safe up to omega = 1300
    return enumerate_basis(billiard, 2600.0)


@pytest.fixture(scope="session")
def small_basis(billiard):
    return enumerate_basis(billiard, 800.0)


@pytest.fixture
def experiment_dict():
    """A small, fast experiment: N=2 on an energy window well below the cutoff"""
    return {
        "label": "small",
        "billiard": {
            "lx": REFERENCE["lx"],
            "ly": REFERENCE["ly"],
            "mass": REFERENCE["mass"],
            "lambda": REFERENCE["lam"],
        },
        "scatterers": {
            "positions": [list(p) for p in POSITIONS[:2]],
            "inverse_strengths": [5.0, 5.0],
        },
        "window": {"kind": "energy", "lo": 100.0, "hi": 140.0},
        "solver": {"energy_cutoff": 400.0},
        "stats": {"bins": 20, "s_max": 3.0, "L_grid": [1.0, 2.0, 5.0, 10.0]},
    }
