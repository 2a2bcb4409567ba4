"""
Tests for the secular-equation root solver
"""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import POSITIONS, scatterers
from services.errors import DiagnosticError, DomainError, TruncationUnsafeError
from services.green_kernel import GreenKernel, ScattererSet
from services.rect_basis import enumerate_basis
from services.secular_solver import (
    POLE_ADJACENT,
    EnergyWindow,
    IndexWindow,
    SecularProblem,
    SecularSolver,
    SolverSettings,
    eigenfunction_expansion,
    normality_deviation,
    normality_diagnostic,
    solve_multi,
    solve_single,
)


def problem(basis, count, window, inverse_strength=5.0, **settings):
    return SecularProblem(basis, scatterers(count, inverse_strength), window, SolverSettings(**settings))


def scan_roots(f, lo, hi, points):
    """Dense sign scan of f on (lo, hi) followed by Brent refinement"""
    grid = np.linspace(lo, hi, points)
    values = np.array([f(w) for w in grid])
    roots = []
    for j in np.nonzero(np.sign(values[:-1]) != np.sign(values[1:]))[0]:
        roots.append(brentq(f, grid[j], grid[j + 1], xtol=1e-13, rtol=4 * np.finfo(float).eps))
    return roots


@pytest.fixture(scope="module")
def single_wide(basis):
    return solve_single(problem(basis, 1, EnergyWindow(100.0, 1200.0)))


def test_window_validation():
    with pytest.raises(DomainError):
        IndexWindow(0, 5)
    with pytest.raises(DomainError):
        IndexWindow(10, 5)
    with pytest.raises(DomainError):
        EnergyWindow(5.0, 5.0)


def test_energy_window_beyond_safe_limit(basis):
    with pytest.raises(TruncationUnsafeError):
        problem(basis, 1, EnergyWindow(100.0, 1400.0))


def test_index_window_beyond_safe_limit(basis):
    with pytest.raises(TruncationUnsafeError):
        solve_multi(problem(basis, 2, IndexWindow(1250, 1400)))


def test_solve_single_requires_one_scatterer(basis):
    with pytest.raises(DomainError):
        solve_single(problem(basis, 2, EnergyWindow(100.0, 110.0)))


def test_single_roots_interlace(single_wide):
    lo, hi = single_wide.brackets[:, 0], single_wide.brackets[:, 1]
    assert np.all(lo < single_wide.omegas)
    assert np.all(single_wide.omegas < hi)
    assert np.all(np.diff(single_wide.omegas) > 0)
    # exactly one root per unperturbed interval
    hosts = single_wide.host_levels
    assert np.array_equal(hosts, np.arange(hosts[0], hosts[0] + len(hosts)))
    assert np.array_equal(single_wide.indices, np.arange(single_wide.indices[0], single_wide.indices[0] + len(hosts)))


def test_single_roots_match_dense_scan(basis, single_wide):
    kernel = GreenKernel(basis, scatterers(1))
    energies = basis.energies
    rng = np.random.default_rng(5)
    picks = rng.choice(len(single_wide), size=200, replace=False)
    spacing = basis.mean_spacing

    def f(w):
        return 5.0 - kernel.diag(0, w)

    for k in picks:
        if POLE_ADJACENT in single_wide.flags[k]:
            continue
        m = single_wide.host_levels[k]
        lo, hi = energies[m - 1], energies[m]
        roots = scan_roots(f, lo + 1e-7 * spacing, hi - 1e-7 * spacing, 64)
        assert len(roots) == 1
        assert single_wide.omegas[k] == pytest.approx(roots[0], abs=1e-8)


def test_single_residuals_small(single_wide):
    unflagged = np.array([POLE_ADJACENT not in f for f in single_wide.flags])
    # roots very close to a pole sit where |G'| is huge, so only the bulk is held to a tight bound
    assert np.quantile(single_wide.residuals[unflagged], 0.95) < 1e-8


def test_multi_with_one_scatterer_matches_single(basis):
    window = IndexWindow(200, 240)
    single = solve_single(problem(basis, 1, window))
    multi = solve_multi(problem(basis, 1, window))
    assert len(single) == len(multi) == 41
    assert np.array_equal(single.indices, multi.indices)
    np.testing.assert_allclose(multi.omegas, single.omegas, rtol=0, atol=1e-8)


def test_bottom_of_spectrum_indexing(basis):
    window = IndexWindow(1, 12)
    single = solve_single(problem(basis, 1, window))
    multi = solve_multi(problem(basis, 1, window))
    assert np.array_equal(single.indices, np.arange(1, 13))
    # one bound state below E_1, then one root per interval
    assert np.array_equal(single.host_levels, single.indices - 1)
    assert single.omegas[0] < basis.energies[0]
    np.testing.assert_allclose(multi.omegas, single.omegas, rtol=0, atol=1e-8)


def test_weak_coupling_roots_hug_lower_pole(basis):
    spectrum = solve_single(problem(basis, 1, EnergyWindow(480.0, 520.0), inverse_strength=1e6))
    gaps = (spectrum.omegas - spectrum.brackets[:, 0]) / basis.mean_spacing
    assert np.all(gaps > 0)
    assert np.all(gaps < 1e-3)


def test_weak_coupling_eigenfunction_concentrates(basis):
    weak = problem(basis, 1, EnergyWindow(480.0, 520.0), inverse_strength=1e6)
    spectrum = solve_single(weak)
    checked = 0
    for omega, host, flag in zip(spectrum.omegas, spectrum.host_levels, spectrum.flags):
        if flag:
            continue
        expansion = eigenfunction_expansion(weak, omega)
        assert expansion.coefficients[host - 1] ** 2 > 0.999
        checked += 1
    assert checked > 10


@pytest.mark.parametrize("count", [1, 2, 5])
def test_interlacing_bound(basis, count):
    window = EnergyWindow(300.0, 340.0)
    spectrum = solve_multi(problem(basis, count, window))
    _, per_host = np.unique(spectrum.host_levels, return_counts=True)
    assert per_host.max() <= count
    unperturbed = basis.count_below(340.0) - basis.count_below(300.0)
    assert abs(len(spectrum) - unperturbed) <= count
    assert np.all(spectrum.brackets[:, 0] < spectrum.omegas)
    assert np.all(spectrum.omegas < spectrum.brackets[:, 1])


def test_index_and_energy_windows_agree(basis):
    wide = solve_multi(problem(basis, 3, EnergyWindow(150.0, 190.0)))
    lo, hi = int(wide.indices[5]), int(wide.indices[-5])
    narrow = solve_multi(problem(basis, 3, IndexWindow(lo, hi)))
    assert np.array_equal(narrow.indices, np.arange(lo, hi + 1))
    np.testing.assert_array_equal(narrow.omegas, wide.omegas[5:-4])


def test_counting_function_matches_roots(basis):
    two = problem(basis, 2, IndexWindow(1, 40))
    spectrum = solve_multi(two)
    solver = SecularSolver(two)
    assert np.array_equal(spectrum.indices, np.arange(1, 41))
    for k in range(len(spectrum) - 1):
        mid = 0.5 * (spectrum.omegas[k] + spectrum.omegas[k + 1])
        if np.min(np.abs(basis.energies - mid)) < 1e-6:
            continue
        assert solver.count_below(mid) == k + 1


@pytest.mark.parametrize(
    "positions",
    [
        (POSITIONS[0], POSITIONS[1]),
        # second scatterer at the centre: decoupled from every level with an even quantum number
        (POSITIONS[0], (math.pi / 6, 1.5 / math.pi)),
    ],
)
def test_two_scatterers_match_determinant_scan(basis, positions):
    two = SecularProblem(
        basis,
        ScattererSet(positions=positions, inverse_strengths=(5.0, 6.0)),
        EnergyWindow(400.0, 415.0),
    )
    spectrum = solve_multi(two)
    solver = SecularSolver(two)
    energies = basis.energies
    spacing = basis.mean_spacing

    def det(w):
        return np.linalg.det(solver.d_matrix(w))

    expected = []
    for m in range(basis.count_below(400.0) - 1, basis.count_below(415.0)):
        lo, hi = energies[m], energies[m + 1]
        points = max(20, int(10000 * (hi - lo) / 15.0))
        expected += scan_roots(det, lo + 1e-7 * spacing, hi - 1e-7 * spacing, points)
    expected = np.array([w for w in expected if 400.0 <= w <= 415.0])

    assert len(spectrum) == len(expected)
    np.testing.assert_allclose(spectrum.omegas, expected, rtol=0, atol=1e-8)


def test_branches_nondecreasing(basis):
    solver = SecularSolver(problem(basis, 3, EnergyWindow(100.0, 1200.0)))
    energies = basis.energies
    rng = np.random.default_rng(3)
    for m in rng.choice(np.nonzero((energies > 100.0) & (energies < 1150.0))[0], size=50, replace=False):
        lo, hi = energies[m], energies[m + 1]
        values = np.array([solver.branches(lo + f * (hi - lo)) for f in (0.1, 0.3, 0.5, 0.7, 0.9)])
        assert np.all(np.diff(values, axis=0) >= -1e-9 * (1 + np.abs(values[1:])))


def test_roots_continuous_in_coupling(basis):
    window = EnergyWindow(300.0, 330.0)
    base = solve_multi(problem(basis, 5, window, 5.0))
    nudged = solve_multi(problem(basis, 5, window, 5.0 + 1e-6))
    assert len(base) == len(nudged)
    assert np.max(np.abs(base.omegas - nudged.omegas)) <= 1e-4 * basis.mean_spacing


def test_worker_count_does_not_change_result(basis, monkeypatch):
    monkeypatch.delenv("SPECTRA_THREADS", raising=False)
    window = EnergyWindow(200.0, 230.0)
    serial = solve_multi(problem(basis, 3, window, workers=1))
    threaded = solve_multi(problem(basis, 3, window, workers=4))
    assert np.array_equal(serial.omegas, threaded.omegas)
    assert np.array_equal(serial.residuals, threaded.residuals)
    assert serial.flags == threaded.flags


def test_config_digest(basis):
    window = EnergyWindow(200.0, 210.0)
    first = problem(basis, 2, window).digest()
    assert first == problem(basis, 2, window).digest()
    assert first != problem(basis, 2, window, 5.5).digest()
    assert first != problem(basis, 2, window, tol_omega=1e-9).digest()
    assert first == problem(basis, 2, window, workers=3).digest()


def test_expansion_normalised_and_matches_direct_formula(basis):
    one = problem(basis, 1, EnergyWindow(500.0, 505.0))
    spectrum = solve_single(one)
    omega = float(spectrum.omegas[len(spectrum) // 2])
    expansion = eigenfunction_expansion(one, omega)
    assert np.sum(expansion.coefficients**2) == pytest.approx(1.0, abs=1e-12)

    bound = basis.bind(POSITIONS[:1])
    direct = bound.phi_cache[:, 0] / (omega - basis.energies)
    direct /= np.linalg.norm(direct)
    np.testing.assert_allclose(expansion.coefficients, direct, rtol=1e-9, atol=1e-14)
    assert expansion.norm > 0


def test_expansion_normalised_for_several_scatterers(basis):
    three = problem(basis, 3, EnergyWindow(600.0, 605.0))
    spectrum = solve_multi(three)
    for omega in spectrum.omegas[:3]:
        expansion = eigenfunction_expansion(three, float(omega))
        assert np.sum(expansion.coefficients**2) == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.isfinite(expansion.coefficients))


def test_normality_single_scatterer_is_exact(basis):
    one = problem(basis, 1, EnergyWindow(100.0, 110.0))
    assert normality_diagnostic(one, "coordinate") == 0.0
    assert normality_diagnostic(one, "metric") == 0.0


def test_normality_mirror_pair_in_coordinates(basis, billiard):
    x, y = 0.31, 0.47
    mirror = SecularProblem(
        basis,
        ScattererSet(positions=((x, y), (billiard.lx - x, y)), inverse_strengths=(5.0, 5.0)),
        EnergyWindow(100.0, 110.0),
    )
    assert normality_diagnostic(mirror, "coordinate") < 1e-8


def test_normality_metric_frame_on_reference_scatterers(basis):
    five = problem(basis, 5, EnergyWindow(100.0, 110.0))
    assert normality_diagnostic(five) <= 1e-6
    assert 1e-3 < normality_diagnostic(five, "coordinate") < 0.1


def test_normality_metric_frame_ignores_truncation(billiard):
    # 19 levels, no tail: G is far from converged, the metric frame is still normal
    coarse = SecularProblem(
        enumerate_basis(billiard, 25.0),
        scatterers(5),
        EnergyWindow(2.0, 10.0),
        SolverSettings(tail_correction=False),
    )
    assert len(coarse.basis) == 19
    assert normality_diagnostic(coarse, "metric") <= 1e-12
    assert normality_diagnostic(coarse, "coordinate") > 1e-3


def test_normality_metric_frame_normal_for_any_symmetric_kernel():
    rng = np.random.default_rng(7)
    b = rng.normal(size=(4, 4))
    r = rng.normal(size=(4, 4))
    lam = 1.5
    g = 0.5 * (r + r.T) - 1j * lam * (b @ b.T + np.eye(4))
    strengths = rng.uniform(2.0, 8.0, size=4)
    assert normality_deviation(strengths, g, lam, "metric") <= 1e-12
    assert normality_deviation(strengths, g, lam, "coordinate") > 1e-3


def test_normality_detects_non_normal_input():
    g = np.array([[0.0, 3.0], [0.0, 0.0]]) - 1j * np.eye(2)
    for frame in ("coordinate", "metric"):
        assert normality_deviation([0.0, 0.0], g, 1.0, frame) == pytest.approx(9 * math.sqrt(2) / 11, rel=1e-12)


def test_normality_singular_input_fails():
    with pytest.raises(DiagnosticError):
        normality_deviation([1.0, 1.0], np.eye(2, dtype=complex), 1.0, "coordinate")
    with pytest.raises(DiagnosticError):
        normality_deviation([1.0, 1.0], np.eye(2, dtype=complex), 1.0, "metric")
