"""
Tests for the regularized Green's-function kernel
"""

import numpy as np
import pytest

from conftest import POSITIONS, scatterers
from services.errors import DomainError, PoleProximityError, TruncationUnsafeError
from services.green_kernel import (
    GreenKernel,
    KernelSettings,
    ScattererSet,
    green_diag,
    green_matrix,
    green_matrix_imaginary,
    green_offdiag,
)
from services.rect_basis import enumerate_basis


@pytest.fixture(scope="module")
def kernel5(basis):
    return GreenKernel(basis, scatterers(5))


def interval_points(energies, m, fractions):
    lo, hi = energies[m], energies[m + 1]
    return [lo + f * (hi - lo) for f in fractions]


def test_scatterer_set_validation():
    with pytest.raises(ValueError):
        ScattererSet(positions=((0.1, 0.2), (0.1, 0.2)), inverse_strengths=(1.0, 1.0))
    with pytest.raises(ValueError):
        ScattererSet(positions=((0.1, 0.2),), inverse_strengths=(1.0, 2.0))
    with pytest.raises(ValueError):
        ScattererSet(positions=(), inverse_strengths=())


def test_boundary_scatterer_rejected(basis):
    boundary = ScattererSet(positions=((0.0, 0.5),), inverse_strengths=(5.0,))
    with pytest.raises(DomainError):
        GreenKernel(basis, boundary)


def test_first_scatterers():
    subset = scatterers(5).first(3, 7.5)
    assert subset.positions == tuple(POSITIONS[:3])
    assert subset.inverse_strengths == (7.5, 7.5, 7.5)
    with pytest.raises(DomainError):
        scatterers(2).first(3)


def test_single_scatterer_matrix_is_diag(basis):
    evaluation = green_matrix(basis, scatterers(1), 500.5)
    assert evaluation.matrix.shape == (1, 1)
    bound = basis.bind(POSITIONS[:1])
    assert evaluation.matrix[0, 0] == pytest.approx(green_diag(bound, 0, 500.5), rel=1e-14)
    assert evaluation.truncation_error_bound > 0


def test_matrix_exactly_symmetric(kernel5):
    for omega in (150.25, 500.5, 1100.75):
        matrix = kernel5.matrix(omega)
        assert np.array_equal(matrix, matrix.T)


def test_matrix_matches_elements(kernel5):
    matrix = kernel5.matrix(500.5)
    for k in range(5):
        assert matrix[k, k] == pytest.approx(kernel5.diag(k, 500.5), rel=1e-12)
        for l in range(k + 1, 5):
            assert matrix[k, l] == pytest.approx(kernel5.offdiag(k, l, 500.5), rel=1e-10, abs=1e-12)
            assert kernel5.offdiag(k, l, 500.5) == kernel5.offdiag(l, k, 500.5)


def test_offdiag_requires_distinct(kernel5):
    with pytest.raises(DomainError):
        kernel5.offdiag(2, 2, 500.5)
    with pytest.raises(DomainError):
        green_offdiag(kernel5.basis, 1, 1, 500.5)


def test_diag_decreasing_within_intervals(kernel5):
    energies = kernel5.basis.energies
    rng = np.random.default_rng(11)
    hosts = rng.choice(np.nonzero(energies[1:] < 1200.0)[0], size=100, replace=False)
    for m in hosts:
        values = [kernel5.diag(0, w) for w in interval_points(energies, m, [0.1, 0.3, 0.5, 0.7, 0.9])]
        assert np.all(np.diff(values) < 0)


def test_diag_blows_up_above_pole(kernel5):
    energies = kernel5.basis.energies
    weights = kernel5.basis.phi_cache[:, 0] ** 2
    m = int(np.nonzero((energies > 400.0) & (weights > 0.5))[0][0])
    first = min(1e-2, 0.1 * (energies[m + 1] - energies[m]))
    values = [kernel5.diag(0, energies[m] + d) for d in (first, 1e-2 * first, 1e-4 * first)]
    assert values[0] < values[1] < values[2]
    assert values[2] > 1e5


def test_pole_proximity_refused(kernel5):
    energies = kernel5.basis.energies
    with pytest.raises(PoleProximityError) as info:
        kernel5.matrix(float(energies[300]))
    assert info.value.level_index == 300


def test_truncation_unsafe_refused(kernel5):
    with pytest.raises(TruncationUnsafeError):
        kernel5.diag(0, 1350.0)


def test_derivative_is_positive_semidefinite(kernel5):
    energies = kernel5.basis.energies
    h = 1e-6
    for m in (120, 480, 900):
        omega = 0.5 * (energies[m] + energies[m + 1])
        derivative = -(kernel5.matrix(omega + h) - kernel5.matrix(omega - h)) / (2 * h)
        eigenvalues = np.linalg.eigvalsh(0.5 * (derivative + derivative.T))
        assert eigenvalues.min() >= -1e-6 * eigenvalues.max()


def test_agrees_with_high_cutoff_summation(billiard, basis):
    reference = GreenKernel(enumerate_basis(billiard, 26000.0), scatterers(5))
    kernel = GreenKernel(basis, scatterers(5))
    omega = 500.5
    tolerance = kernel.truncation_bound(omega) + reference.truncation_bound(omega)
    difference = np.abs(kernel.matrix(omega) - reference.matrix(omega))
    assert difference.max() <= tolerance


@pytest.mark.parametrize("omega", [150.5, 500.5, 900.5])
def test_truncation_bound_dominates_cutoff_doubling(billiard, basis, omega):
    doubled = GreenKernel(enumerate_basis(billiard, 5200.0), scatterers(3))
    kernel = GreenKernel(basis, scatterers(3))
    difference = np.abs(kernel.matrix(omega) - doubled.matrix(omega))
    assert difference.max() <= kernel.truncation_bound(omega)


def test_tail_correction_reduces_cutoff_drift(billiard):
    low = enumerate_basis(billiard, 2000.0)
    high = enumerate_basis(billiard, 4000.0)
    omega = 500.5

    def drift(tail_correction):
        settings = KernelSettings(tail_correction=tail_correction)
        return abs(green_diag(high.bind(POSITIONS[:1]), 0, omega, settings) - green_diag(low.bind(POSITIONS[:1]), 0, omega, settings))

    assert drift(True) * 5 <= drift(False)


def test_cutoff_doubling_drift_shrinks(billiard):
    omega = 500.5
    matrices = [
        GreenKernel(enumerate_basis(billiard, 1200.0 * 2**k), scatterers(5)).matrix(omega)
        for k in range(6)
    ]
    drifts = [np.abs(b - a) for a, b in zip(matrices, matrices[1:])]
    diagonal = [float(np.diag(d).max()) for d in drifts]
    off_diagonal = [float((d - np.diag(np.diag(d))).max()) for d in drifts]

    assert all(b < a for a, b in zip(diagonal, diagonal[1:]))
    assert diagonal[-1] < diagonal[0] / 100
    # off-diagonal sums converge through oscillating phases, so only the trend is monotone
    assert max(off_diagonal[2:]) < off_diagonal[0]
    assert off_diagonal[-1] < off_diagonal[0] / 5


def test_imaginary_matrix(basis):
    plus = green_matrix_imaginary(basis, scatterers(3), 1)
    minus = green_matrix_imaginary(basis, scatterers(3), -1)
    assert np.array_equal(plus, plus.T)
    np.testing.assert_allclose(minus, plus.conj(), rtol=1e-12)
    # -Im G(i Lambda) / Lambda is a Gram matrix
    assert np.linalg.eigvalsh(-plus.imag).min() > 0
    with pytest.raises(DomainError):
        green_matrix_imaginary(basis, scatterers(3), 2)


def test_unbound_basis_rejected(basis):
    with pytest.raises(DomainError):
        GreenKernel(basis)
