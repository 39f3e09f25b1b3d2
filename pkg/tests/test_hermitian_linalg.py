import numpy as np
import pytest

from Errors import DimensionError, LinalgError
from HermitianLinalg import (
    PHASE_TIE_TOL,
    HermitianMatrix,
    _fix_phase,
    hermitian_eig,
    min_eigvec_row,
    scaled_covariance,
    weighted_covariance,
)


def _random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (a + a.conj().T) / 2


def test_weighted_covariance_single_frame() -> None:
    cov = weighted_covariance(np.array([[1, 0]]), np.array([1.0]))
    np.testing.assert_array_equal(cov.entries, [[1, 0], [0, 0]])


def test_weighted_covariance_weight_divides() -> None:
    cov = weighted_covariance(np.array([[1, 0]]), np.array([2.0]))
    np.testing.assert_array_equal(cov.entries, [[0.5, 0], [0, 0]])


def test_weighted_covariance_hand_computed() -> None:
    cov = weighted_covariance(np.array([[1, 1j], [1, -1]]), np.ones(2)).entries
    assert cov[0, 0] == pytest.approx(1.0)
    assert cov[0, 1] == pytest.approx((-1j - 1) / 2)
    assert cov[1, 0] == pytest.approx((1j - 1) / 2)
    assert cov[1, 1] == pytest.approx(1.0)
    assert cov[1, 1].imag == 0.0


@pytest.mark.parametrize("weights", [[1.0, 0.0], [1.0, -2.0], [1.0, np.inf]])
def test_weighted_covariance_rejects_bad_weights(weights) -> None:
    with pytest.raises(LinalgError):
        weighted_covariance(np.ones((2, 2)), np.array(weights))


def test_weighted_covariance_rejects_empty_input() -> None:
    with pytest.raises(DimensionError):
        weighted_covariance(np.zeros((0, 2)), np.zeros(0))


def test_weighted_covariance_is_batched() -> None:
    rng = np.random.default_rng(0)
    frames = rng.standard_normal((3, 10, 2)) + 1j * rng.standard_normal((3, 10, 2))
    weights = rng.uniform(0.5, 2, size=(3, 10))
    stacked = weighted_covariance(frames, weights).entries
    for f in range(3):
        single = weighted_covariance(frames[f], weights[f]).entries
        np.testing.assert_allclose(stacked[f], single, atol=1e-14)


def test_identity_keeps_index_order() -> None:
    result = hermitian_eig(np.eye(2))
    np.testing.assert_array_equal(result.eigenvalues, [1, 1])
    np.testing.assert_array_equal(result.eigenvectors, np.eye(2))


def test_diagonal_matrix() -> None:
    result = hermitian_eig(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(result.eigenvalues, [3, 1])
    np.testing.assert_allclose(result.eigenvectors, np.eye(2), atol=1e-15)


def test_two_by_two_analytic() -> None:
    result = hermitian_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(result.eigenvalues, [3, 1], atol=1e-12)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(result.eigenvectors[:, 0], [s, s], atol=1e-12)
    np.testing.assert_allclose(result.eigenvectors[:, 1], [s, -s], atol=1e-12)


def test_min_eigvec_row_examples() -> None:
    np.testing.assert_allclose(min_eigvec_row(np.diag([3.0, 1.0])), [0, 1], atol=1e-15)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(min_eigvec_row(np.array([[2.0, 1.0], [1.0, 2.0]])), [s, -s], atol=1e-12)
    # при совпадающих собственных значениях берётся последний индекс
    np.testing.assert_array_equal(min_eigvec_row(np.eye(2)), [0, 1])


def test_min_eigvec_row_is_conjugated() -> None:
    m = np.array([[2.0, 1j], [-1j, 2.0]])
    row = min_eigvec_row(m)
    column = hermitian_eig(m).eigenvectors[:, -1]
    np.testing.assert_allclose(row, column.conj())
    np.testing.assert_allclose(m @ row.conj(), 1.0 * row.conj(), atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 6, 8])
def test_random_decomposition_properties(n: int) -> None:
    rng = np.random.default_rng(n)
    m = _random_hermitian(rng, n)
    result = hermitian_eig(m)
    values, vectors = result.eigenvalues, result.eigenvectors
    scale = max(1.0, np.max(np.abs(m)))

    assert np.all(np.diff(values) <= 0)
    reconstruction = (vectors * values) @ vectors.conj().T
    assert np.max(np.abs(reconstruction - m)) <= 1e-9 * scale
    np.testing.assert_allclose(vectors.conj().T @ vectors, np.eye(n), atol=1e-10)
    residual = np.linalg.norm(m @ vectors - vectors * values, axis=0)
    assert np.all(residual <= 1e-10 * max(1.0, np.linalg.norm(m)))
    np.testing.assert_allclose(np.sort(values), np.linalg.eigvalsh(m), atol=1e-10 * scale)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_phase_convention(n: int) -> None:
    """Наибольший по модулю элемент каждого вектора вещественный и неотрицательный."""
    rng = np.random.default_rng(100 + n)
    vectors = hermitian_eig(_random_hermitian(rng, n)).eigenvectors
    for column in vectors.T:
        lead = column[np.argmax(np.abs(column))]
        assert lead.imag == 0.0
        assert lead.real >= 0.0


def test_phase_lead_is_first_entry_within_tie_window() -> None:
    """Почти равные модули: ведущим остаётся первый элемент."""
    near_tie = np.array([[1j], [-(1.0 + 0.5 * PHASE_TIE_TOL) + 0j]]) / np.sqrt(2.0)
    fixed = _fix_phase(near_tie)
    assert fixed[0, 0].imag == 0.0
    assert fixed[0, 0].real > 0.0
    assert fixed[1, 0].real == 0.0
    assert fixed[1, 0].imag > abs(fixed[0, 0])


def test_phase_lead_moves_to_clearly_larger_entry() -> None:
    clear = np.array([[1j], [-(1.0 + 1e-6) + 0j]]) / np.sqrt(2.0)
    fixed = _fix_phase(clear)
    assert fixed[1, 0].imag == 0.0
    assert fixed[1, 0].real > 0.0
    assert abs(fixed[0, 0].real) < 1e-15


def test_scaled_covariance_multiplies_by_gains() -> None:
    frames = np.array([[1, 1j], [1, -1]])
    np.testing.assert_allclose(
        scaled_covariance(frames, np.array([0.5, 0.25])).entries,
        weighted_covariance(frames, np.array([2.0, 4.0])).entries,
        atol=1e-15,
    )
    assert not np.any(scaled_covariance(frames, np.zeros(2)).entries)
    with pytest.raises(LinalgError):
        scaled_covariance(frames, np.array([1.0, -1.0]))
    with pytest.raises(LinalgError):
        weighted_covariance(frames, np.array([1.0, 1e-320]))


def test_batched_matches_single_solves() -> None:
    rng = np.random.default_rng(5)
    stack = np.stack([_random_hermitian(rng, 4) for _ in range(6)])
    batched = hermitian_eig(stack)
    for f in range(6):
        single = hermitian_eig(stack[f])
        np.testing.assert_allclose(batched.eigenvalues[f], single.eigenvalues, atol=1e-12)
        np.testing.assert_allclose(batched.eigenvectors[f], single.eigenvectors, atol=1e-10)


def test_deterministic_output() -> None:
    rng = np.random.default_rng(9)
    m = _random_hermitian(rng, 5)
    first, second = hermitian_eig(m), hermitian_eig(m.copy())
    np.testing.assert_array_equal(first.eigenvalues, second.eigenvalues)
    np.testing.assert_array_equal(first.eigenvectors, second.eigenvectors)


def test_covariance_eigenvalues_are_nonnegative() -> None:
    rng = np.random.default_rng(2)
    frames = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    cov = weighted_covariance(frames, np.ones(3))
    values = hermitian_eig(cov).eigenvalues
    assert np.all(values >= -1e-10 * np.linalg.norm(cov.entries))


def test_rejects_non_hermitian_and_non_finite() -> None:
    with pytest.raises(LinalgError):
        HermitianMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(LinalgError):
        hermitian_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(DimensionError):
        HermitianMatrix(np.ones((2, 3)))
