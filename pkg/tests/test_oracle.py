import numpy as np
import pytest

from bgdm.errors import ParameterError, ShapeError
from bgdm.oracle import (DenseProblem, dense_proximal, dense_pseudo_inverse,
                         exact_gaussian_posterior, finite_diff_gradient, gd_least_squares,
                         operator_matrix, penrose_residuals, range_null_reference,
                         real_measurement_model, spectral_norm)
from bgdm.linops import MRIOperator, SROperator


def test_gd_toy_limit():
    p = DenseProblem(A=[[1.0, 0.0]], y=[2.0], x_bar=[0.0, 3.0])
    np.testing.assert_allclose(gd_least_squares(p, 0.5, 200), [2.0, 3.0], atol=1e-12)


def test_gd_square_invertible_ignores_start(rng):
    A = np.eye(5) + 0.1 * rng.standard_normal((5, 5))
    y = rng.standard_normal(5)
    alpha = 0.9 / np.linalg.norm(A, 2) ** 2
    for x_bar in (np.zeros(5), 10 * rng.standard_normal(5)):
        x = gd_least_squares(DenseProblem(A, y, x_bar), alpha, 2000)
        np.testing.assert_allclose(x, np.linalg.solve(A, y), atol=1e-9)


def test_gd_random_wide_matches_pseudo_inverse(rng):
    A = rng.standard_normal((8, 16))
    y = rng.standard_normal(8)
    x_bar = rng.standard_normal(16)
    alpha = 0.9 / np.linalg.norm(A, 2) ** 2
    x = gd_least_squares(DenseProblem(A, y, x_bar), alpha, 20_000)
    ref = range_null_reference(A, y, x_bar)
    assert np.linalg.norm(x - ref) <= 1e-6 * np.linalg.norm(ref)


def test_gd_residual_is_monotone(rng):
    A = rng.standard_normal((6, 12))
    p = DenseProblem(A, rng.standard_normal(6), rng.standard_normal(12))
    _, res = gd_least_squares(p, 0.99 / np.linalg.norm(A, 2) ** 2, 500, return_residuals=True)
    assert np.all(np.diff(res) <= 1e-12 * res[0])


@pytest.mark.parametrize("factor", [0.0, -1.0, 1.0, 2.0])
def test_gd_rejects_bad_step(rng, factor):
    A = rng.standard_normal((3, 4))
    with pytest.raises(ParameterError):
        gd_least_squares(DenseProblem(A, np.zeros(3)), factor / np.linalg.norm(A, 2) ** 2, 10)


def test_dense_problem_validation():
    with pytest.raises(ShapeError):
        DenseProblem(np.eye(3), np.zeros(2))
    with pytest.raises(ShapeError):
        DenseProblem(np.eye(3), np.zeros(3), x_bar=np.zeros(4))
    with pytest.raises(ParameterError):
        DenseProblem(np.zeros((1, 5000)), np.zeros(1))


def test_spectral_norm(rng):
    A = rng.standard_normal((7, 11))
    assert spectral_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-8)
    assert spectral_norm(np.zeros((3, 3))) == 0.0


def test_pseudo_inverse_examples(rng):
    np.testing.assert_array_equal(dense_pseudo_inverse(np.eye(4)), np.eye(4))
    np.testing.assert_allclose(dense_pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    for A in (rng.standard_normal((6, 10)), rng.standard_normal((6, 10)) + 1j):
        assert max(penrose_residuals(A, dense_pseudo_inverse(A))) <= 1e-10


def test_gaussian_posterior_limits(rng):
    mu0 = rng.standard_normal(4)
    y = rng.standard_normal(4)
    mean, cov = exact_gaussian_posterior(DenseProblem(np.eye(4), y, sigma_y=1e6,
                                                      prior_mean=mu0, prior_cov=np.eye(4)))
    np.testing.assert_allclose(mean, mu0, atol=1e-4)
    np.testing.assert_allclose(cov, np.eye(4), atol=1e-4)
    mean, cov = exact_gaussian_posterior(DenseProblem(np.eye(4), y, sigma_y=1.0,
                                                      prior_mean=mu0, prior_cov=np.eye(4)))
    np.testing.assert_allclose(mean, (mu0 + y) / 2, atol=1e-14)
    np.testing.assert_allclose(cov, np.eye(4) / 2, atol=1e-14)


def test_gaussian_posterior_matches_map_equations(rng):
    A = rng.standard_normal((5, 8))
    L = rng.standard_normal((8, 8))
    cov0 = L @ L.T + 0.5 * np.eye(8)
    mu0 = rng.standard_normal(8)
    y = rng.standard_normal(5)
    s = 0.3
    mean, _ = exact_gaussian_posterior(DenseProblem(A, y, sigma_y=s, prior_mean=mu0,
                                                    prior_cov=cov0))
    # MAP: (S0^-1 + A^T A / s^2) x = S0^-1 mu0 + A^T y / s^2, solved without forming inverses
    lhs = np.linalg.solve(cov0, np.eye(8)) + A.T @ A / s ** 2
    rhs = np.linalg.solve(cov0, mu0) + A.T @ y / s ** 2
    want = np.linalg.solve(lhs, rhs)
    assert np.linalg.norm(mean - want) <= 1e-10 * np.linalg.norm(want)


def test_gaussian_posterior_errors():
    with pytest.raises(ParameterError):
        exact_gaussian_posterior(DenseProblem(np.eye(2), np.zeros(2), sigma_y=1.0,
                                              prior_mean=np.zeros(2), prior_cov=np.zeros((2, 2))))
    with pytest.raises(ParameterError):
        exact_gaussian_posterior(DenseProblem(np.eye(2), np.zeros(2), prior_mean=np.zeros(2),
                                              prior_cov=np.eye(2)))


def test_finite_diff_gradient_examples(rng):
    x = rng.standard_normal((3, 3))
    np.testing.assert_allclose(finite_diff_gradient(lambda z: 0.5 * np.sum(z ** 2), x), x,
                               atol=1e-9)
    c = rng.standard_normal((3, 3))
    np.testing.assert_allclose(finite_diff_gradient(lambda z: np.sum(c * z), x), c, atol=1e-9)
    A = rng.standard_normal((4, 9))
    y = rng.standard_normal(4)
    v = x.ravel()
    g = finite_diff_gradient(lambda z: 0.5 * np.sum((y - A @ z) ** 2), v, h=1e-5)
    np.testing.assert_allclose(g, A.T @ (A @ v - y), atol=1e-6)
    with pytest.raises(ParameterError):
        finite_diff_gradient(np.sum, x, h=0.0)


def test_dense_proximal_stationarity(rng):
    A = rng.standard_normal((4, 6))
    y, x_ref = rng.standard_normal(4), rng.standard_normal(6)
    x = dense_proximal(A, y, x_ref, 0.2)
    np.testing.assert_allclose(A.T @ (A @ x - y) + 0.2 * (x - x_ref), 0, atol=1e-12)


def test_operator_matrix_matches_apply(rng):
    op = SROperator((4, 4), 2)
    A = operator_matrix(op)
    x = rng.standard_normal((4, 4))
    np.testing.assert_allclose(A @ x.ravel(), op.apply(x).ravel(), atol=1e-15)


def test_real_measurement_model_drops_silent_rows():
    mask = np.zeros((4, 4))
    mask[:, 0] = 1
    A, _, sig = real_measurement_model(MRIOperator(mask), 0.2)
    # column 0 holds 4 frequencies; rows 0 and 2 are self-conjugate so have no imaginary part
    assert A.shape == (6, 16)
    np.testing.assert_allclose(sig, 0.2 / np.sqrt(2))
