import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bgdm.errors import CapabilityError, ParameterError, ShapeError, SolverError
from bgdm.guidance import (GuidanceConfig, acpm_step, conjugate_gradient, likelihood_gradient,
                           proximal_solve, range_null_combine, refinement_step, scoremed_project)
from bgdm.linops import CTOperator, MRIOperator, MaskSpec, SROperator, generate_mask
from bgdm.oracle import dense_proximal, finite_diff_gradient, operator_matrix, stack_real
from bgdm.prior import GaussianMixturePrior, GMMScoreModel, predict_x0
from bgdm.verify import random_gaussian_prior

SHAPE = (8, 8)


def _mri(accel=4.0):
    return MRIOperator(generate_mask(MaskSpec(acceleration=accel), SHAPE))


def _mixture(rng):
    return GaussianMixturePrior([0.4, 0.6], rng.uniform(0, 1, (2,) + SHAPE),
                                rng.uniform(0.05, 0.3, (2,) + SHAPE))


@pytest.mark.parametrize("mode", ["exact_gaussian", "identity_approx", "finite_diff_jvp"])
def test_gradient_vanishes_on_consistent_data(schedule, rng, mode):
    model = GMMScoreModel(random_gaussian_prior(rng), schedule)
    op = _mri()
    x = rng.standard_normal(SHAPE)
    y = op.apply(predict_x0(model, x, 200, schedule)[0])
    g = likelihood_gradient(model, op, y, x, 200, schedule, GuidanceConfig(jacobian_mode=mode))
    assert np.linalg.norm(g) < 1e-12


@pytest.mark.parametrize("mode", ["exact_gaussian", "finite_diff_jvp"])
@pytest.mark.parametrize("op_name", ["mri", "sr"])
def test_gradient_matches_finite_differences(schedule, mode, op_name):
    rng = np.random.default_rng(5)
    model = GMMScoreModel(random_gaussian_prior(rng), schedule)
    op = _mri() if op_name == "mri" else SROperator(SHAPE, 2)
    y = op.apply(rng.uniform(0, 1, SHAPE))
    t = 350

    def loss(z):
        r = op.apply(predict_x0(model, z, t, schedule)[0]) - y
        return 0.5 * float(np.vdot(r, r).real)

    x = rng.standard_normal(SHAPE)
    fd = finite_diff_gradient(loss, x, h=1e-5)
    got = likelihood_gradient(model, op, y, x, t, schedule, GuidanceConfig(jacobian_mode=mode))
    assert np.linalg.norm(got - fd) <= 1e-6 * np.linalg.norm(fd)


def test_finite_diff_jacobian_handles_mixtures(schedule):
    rng = np.random.default_rng(8)
    model = GMMScoreModel(_mixture(rng), schedule)
    op = SROperator(SHAPE, 2)
    y = op.apply(rng.uniform(0, 1, SHAPE))
    t = 500

    def loss(z):
        r = op.apply(predict_x0(model, z, t, schedule)[0]) - y
        return 0.5 * float(np.sum(r ** 2))

    x = rng.standard_normal(SHAPE)
    fd = finite_diff_gradient(loss, x, h=1e-5)
    got = likelihood_gradient(model, op, y, x, t, schedule, GuidanceConfig())
    assert np.linalg.norm(got - fd) <= 1e-5 * np.linalg.norm(fd)
    with pytest.raises(CapabilityError):
        likelihood_gradient(model, op, y, x, t, schedule,
                            GuidanceConfig(jacobian_mode="exact_gaussian"))


def test_identity_approx_formula(schedule, rng):
    model = GMMScoreModel(_mixture(rng), schedule)
    op = SROperator(SHAPE, 2)
    x = rng.standard_normal(SHAPE)
    y = rng.standard_normal((4, 4))
    t = 123
    x0t = predict_x0(model, x, t, schedule)[0]
    expected = op.adjoint(op.apply(x0t) - y) / np.sqrt(schedule.alpha_bar[t])
    got = likelihood_gradient(model, op, y, x, t, schedule,
                              GuidanceConfig(jacobian_mode="identity_approx"))
    np.testing.assert_allclose(got, expected, rtol=1e-13)


def test_pseudo_inverse_transport(schedule, rng):
    model = GMMScoreModel(_mixture(rng), schedule)
    op = SROperator(SHAPE, 2)
    x = rng.standard_normal(SHAPE)
    y = rng.standard_normal((4, 4))
    cfg = GuidanceConfig(jacobian_mode="identity_approx")
    g_adj = likelihood_gradient(model, op, y, x, 10, schedule, cfg)
    g_pinv = likelihood_gradient(model, op, y, x, 10, schedule,
                                 cfg.with_(dps_transport="pseudo_inverse"))
    # for block averaging A^+ = 4 A^T
    np.testing.assert_allclose(g_pinv, 4 * g_adj, rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([2.0, 4.0, 8.0]))
def test_range_null_properties(seed, accel):
    rng = np.random.default_rng(seed)
    op = _mri(accel)
    y = op.apply(rng.standard_normal(SHAPE))
    x_bar = rng.standard_normal(SHAPE)
    out = range_null_combine(op, y, x_bar)
    assert np.isrealobj(out)
    np.testing.assert_allclose(op.apply(out), y, atol=1e-12)
    np.testing.assert_allclose(range_null_combine(op, y, out), out, atol=1e-12)
    # unacquired frequencies come from x_bar
    unseen = op.mask == 0
    np.testing.assert_allclose(np.fft.fft2(out, norm="ortho")[unseen],
                               np.fft.fft2(x_bar, norm="ortho")[unseen], atol=1e-12)


def test_range_null_full_mask_returns_data(rng):
    op = MRIOperator(np.ones(SHAPE))
    x = rng.standard_normal(SHAPE)
    np.testing.assert_allclose(range_null_combine(op, op.apply(x), rng.standard_normal(SHAPE)),
                               x, atol=1e-13)


def test_range_null_super_resolution(rng):
    op = SROperator(SHAPE, 2)
    y = rng.standard_normal((4, 4))
    x_bar = rng.standard_normal(SHAPE)
    out = range_null_combine(op, y, x_bar)
    np.testing.assert_allclose(op.apply(out), y, atol=1e-13)
    # each 2x2 block keeps the shape of x_bar and takes the mean from y
    blocks = (out - x_bar).reshape(4, 2, 4, 2)
    assert np.allclose(blocks, blocks[:, :1, :, :1], atol=1e-13)
    with pytest.raises(ShapeError):
        range_null_combine(op, y, np.zeros((4, 4)))


def test_scoremed_projection(schedule, rng):
    op = _mri()
    y = op.apply(rng.standard_normal(SHAPE))
    x0t = rng.standard_normal(SHAPE)
    eps = rng.standard_normal(SHAPE)
    t = 400
    a = schedule.alpha_bar[t]
    got = scoremed_project(op, y, x0t, t, schedule, eps)
    expected = np.sqrt(a) * range_null_combine(op, y, x0t) + np.sqrt(1 - a) * eps
    np.testing.assert_allclose(got, expected, rtol=1e-14)
    with pytest.raises(ShapeError):
        scoremed_project(op, y, x0t, t, schedule, eps[:4])


def test_scoremed_noise_statistics(schedule):
    """With y = 0 and x0t = 0 the projection is pure noise of variance 1 - abar."""
    rng = np.random.default_rng(3)
    op = _mri()
    t = 300
    draws = np.stack([scoremed_project(op, np.zeros(SHAPE, complex), np.zeros(SHAPE), t,
                                       schedule, rng.standard_normal(SHAPE))
                      for _ in range(2000)])
    var = draws.var()
    expected = 1 - schedule.alpha_bar[t]
    # variance of a sample variance over 128000 standard normal values
    assert abs(var - expected) <= 3 * expected * np.sqrt(2 / draws.size)


@pytest.mark.parametrize("op_name", ["mri", "sr", "ct"])
def test_proximal_matches_dense_solve(rng, op_name):
    op = {"mri": _mri(), "sr": SROperator(SHAPE, 2), "ct": CTOperator(SHAPE, 6)}[op_name]
    y = op.apply(rng.standard_normal(SHAPE))
    x_ref = rng.standard_normal(SHAPE)
    A = operator_matrix(op, complex_input=False)
    yv = np.asarray(y).ravel()
    if np.iscomplexobj(A):
        A, yv = stack_real(A, yv)
    for lam in (1e-3, 0.1, 10.0):
        got = proximal_solve(op, y, x_ref, lam)
        want = dense_proximal(A, yv, x_ref.ravel(), lam).reshape(SHAPE)
        assert np.linalg.norm(got - want) <= 1e-8 * np.linalg.norm(want)


def test_proximal_complex_reference_formula(rng):
    op = _mri()
    y = op.apply(rng.standard_normal(SHAPE) + 1j * rng.standard_normal(SHAPE))
    x_ref = rng.standard_normal(SHAPE) + 1j * rng.standard_normal(SHAPE)
    got = proximal_solve(op, y, x_ref, 0.1)
    A = operator_matrix(op, complex_input=True)
    want = dense_proximal(A, y.ravel(), x_ref.ravel(), 0.1).reshape(SHAPE)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_proximal_limits(rng):
    op = _mri()
    x = rng.standard_normal(SHAPE)
    y = op.apply(x)
    x_ref = rng.standard_normal(SHAPE)
    np.testing.assert_allclose(proximal_solve(op, y, x_ref, 1e12), x_ref, atol=1e-10)
    full = MRIOperator(np.ones(SHAPE))
    np.testing.assert_allclose(proximal_solve(full, full.apply(x), x_ref, 1e-12), x, atol=1e-10)
    np.testing.assert_allclose(proximal_solve(op, y, x_ref, 1e-10),
                               range_null_combine(op, y, x_ref), atol=1e-6)


def test_proximal_stationarity(rng):
    op = CTOperator(SHAPE, 5)
    y = op.apply(rng.standard_normal(SHAPE)) + 0.1 * rng.standard_normal((5, 8))
    x_ref = rng.standard_normal(SHAPE)
    lam = 0.3
    x = proximal_solve(op, y, x_ref, lam)
    grad = op.adjoint(op.apply(x) - y) + lam * (x - x_ref)
    assert np.linalg.norm(grad) <= 1e-8 * np.linalg.norm(op.adjoint(y))


def test_proximal_rejects_bad_input(rng):
    op = _mri()
    with pytest.raises(ParameterError):
        proximal_solve(op, op.apply(np.zeros(SHAPE)), np.zeros(SHAPE), 0.0)
    with pytest.raises(ShapeError):
        proximal_solve(op, op.apply(np.zeros(SHAPE)), np.zeros((4, 4)), 1.0)


def test_conjugate_gradient(rng):
    M = rng.standard_normal((10, 10))
    H = M @ M.T + 0.1 * np.eye(10)
    b = rng.standard_normal(10)
    x, iters, res = conjugate_gradient(lambda v: H @ v, b, np.zeros(10))
    np.testing.assert_allclose(x, np.linalg.solve(H, b), rtol=1e-7)
    assert res <= 1e-10 and iters <= 60
    with pytest.raises(SolverError) as info:
        conjugate_gradient(lambda v: H @ v, b, np.zeros(10), maxiter=2)
    assert info.value.iterations == 2 and info.value.residual > 1e-10


def test_acpm_zero_zeta_is_tweedie(schedule, rng):
    model = GMMScoreModel(_mixture(rng), schedule)
    x = rng.standard_normal(SHAPE)
    op = _mri()
    out = acpm_step(model, op, op.apply(rng.standard_normal(SHAPE)), x, 100, schedule, 0.0)
    np.testing.assert_array_equal(out, predict_x0(model, x, 100, schedule)[0])
    with pytest.raises(ParameterError):
        acpm_step(model, op, op.apply(x), x, 100, schedule, -1.0)


def test_acpm_small_step_lowers_data_misfit(schedule, rng):
    model = GMMScoreModel(random_gaussian_prior(rng), schedule)
    op = _mri()
    y = op.apply(rng.uniform(0, 1, SHAPE))
    x = rng.standard_normal(SHAPE)
    cfg = GuidanceConfig(jacobian_mode="exact_gaussian")
    misfit = [np.linalg.norm(op.apply(acpm_step(model, op, y, x, 300, schedule, z, cfg)) - y)
              for z in (0.0, 0.01, 0.1)]
    assert misfit[2] < misfit[1] < misfit[0]


def test_refinement_step():
    x_hat = np.array([1.0, 2.0])
    x0t = np.array([0.0, 1.0])
    np.testing.assert_allclose(refinement_step(x_hat, x0t, 0.25), [0.5, 1.5])
    np.testing.assert_allclose(refinement_step(x_hat, x0t, 0.25, "literal_paper"), [1.5, 2.5])
    np.testing.assert_array_equal(refinement_step(x_hat, x0t, 0.0), x_hat)
    # gamma = 1/2 lands on the prior estimate
    np.testing.assert_allclose(refinement_step(x_hat, x0t, 0.5), x0t)
    with pytest.raises(ParameterError):
        refinement_step(x_hat, x0t, -1.0)
    with pytest.raises(ParameterError):
        refinement_step(x_hat, x0t, 1.0, "sideways")


@pytest.mark.parametrize("bad", [dict(scheme="magic"), dict(lam=0.0), dict(zeta=-1.0),
                                 dict(eta=1.5), dict(jacobian_mode="exact"),
                                 dict(fd_step=0.0), dict(refinement_variant="x")])
def test_guidance_config_validation(bad):
    with pytest.raises(ParameterError):
        GuidanceConfig(**bad)


def test_guidance_config_with():
    cfg = GuidanceConfig().with_(zeta=3.0)
    assert cfg.zeta == 3.0 and cfg.scheme == "bgdm"
