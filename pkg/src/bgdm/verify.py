"""Self-check suites comparing the fast code paths with dense references."""
from dataclasses import dataclass
import math

import numpy as np

from .guidance import proximal_solve, range_null_combine
from .linops import CTOperator, MaskSpec, MRIOperator, SROperator, generate_mask
from .oracle import (DenseProblem, dense_proximal, exact_gaussian_posterior, gd_least_squares,
                     operator_matrix, range_null_reference, real_measurement_model, spectral_norm)
from .prior import (GaussianMixturePrior, GMMScoreModel, conditional_posterior_mean,
                    gmm_posterior_mean, tweedie_mean)
from .schedule import make_linear_schedule
from .tensor import fft2, ifft2, inner


@dataclass
class SuiteResult:
    name: str
    passed: bool
    error: float
    tol: float
    detail: str = ""


def _rel(a, b):
    d = np.linalg.norm(np.ravel(a) - np.ravel(b))
    s = np.linalg.norm(np.ravel(b))
    return float(d / s) if s > 0 else float(d)


def _result(name, error, tol, what):
    passed = bool(error <= tol)
    detail = "" if passed else f"{what}: observed {error:.3e} > {tol:.1e}"
    return SuiteResult(name, passed, float(error), tol, detail)


def random_wide_problem(rng, max_m=16, max_n=32, max_cond=10.0):
    """Random problem with ``m <= n``, rank-deficient about half the time.

    Nonzero singular values lie in ``[1 / max_cond, 1]`` so that plain
    gradient descent converges in a bounded number of steps.
    """
    n = int(rng.integers(2, max_n + 1))
    m = int(rng.integers(1, min(max_m, n) + 1))
    r = m
    if m > 1 and rng.random() < 0.5:
        r = int(rng.integers(1, m))
    u, _ = np.linalg.qr(rng.standard_normal((m, m)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    s = rng.uniform(1.0 / max_cond, 1.0, r)
    A = (u[:, :r] * s) @ v[:, :r].T
    # rank-deficient problems get inconsistent data
    y = rng.standard_normal(m) if r < m else A @ rng.standard_normal(n)
    return DenseProblem(A, y, x_bar=rng.standard_normal(n))


def gradient_descent_limit(num_problems=50, iters=10_000, seed=0, tol=1e-6):
    """Gradient descent from ``x_bar`` lands on ``A^+ y + (I - A^+ A) x_bar``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(num_problems):
        p = random_wide_problem(rng)
        alpha = 0.9 / spectral_norm(p.A) ** 2
        # the power iteration can undershoot slightly; stay below 1/||A||^2
        alpha = min(alpha, 0.9 / np.linalg.norm(p.A, 2) ** 2)
        x = gd_least_squares(p, alpha, iters)
        worst = max(worst, _rel(x, range_null_reference(p.A, p.y, p.x_bar)))
    return _result("gradient-descent-limit", worst, tol, "relative error to range-null point")


def _mri_problem(rng, n=8, accel=4.0, pattern="gaussian1d"):
    op = MRIOperator(generate_mask(MaskSpec(pattern, accel, 0.08, int(rng.integers(1 << 30))),
                                   (n, n)))
    x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    y = op.apply(x) + op.mask * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return op, y


def proximal_vs_dense(lams=(1e-4, 1e-1, 10.0), seed=0, tol=1e-8, lam_perturbation=1.0):
    """Closed-form and CG proximal solves against a dense normal-equation solve.

    ``lam_perturbation != 1`` feeds a wrong lambda to the fast path only, which
    must make the suite fail.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    op, y = _mri_problem(rng)
    A = operator_matrix(op)
    for lam in lams:
        x_ref = rng.standard_normal(op.image_shape) + 1j * rng.standard_normal(op.image_shape)
        fast = proximal_solve(op, y, x_ref, lam * lam_perturbation)
        worst = max(worst, _rel(fast, dense_proximal(A, y.ravel(), x_ref.ravel(), lam)))
        # real reference image: minimiser restricted to real images
        x_real = rng.standard_normal(op.image_shape)
        A_r, y_r, _ = real_measurement_model(op, 1.0, y)
        fast = proximal_solve(op, y, x_real, lam * lam_perturbation)
        worst = max(worst, _rel(fast, dense_proximal(A_r, y_r, x_real.ravel(), lam)))
    for op in (SROperator((8, 8), 2), CTOperator((8, 8), 6)):
        A = operator_matrix(op)
        y = rng.standard_normal(op.measurement_shape)
        for lam in lams:
            x_ref = rng.standard_normal(op.image_shape)
            fast = proximal_solve(op, y, x_ref, lam * lam_perturbation)
            worst = max(worst, _rel(fast, dense_proximal(A, y.ravel(), x_ref.ravel(), lam)))
    return _result("proximal-vs-dense", worst, tol, "relative error of the proximal solve")


def range_null_vs_dense(seed=0, tol=1e-10):
    rng = np.random.default_rng(seed)
    worst = 0.0
    op, y = _mri_problem(rng)
    A = operator_matrix(op)
    x_bar = rng.standard_normal(op.image_shape) + 1j * rng.standard_normal(op.image_shape)
    fast = range_null_combine(op, y, x_bar)
    worst = max(worst, _rel(fast, range_null_reference(A, y.ravel(), x_bar.ravel())))
    op = SROperator((8, 8), 2)
    A = operator_matrix(op)
    y = rng.standard_normal(op.measurement_shape)
    x_bar = rng.standard_normal(op.image_shape)
    fast = range_null_combine(op, y, x_bar)
    worst = max(worst, _rel(fast, range_null_reference(A, y.ravel(), x_bar.ravel())))
    return _result("range-null-vs-dense", worst, tol, "relative error of the range-null point")


def random_gaussian_prior(rng, shape=(8, 8)):
    mu = rng.uniform(-1.0, 1.0, shape)
    var = rng.uniform(0.05, 2.0, shape)
    return GaussianMixturePrior(np.ones(1), mu[None], var[None])


def gaussian_conditional_mean(prior, x_t, a, extra=None):
    """Exact ``E[x0 | x_t (, y)]`` by stacking ``x_t`` as a noisy observation."""
    n = x_t.size
    rows = [np.sqrt(a) * np.eye(n)]
    obs = [x_t.ravel()]
    sig = [np.full(n, np.sqrt(1.0 - a))]
    if extra is not None:
        A, y, s = extra
        rows.append(A)
        obs.append(y)
        sig.append(s)
    p = DenseProblem(np.vstack(rows), np.concatenate(obs), sigma_y=np.concatenate(sig),
                     prior_mean=prior.means[0].ravel(),
                     prior_cov=np.diag(prior.variances[0].ravel()))
    return exact_gaussian_posterior(p)[0].reshape(x_t.shape)


def tweedie_vs_conditioning(timesteps=(10, 250, 600, 900), seed=0, tol=1e-10):
    """Tweedie mean from the exact score against direct Gaussian conditioning."""
    rng = np.random.default_rng(seed)
    schedule = make_linear_schedule()
    worst = 0.0
    prior = random_gaussian_prior(rng)
    model = GMMScoreModel(prior, schedule)
    for t in timesteps:
        a = schedule.alpha_bar_at(t)
        x_t = rng.standard_normal(prior.shape)
        worst = max(worst, _rel(tweedie_mean(model, x_t, t, schedule),
                                gaussian_conditional_mean(prior, x_t, a)))
    # mixtures: compare against per-component conditioning
    mix = GaussianMixturePrior(np.array([0.3, 0.7]), rng.standard_normal((2, 8, 8)),
                               rng.uniform(0.1, 1.0, (2, 8, 8)))
    model = GMMScoreModel(mix, schedule)
    for t in timesteps:
        x_t = rng.standard_normal(mix.shape)
        worst = max(worst, _rel(tweedie_mean(model, x_t, t, schedule),
                                gmm_posterior_mean(mix, x_t, t, schedule)))
    return _result("tweedie-vs-conditioning", worst, tol, "relative error of the Tweedie mean")


def exact_likelihood_score(prior, A, y, sig, x_t, a):
    """``grad_{x_t} log p(y | x_t)`` for a single diagonal Gaussian prior."""
    var = prior.variances[0].ravel()
    mu = prior.means[0].ravel()
    gain = np.sqrt(a) * var / (a * var + 1.0 - a)
    m_t = mu + gain * (x_t.ravel() - np.sqrt(a) * mu)
    c_t = var * (1.0 - a) / (a * var + 1.0 - a)
    S = (A * c_t) @ A.T + np.diag(sig ** 2)
    return (gain * (A.T @ np.linalg.solve(S, y - A @ m_t))).reshape(x_t.shape)


def posterior_mean_suite(timesteps=(50, 300, 700), sigma_y=0.1, seed=0, tol=1e-8):
    """Tweedie mean plus exact likelihood score equals ``E[x0 | x_t, y]``."""
    rng = np.random.default_rng(seed)
    schedule = make_linear_schedule()
    prior = random_gaussian_prior(rng)
    model = GMMScoreModel(prior, schedule)
    ops = (SROperator((8, 8), 2),
           MRIOperator(generate_mask(MaskSpec("cartesian_equispaced", 4.0, 0.08, 0), (8, 8))))
    worst = 0.0
    for op in ops:
        x0 = prior.sample(rng)
        A, _, sig = real_measurement_model(op, sigma_y)
        y = A @ x0.ravel() + sig * rng.standard_normal(A.shape[0])
        for t in timesteps:
            a = schedule.alpha_bar_at(t)
            x_t = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * rng.standard_normal(x0.shape)
            score = exact_likelihood_score(prior, A, y, sig, x_t, a)
            fast = conditional_posterior_mean(model, x_t, t, schedule, score)
            exact = gaussian_conditional_mean(prior, x_t, a, (A, y, sig))
            worst = max(worst, _rel(fast, exact))
    return _result("posterior-mean", worst, tol, "relative error of E[x0 | x_t, y]")


def adjoint_mismatch(op, rng, probes=100):
    """Worst relative gap of ``<A x, y>`` versus ``<x, A^H y>``."""
    worst = 0.0
    for _ in range(probes):
        x = rng.standard_normal(op.image_shape)
        if op.complex_measurements:
            x = x + 1j * rng.standard_normal(op.image_shape)
            y = rng.standard_normal(op.measurement_shape) + 1j * rng.standard_normal(
                op.measurement_shape)
        else:
            y = rng.standard_normal(op.measurement_shape)
        lhs = inner(op.apply(x), y)
        rhs = inner(x, op.adjoint(y))
        scale = np.linalg.norm(op.apply(x)) * np.linalg.norm(y)
        worst = max(worst, abs(lhs - rhs) / scale)
    return float(worst)


def fft_unitarity_error(rng, shape=(16, 16)):
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    w = fft2(x)
    return max(abs(np.linalg.norm(w) - np.linalg.norm(x)) / np.linalg.norm(x),
               _rel(ifft2(w), x))


def adjoint_suite(seed=0, probes=100):
    rng = np.random.default_rng(seed)
    mri = MRIOperator(generate_mask(MaskSpec("gaussian1d", 4.0, 0.08, 0), (16, 16)))
    errs = {
        "mri": (adjoint_mismatch(mri, rng, probes), 1e-10),
        "sr": (adjoint_mismatch(SROperator((16, 16), 2), rng, probes), 1e-10),
        "ct": (adjoint_mismatch(CTOperator((16, 16), 12), rng, probes), 1e-6),
        "fft": (fft_unitarity_error(rng), 1e-12),
    }
    bad = [f"{k}: {e:.3e} > {tol:.0e}" for k, (e, tol) in errs.items() if e > tol]
    ratio = max(e / tol for e, tol in errs.values())
    return SuiteResult("adjoint-test", not bad, ratio, 1.0, "; ".join(bad))


def run_all(mutation=False, fast=False):
    """Run every suite; ``fast`` shrinks the gradient-descent suite."""
    return [
        gradient_descent_limit(num_problems=10 if fast else 50),
        proximal_vs_dense(lam_perturbation=1.01 if mutation else 1.0),
        range_null_vs_dense(),
        tweedie_vs_conditioning(),
        adjoint_suite(),
        posterior_mean_suite(),
    ]


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'suite'.ljust(width)}  status  {'error':>10}  {'tol':>8}"]
    for r in results:
        err = "nan" if math.isnan(r.error) else f"{r.error:.3e}"
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL':6}  "
                     f"{err:>10}  {r.tol:>8.0e}")
        if r.detail:
            lines.append(f"  {r.detail}")
    return "\n".join(lines)
