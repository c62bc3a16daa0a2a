"""Dense brute-force references used to check the fast paths.

Everything here works on explicit matrices and is capped at desk scale
(at most ``MAX_UNKNOWNS`` unknowns).
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError, ShapeError

MAX_UNKNOWNS = 4096


@dataclass
class DenseProblem:
    """Linear Gaussian problem ``y = A x + n``.

    ``sigma_y`` may be a scalar or one standard deviation per measurement.
    """

    A: np.ndarray
    y: np.ndarray
    x_bar: Optional[np.ndarray] = None
    sigma_y: Optional[object] = None
    prior_mean: Optional[np.ndarray] = None
    prior_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A))
        self.y = np.asarray(self.y).ravel()
        m, n = self.A.shape
        if n > MAX_UNKNOWNS or m > MAX_UNKNOWNS:
            raise ParameterError(f"dense problem {m}x{n} exceeds the {MAX_UNKNOWNS} cap")
        if self.y.size != m:
            raise ShapeError(f"y has {self.y.size} entries, A has {m} rows")
        if self.x_bar is not None:
            self.x_bar = np.asarray(self.x_bar).ravel()
            if self.x_bar.size != n:
                raise ShapeError(f"x_bar has {self.x_bar.size} entries, A has {n} columns")


def spectral_norm(A, iters=100, seed=0):
    """Largest singular value by power iteration on ``A^H A``."""
    A = np.asarray(A)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    if np.iscomplexobj(A):
        v = v + 1j * rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(iters):
        w = A.conj().T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        s = np.sqrt(nw)
    return float(s)


def gd_least_squares(p, alpha, iters, return_residuals=False):
    """Plain gradient descent on ``||y - A x||^2`` started at ``p.x_bar``.

    Iterates ``x <- x + alpha A^T (y - A x)``; requires
    ``0 < alpha < 1 / ||A||^2``.
    """
    A = p.A
    norm2 = np.linalg.norm(A, 2) ** 2
    if not (0 < alpha < 1.0 / norm2):
        raise ParameterError(f"alpha={alpha} outside (0, 1/||A||^2 = {1.0 / norm2:.6g})")
    x = np.zeros(A.shape[1], dtype=np.result_type(A, p.y)) if p.x_bar is None else p.x_bar.copy()
    At = A.conj().T
    residuals = []
    for _ in range(int(iters)):
        r = p.y - A @ x
        if return_residuals:
            residuals.append(float(np.linalg.norm(r)))
        x = x + alpha * (At @ r)
    if return_residuals:
        residuals.append(float(np.linalg.norm(p.y - A @ x)))
        return x, np.array(residuals)
    return x


def dense_pseudo_inverse(A, rcond=1e-12):
    """Moore-Penrose pseudo-inverse from the SVD."""
    A = np.atleast_2d(np.asarray(A))
    if A.shape[0] * A.shape[1] > MAX_UNKNOWNS * MAX_UNKNOWNS:
        raise ParameterError("matrix too large for the dense oracle")
    u, s, vh = np.linalg.svd(A, full_matrices=False)
    cutoff = rcond * (s.max() if s.size else 0.0)
    s_inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (vh.conj().T * s_inv) @ u.conj().T


def penrose_residuals(A, P):
    """Residual norms of the four Moore-Penrose conditions."""
    AP = A @ P
    PA = P @ A
    return (np.linalg.norm(A @ P @ A - A), np.linalg.norm(P @ A @ P - P),
            np.linalg.norm(AP - AP.conj().T), np.linalg.norm(PA - PA.conj().T))


def range_null_reference(A, y, x_bar):
    P = dense_pseudo_inverse(A)
    return P @ y + x_bar - P @ (A @ x_bar)


def dense_proximal(A, y, x_ref, lam):
    """Solve ``(A^H A + lam I) x = A^H y + lam x_ref`` directly."""
    A = np.asarray(A)
    n = A.shape[1]
    lhs = A.conj().T @ A + lam * np.eye(n)
    return np.linalg.solve(lhs, A.conj().T @ y + lam * x_ref)


def exact_gaussian_posterior(p):
    """Posterior mean and covariance of a Gaussian prior under ``y = A x + n``."""
    if p.prior_mean is None or p.prior_cov is None:
        raise ParameterError("exact posterior needs prior_mean and prior_cov")
    if p.sigma_y is None:
        raise ParameterError("exact posterior needs sigma_y")
    sig = np.broadcast_to(np.asarray(p.sigma_y, dtype=np.float64), p.y.shape)
    if np.any(sig <= 0):
        raise ParameterError("sigma_y must be positive")
    cov0 = np.asarray(p.prior_cov, dtype=np.float64)
    try:
        prec0 = np.linalg.inv(cov0)
        np.linalg.cholesky(cov0)
    except np.linalg.LinAlgError:
        raise ParameterError("prior covariance is singular or not positive definite") from None
    A = p.A
    w = 1.0 / sig ** 2
    At = A.conj().T
    post_prec = prec0 + (At * w) @ A
    post_cov = np.linalg.inv(post_prec)
    post_cov = 0.5 * (post_cov + post_cov.conj().T)
    mean = post_cov @ (prec0 @ np.asarray(p.prior_mean).ravel() + At @ (w * p.y))
    return mean, post_cov


def finite_diff_gradient(f, x, h=1e-5):
    """Central-difference gradient of a real scalar field over a real array."""
    x = np.asarray(x, dtype=np.float64)
    if h <= 0:
        raise ParameterError(f"h must be positive, got {h}")
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        gflat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return g


def operator_matrix(op, complex_input=None):
    """Explicit matrix of a linear operator, built column by column.

    With ``complex_input`` (default: the operator has complex measurements) the
    columns are images of complex basis vectors.
    """
    n = int(np.prod(op.image_shape))
    if n > MAX_UNKNOWNS:
        raise ParameterError(f"operator with {n} unknowns exceeds the dense cap")
    if complex_input is None:
        complex_input = op.complex_measurements
    dtype = np.complex128 if complex_input else np.float64
    cols = []
    for i in range(n):
        e = np.zeros(n, dtype=dtype)
        e[i] = 1.0
        cols.append(np.asarray(op.apply(e.reshape(op.image_shape))).ravel())
    return np.stack(cols, axis=1)


def stack_real(A, y=None):
    """Real-linear form of a complex map on real inputs: ``[Re A; Im A]``."""
    A_r = np.vstack([A.real, A.imag])
    if y is None:
        return A_r
    return A_r, np.concatenate([np.real(y), np.imag(y)])


def real_measurement_model(op, sigma_y, y=None):
    """Dense real-valued model of ``op`` acting on real images.

    Complex measurements are split into real and imaginary rows, each carrying
    noise of standard deviation ``sigma_y / sqrt(2)``. Rows that vanish for
    every real image (unacquired samples, imaginary parts of self-conjugate
    frequencies) are dropped.

    Returns:
        (A, y or None, per-row noise standard deviations)
    """
    A = operator_matrix(op, complex_input=False)
    yv = None if y is None else np.asarray(y).ravel()
    if np.iscomplexobj(A) or op.complex_measurements:
        A = np.asarray(A, dtype=np.complex128)
        A, yv = (stack_real(A), None) if yv is None else stack_real(A, yv)
        sig = np.full(A.shape[0], sigma_y / np.sqrt(2.0))
    else:
        sig = np.full(A.shape[0], float(sigma_y))
    keep = np.linalg.norm(A, axis=1) > 1e-12
    return A[keep], (None if yv is None else yv[keep]), sig[keep]
