"""Measurement-consistency rules used by the samplers.

Conventions: the data-fidelity loss is ``0.5 * ||y - A x||^2``; its gradient
with respect to a real image is ``Re(A^H (A x - y))``. Whenever a reference
image is real-valued, solutions are restricted to real images as well. For
the masked-Fourier operator that restriction couples each frequency ``k``
with its mirror ``-k`` and is handled in closed form.
"""
from dataclasses import dataclass, replace

import numpy as np

from .errors import CapabilityError, ParameterError, ShapeError, SolverError
from .linops import MRI
from .prior import predict_x0
from .tensor import fft2, ifft2, real_if_real, to_numeric

SCHEMES = ("none", "dps", "ddnm", "scoremed", "bgdm", "r_bgdm")
JACOBIAN_MODES = ("exact_gaussian", "identity_approx", "finite_diff_jvp")
DPS_TRANSPORTS = ("adjoint", "pseudo_inverse")
REFINEMENT_VARIANTS = ("toward_prior", "literal_paper")


@dataclass(frozen=True)
class GuidanceConfig:
    scheme: str = "bgdm"
    zeta: float = 1.0
    lam: float = 1e-3
    gamma: float = 0.0
    eta: float = 0.85
    jacobian_mode: str = "finite_diff_jvp"
    dps_transport: str = "adjoint"
    sigma_y: float = 0.0
    refinement_variant: str = "toward_prior"
    fd_step: float = 1e-4
    cg_tol: float = 1e-10
    cg_maxiter: int = 500

    def __post_init__(self):
        for name, value, allowed in (("scheme", self.scheme, SCHEMES),
                                     ("jacobian_mode", self.jacobian_mode, JACOBIAN_MODES),
                                     ("dps_transport", self.dps_transport, DPS_TRANSPORTS),
                                     ("refinement_variant", self.refinement_variant,
                                      REFINEMENT_VARIANTS)):
            if value not in allowed:
                raise ParameterError(f"{name}={value!r} not in {allowed}")
        if not self.lam > 0:
            raise ParameterError(f"lambda must be positive, got {self.lam}")
        if self.zeta < 0 or self.gamma < 0 or self.sigma_y < 0:
            raise ParameterError("zeta, gamma and sigma_y must be non-negative")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta}")
        if self.fd_step <= 0:
            raise ParameterError(f"fd_step must be positive, got {self.fd_step}")

    def with_(self, **changes):
        return replace(self, **changes)


def _mirror(w):
    """``w[-k]`` over the last two axes (indices taken modulo the size)."""
    return np.roll(np.flip(w, axis=(-2, -1)), shift=1, axis=(-2, -1))


def _mri_real_fidelity(op, y):
    """Per-frequency weight and target of the MRI fidelity over real images."""
    m = op.mask
    m_mirror = _mirror(m)
    weight = m + m_mirror
    target = m * y + m_mirror * np.conj(_mirror(y))
    return weight, target


def transport(op, residual, how):
    """Map a measurement-space vector back to image space (``A^H`` or ``A^+``)."""
    if how == "adjoint":
        return op.adjoint(residual)
    if how == "pseudo_inverse":
        return op.pseudo_inverse(residual)
    raise ParameterError(f"unknown transport {how!r}")


def _jacobian_apply(model, x_t, t, schedule, v, cfg):
    a = schedule.alpha_bar_at(t)
    if cfg.jacobian_mode == "exact_gaussian":
        if not getattr(model, "exact_jacobian_available", False):
            raise CapabilityError("exact_gaussian Jacobian requested for a non-Gaussian model")
        return model.tweedie_jacobian_apply(x_t, t, v)
    if cfg.jacobian_mode == "identity_approx":
        return v / np.sqrt(a)
    # Central differences of x0|t along v. The Tweedie Jacobian is symmetric,
    # so J v is also J^T v.
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)
    d = v / norm
    h = cfg.fd_step * np.sqrt(v.size)
    plus = predict_x0(model, x_t + h * d, t, schedule)[0]
    minus = predict_x0(model, x_t - h * d, t, schedule)[0]
    return (plus - minus) * (norm / (2.0 * h))


def likelihood_gradient(model, op, y, x_t, t, schedule, cfg, x0t=None):
    """Gradient w.r.t. ``x_t`` of ``0.5 * ||y - A x0|t(x_t)||^2``.

    The residual is carried back by ``A^H`` or ``A^+`` (``cfg.dps_transport``)
    and then through the Jacobian of the Tweedie mean (``cfg.jacobian_mode``).
    ``x0t`` may be passed to reuse an existing denoiser evaluation.
    """
    x_t = to_numeric(x_t)
    if x0t is None:
        x0t = predict_x0(model, x_t, t, schedule)[0]
    residual = op.apply(x0t) - y
    v = real_if_real(transport(op, residual, cfg.dps_transport), x_t)
    return _jacobian_apply(model, x_t, t, schedule, v, cfg)


def range_null_combine(op, y, x_bar):
    """``A^+ y + (I - A^+ A) x_bar``; restricted to real images when ``x_bar`` is real."""
    x_bar = to_numeric(x_bar)
    if x_bar.shape != tuple(op.image_shape):
        raise ShapeError(f"x_bar shape {x_bar.shape} != image shape {tuple(op.image_shape)}")
    if op.kind == MRI:
        y = op._check_measurement(y)
        w_bar = fft2(x_bar)
        if np.iscomplexobj(x_bar):
            return ifft2(op.mask * y + (1.0 - op.mask) * w_bar)
        weight, target = _mri_real_fidelity(op, y)
        safe = np.where(weight > 0, weight, 1.0)
        w = np.where(weight > 0, target / safe, w_bar)
        return ifft2(w).real
    out = x_bar + op.pseudo_inverse(y - op.apply(x_bar))
    return real_if_real(out, x_bar)


def scoremed_project(op, y, x0t, t, schedule, eps):
    """Back-projected state ``sqrt(abar) (A^+ y + (I - A^+ A) x0t) + sigma_t eps``."""
    x0t = to_numeric(x0t)
    if np.shape(eps) != x0t.shape:
        raise ShapeError(f"eps shape {np.shape(eps)} != x0t shape {x0t.shape}")
    a = schedule.alpha_bar_at(t)
    return np.sqrt(a) * range_null_combine(op, y, x0t) + np.sqrt(1.0 - a) * np.asarray(eps)


def conjugate_gradient(matvec, b, x0, tol=1e-10, maxiter=500):
    """Solve ``matvec(x) = b`` for a Hermitian positive-definite operator.

    Stops when ``||r|| <= tol * ||b||``.

    Returns:
        (x, iterations, relative residual)
    """
    x = x0.copy()
    r = b - matvec(x)
    p = r.copy()
    rs = float(np.real(np.vdot(r, r)))
    bnorm = float(np.linalg.norm(b)) or 1.0
    k = 0
    while np.sqrt(rs) > tol * bnorm:
        if k >= maxiter:
            raise SolverError(
                f"conjugate gradient stopped after {maxiter} iterations with relative "
                f"residual {np.sqrt(rs) / bnorm:.3e} > {tol:.1e}",
                residual=np.sqrt(rs) / bnorm, iterations=k)
        ap = matvec(p)
        alpha = rs / float(np.real(np.vdot(p, ap)))
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.real(np.vdot(r, r)))
        p = r + (rs_new / rs) * p
        rs = rs_new
        k += 1
    return x, k, np.sqrt(rs) / bnorm


def proximal_solve(op, y, x_ref, lam, tol=1e-10, maxiter=500):
    """``argmin_x 0.5 ||y - A x||^2 + lam/2 ||x - x_ref||^2``.

    Closed form for the MRI operator, conjugate gradient on the normal
    equations otherwise. A real ``x_ref`` restricts the minimiser to real images.
    """
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    x_ref = to_numeric(x_ref)
    if x_ref.shape != tuple(op.image_shape):
        raise ShapeError(f"x_ref shape {x_ref.shape} != image shape {tuple(op.image_shape)}")
    if op.kind == MRI:
        y = op._check_measurement(y)
        w_ref = fft2(x_ref)
        if np.iscomplexobj(x_ref):
            return ifft2((op.mask * y + lam * w_ref) / (op.mask + lam))
        weight, target = _mri_real_fidelity(op, y)
        return ifft2((target + 2.0 * lam * w_ref) / (weight + 2.0 * lam)).real

    def normal(x):
        return real_if_real(op.adjoint(op.apply(x)), x_ref) + lam * x

    b = real_if_real(op.adjoint(y), x_ref) + lam * x_ref
    x, _, _ = conjugate_gradient(normal, b, x_ref.copy(), tol=tol, maxiter=maxiter)
    return x


def acpm_step(model, op, y, x_t, t, schedule, zeta, cfg=None, x0t=None):
    """Tweedie mean corrected by a ``zeta``-scaled likelihood gradient."""
    if zeta < 0:
        raise ParameterError(f"zeta must be non-negative, got {zeta}")
    cfg = cfg or GuidanceConfig()
    if x0t is None:
        x0t = predict_x0(model, x_t, t, schedule)[0]
    if zeta == 0:
        return x0t
    return x0t - zeta * likelihood_gradient(model, op, y, x_t, t, schedule, cfg, x0t=x0t)


def refinement_step(x_hat, x0t, gamma, variant="toward_prior"):
    """Refinement gradient step on ``||x_hat - x0t||^2``.

    ``toward_prior`` differentiates w.r.t. ``x_hat`` (contracts toward ``x0t``);
    ``literal_paper`` differentiates w.r.t. ``x0t`` with ``x_hat`` held fixed.
    """
    if gamma < 0:
        raise ParameterError(f"gamma must be non-negative, got {gamma}")
    diff = x_hat - x0t
    if variant == "toward_prior":
        return x_hat - 2.0 * gamma * diff
    if variant == "literal_paper":
        return x_hat + 2.0 * gamma * diff
    raise ParameterError(f"unknown refinement variant {variant!r}")
