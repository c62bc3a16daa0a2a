"""DDIM reverse process and the guided sampling loops."""
import csv
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import DivergenceError, ParameterError, ShapeError
from .evaluation import psnr
from .guidance import (acpm_step, likelihood_gradient, proximal_solve, range_null_combine,
                       refinement_step)
from .prior import predict_x0
from .schedule import subsample_timesteps
from .tensor import real_if_real

DIVERGENCE_BOUND = 1e6


def ddim_coefficients(schedule, t, t_prev, eta):
    """Noise coefficients ``(c1, c2)`` of the DDIM step ``t -> t_prev``.

    ``c1 = eta * sqrt(1 - abar_prev)`` multiplies fresh noise and
    ``c2 = sqrt(1 - abar_prev - c1**2)`` the predicted noise.
    """
    if not t_prev < t:
        raise ParameterError(f"t_prev={t_prev} must be smaller than t={t}")
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    var_prev = 1.0 - schedule.alpha_bar_at(t_prev)
    c1 = eta * math.sqrt(var_prev)
    # same as sqrt(var_prev - c1**2), but exactly zero at eta = 1
    c2 = math.sqrt(var_prev * (1.0 - eta * eta))
    return c1, c2


def ddim_update(x_hat0, eps_hat, eps_noise, schedule, t, t_prev, eta):
    """``x_{t_prev} = sqrt(abar_prev) x_hat0 + c1 eps_noise + c2 eps_hat``."""
    if np.shape(x_hat0) != np.shape(eps_hat) or np.shape(x_hat0) != np.shape(eps_noise):
        raise ShapeError("x_hat0, eps_hat and eps_noise must share one shape")
    c1, c2 = ddim_coefficients(schedule, t, t_prev, eta)
    if t_prev < 0:
        eps_noise = np.zeros_like(eps_noise)
    return math.sqrt(schedule.alpha_bar_at(t_prev)) * x_hat0 + c1 * eps_noise + c2 * eps_hat


@dataclass
class TraceRecord:
    step: int
    t: int
    residual_norm: float
    psnr_vs_reference: float = math.nan
    x0t: np.ndarray = field(default=None, repr=False)
    x0_guided: np.ndarray = field(default=None, repr=False)


def _noise(rng, shape, is_complex):
    if is_complex:
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    return rng.standard_normal(shape)


def _check_finite(x, step, t):
    finite = np.all(np.isfinite(x))
    peak = float(np.max(np.abs(x))) if finite else math.inf
    if not finite or peak > DIVERGENCE_BOUND:
        raise DivergenceError(
            f"sampler diverged at step {step} (t={t}): max |x| = {peak:.3e} "
            f"exceeds {DIVERGENCE_BOUND:.0e}", step=step, t=t, max_abs=peak)


def run_sampler(model, op, y, schedule, cfg, num_eval_steps, seed, trace=False,
                reference=None, keep_images=False, shape=None):
    """Run one reverse-diffusion chain and return ``(x0, trace)``.

    Per visited timestep: predict ``x0|t``, apply the measurement rule of
    ``cfg.scheme``, then take a DDIM step with ``cfg.eta``. The chain state
    stays in the model's domain (real or complex).

    Args:
        model: score model.
        op: forward operator (unused for ``scheme="none"``).
        y: measurement.
        schedule (NoiseSchedule): diffusion coefficients.
        cfg (GuidanceConfig): scheme and hyper-parameters.
        num_eval_steps (int): number of denoiser-visited timesteps.
        seed (int): seeds the initial state and all injected noise.
        trace (bool): record per-step residuals.
        reference: ground truth for the trace PSNR column.
        keep_images (bool): also keep ``x0|t`` and the guided estimate in the trace.
        shape: image shape, needed only when ``op`` is None.

    Returns:
        (x0, list of TraceRecord or None)
    """
    rng = np.random.default_rng(seed)
    if shape is None:
        shape = tuple(op.image_shape)
    shape = tuple(shape)
    is_complex = bool(getattr(model, "is_complex", False))
    timesteps = subsample_timesteps(schedule, num_eval_steps)
    records = [] if trace else None
    x = _noise(rng, shape, is_complex)
    scheme = cfg.scheme

    for step, t in enumerate(timesteps):
        t = int(t)
        t_prev = int(timesteps[step + 1]) if step + 1 < len(timesteps) else -1
        x0t, eps_hat = predict_x0(model, x, t, schedule)
        noise = _noise(rng, shape, is_complex)
        eps_dir = eps_hat

        if scheme in ("none", "dps"):
            x0_hat = x0t
        elif scheme == "ddnm":
            x0_hat = range_null_combine(op, y, x0t)
        elif scheme == "scoremed":
            # The projected state sqrt(a) * rn + sigma_t * eps is carried through
            # the DDIM step via its exact (x0, eps) decomposition.
            x0_hat = range_null_combine(op, y, x0t)
            eps_dir = _noise(rng, shape, is_complex)
        elif scheme in ("bgdm", "r_bgdm"):
            x0_ref = acpm_step(model, op, y, x, t, schedule, cfg.zeta, cfg, x0t=x0t)
            x0_hat = proximal_solve(op, y, x0_ref, cfg.lam, tol=cfg.cg_tol,
                                    maxiter=cfg.cg_maxiter)
            if scheme == "r_bgdm":
                x0_hat = refinement_step(x0_hat, x0t, cfg.gamma, cfg.refinement_variant)
        else:
            raise ParameterError(f"unknown scheme {scheme!r}")
        x0_hat = real_if_real(x0_hat, x)

        x_next = ddim_update(x0_hat, eps_dir, noise, schedule, t, t_prev, cfg.eta)
        if scheme == "dps" and cfg.zeta > 0:
            grad = likelihood_gradient(model, op, y, x, t, schedule, cfg, x0t=x0t)
            x_next = x_next - cfg.zeta * grad

        if trace:
            res = float(np.linalg.norm(y - op.apply(x0t))) if op is not None else math.nan
            rec = TraceRecord(step=step, t=t, residual_norm=res)
            if reference is not None:
                rec.psnr_vs_reference = psnr(x0_hat, reference)
            if keep_images:
                rec.x0t, rec.x0_guided = x0t, x0_hat
            records.append(rec)

        _check_finite(x_next, step, t)
        x = x_next
    return x, records


def write_trace_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "residual_norm", "psnr_vs_reference"])
        for r in records:
            writer.writerow([r.step, r.t, repr(r.residual_norm), repr(r.psnr_vs_reference)])
