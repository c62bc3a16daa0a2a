"""Discrete variance-preserving noise schedule and the forward noising process."""
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

DEFAULT_NUM_STEPS = 1000
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Coefficients of a discrete VP diffusion with ``num_steps`` steps.

    Index ``t`` runs over ``0..num_steps-1``. ``alpha_bar_at(-1)`` is 1 (the
    clean image), which is what the last reverse step needs.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_betas(cls, beta):
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size == 0:
            raise ParameterError("beta must be a non-empty 1-D array")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ParameterError("beta values must lie strictly inside (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        sigma = np.sqrt(1.0 - alpha_bar)
        for arr in (beta, alpha, alpha_bar, sigma):
            arr.setflags(write=False)
        return cls(beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)

    @property
    def num_steps(self):
        return int(self.beta.size)

    def alpha_bar_at(self, t):
        """``alpha_bar[t]``, with ``t = -1`` mapped to 1."""
        t = int(t)
        if t < -1 or t >= self.num_steps:
            raise ParameterError(f"timestep {t} outside [-1, {self.num_steps - 1}]")
        return 1.0 if t < 0 else float(self.alpha_bar[t])

    def sigma_at(self, t):
        return float(np.sqrt(1.0 - self.alpha_bar_at(t)))


def make_linear_schedule(num_steps=DEFAULT_NUM_STEPS, beta_min=DEFAULT_BETA_MIN,
                         beta_max=DEFAULT_BETA_MAX):
    """Linear beta schedule from ``beta_min`` to ``beta_max`` over ``num_steps`` steps.

    This is the discretisation of beta(s) = beta_min + s (beta_max - beta_min)
    on s in [0, 1].
    """
    if int(num_steps) != num_steps or num_steps < 1:
        raise ParameterError(f"num_steps must be a positive integer, got {num_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ParameterError(
            f"need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}")
    return NoiseSchedule.from_betas(np.linspace(beta_min, beta_max, int(num_steps)))


def subsample_timesteps(schedule, num_eval):
    """Evenly spaced decreasing timestep indices from ``T-1`` down to 0."""
    T = schedule.num_steps
    if int(num_eval) != num_eval or num_eval < 1:
        raise ParameterError(f"num_eval must be a positive integer, got {num_eval}")
    if num_eval > T:
        raise ParameterError(f"num_eval={num_eval} exceeds the number of steps T={T}")
    if num_eval == 1:
        return np.array([T - 1], dtype=np.int64)
    idx = np.round(np.linspace(T - 1, 0, int(num_eval))).astype(np.int64)
    return idx


def diffuse_forward(x0, t, schedule, eps):
    """Sample ``x_t = sqrt(alpha_bar_t) x0 + sigma_t eps``."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match x0 shape {x0.shape}")
    a = schedule.alpha_bar_at(t)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps
