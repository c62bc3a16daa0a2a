"""Score models: analytic Gaussian mixtures, external denoisers, Tweedie means.

A score model is any object with

* ``epsilon(x_t, t) -> ndarray`` predicting the noise in ``x_t``,
* ``is_complex``: whether it works on complex images,
* ``exact_jacobian_available``: whether ``tweedie_jacobian_apply`` is exact.
"""
from dataclasses import dataclass
import hashlib
import os
import queue
import shlex
import struct
import subprocess
import threading

import numpy as np
from scipy.special import logsumexp

from .errors import (ExternalModelError, NumericalDegeneracyError, ParameterError,
                     ShapeError, TensorFormatError)
from .tensor import load_tensor, read_tensor, save_tensor, tensor_to_bytes, to_numeric

MIN_ALPHA_BAR = 1e-12


@dataclass(frozen=True)
class GaussianMixturePrior:
    """Mixture of ``K`` Gaussians with diagonal (per-pixel) covariances.

    ``means`` and ``variances`` have shape ``(K, *image_shape)``.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.asarray(self.means, dtype=np.float64)
        var = np.asarray(self.variances, dtype=np.float64)
        if mu.shape != var.shape or mu.shape[0] != w.size:
            raise ShapeError(
                f"weights {w.shape}, means {mu.shape}, variances {var.shape} are inconsistent")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError("mixture weights must be positive and sum to 1")
        if np.any(var <= 0):
            raise ParameterError("component variances must be positive")
        for arr in (w, mu, var):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def num_components(self):
        return self.weights.size

    @property
    def shape(self):
        return self.means.shape[1:]

    def sample(self, rng, size=None):
        """Draw images from the mixture (``size`` extra leading samples if given)."""
        n = 1 if size is None else int(size)
        comp = rng.choice(self.num_components, size=n, p=self.weights)
        z = rng.standard_normal((n,) + self.shape)
        out = self.means[comp] + np.sqrt(self.variances[comp]) * z
        return out[0] if size is None else out


def standard_normal_prior(shape):
    return GaussianMixturePrior(np.ones(1), np.zeros((1,) + tuple(shape)),
                                np.ones((1,) + tuple(shape)))


def _diffused(prior, t, schedule):
    a = schedule.alpha_bar_at(t)
    m = np.sqrt(a) * prior.means
    v = a * prior.variances + (1.0 - a)
    return a, m, v


def _check_shape(prior, x_t):
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != prior.shape:
        raise ShapeError(f"x_t shape {x_t.shape} != prior shape {prior.shape}")
    return x_t


def _responsibilities(prior, x_t, m, v):
    axes = tuple(range(1, m.ndim))
    logp = np.log(prior.weights) - 0.5 * np.sum((x_t - m) ** 2 / v + np.log(2 * np.pi * v),
                                                axis=axes)
    return logp, np.exp(logp - logsumexp(logp))


def gmm_log_density(prior, x_t, t, schedule):
    """``log p_t(x_t)`` of the diffused mixture."""
    x_t = _check_shape(prior, x_t)
    _, m, v = _diffused(prior, t, schedule)
    logp, _ = _responsibilities(prior, x_t, m, v)
    return float(logsumexp(logp))


def gmm_score(prior, x_t, t, schedule):
    """Exact ``grad log p_t(x_t)`` for the diffused mixture."""
    x_t = _check_shape(prior, x_t)
    _, m, v = _diffused(prior, t, schedule)
    _, r = _responsibilities(prior, x_t, m, v)
    r = r.reshape((-1,) + (1,) * x_t.ndim)
    return np.sum(r * (m - x_t) / v, axis=0)


def gmm_posterior_mean(prior, x_t, t, schedule):
    """``E[x0 | x_t]`` by conditioning each component; independent of Tweedie."""
    x_t = _check_shape(prior, x_t)
    a, m, v = _diffused(prior, t, schedule)
    _, r = _responsibilities(prior, x_t, m, v)
    comp_means = prior.means + np.sqrt(a) * prior.variances / v * (x_t - m)
    r = r.reshape((-1,) + (1,) * x_t.ndim)
    return np.sum(r * comp_means, axis=0)


def epsilon_from_score(score, t, schedule):
    return -np.sqrt(1.0 - schedule.alpha_bar_at(t)) * np.asarray(score)


def score_from_epsilon(eps, t, schedule):
    s = np.sqrt(1.0 - schedule.alpha_bar_at(t))
    if s == 0.0:
        raise NumericalDegeneracyError("score is undefined at alpha_bar = 1")
    return -np.asarray(eps) / s


class GMMScoreModel:
    """Score model backed by the exact diffused score of a Gaussian mixture."""

    is_complex = False

    def __init__(self, prior, schedule):
        self.prior = prior
        self.schedule = schedule

    @property
    def exact_jacobian_available(self):
        return self.prior.num_components == 1

    def epsilon(self, x_t, t):
        return epsilon_from_score(gmm_score(self.prior, x_t, t, self.schedule), t, self.schedule)

    def tweedie_gain(self, t):
        """Diagonal of ``d x0|t / d x_t`` for a single Gaussian component."""
        if not self.exact_jacobian_available:
            raise ParameterError("closed-form Tweedie Jacobian needs a single Gaussian component")
        a = self.schedule.alpha_bar_at(t)
        var = self.prior.variances[0]
        return np.sqrt(a) * var / (a * var + 1.0 - a)

    def tweedie_jacobian_apply(self, x_t, t, v):
        """``J v`` with ``J`` the (symmetric) Jacobian of the Tweedie mean."""
        return self.tweedie_gain(t) * v


def predict_x0(model, x_t, t, schedule):
    """One denoiser call: returns ``(x0|t, eps_hat)``."""
    a = schedule.alpha_bar_at(t)
    if a < MIN_ALPHA_BAR:
        raise NumericalDegeneracyError(f"alpha_bar[{t}] = {a:.3e} is too small for Tweedie")
    eps = model.epsilon(x_t, t)
    x0 = (x_t - np.sqrt(1.0 - a) * eps) / np.sqrt(a)
    return x0, eps


def tweedie_mean(model, x_t, t, schedule):
    """Posterior mean ``E[x0 | x_t]`` from the model's noise prediction."""
    return predict_x0(model, x_t, t, schedule)[0]


def conditional_posterior_mean(model, x_t, t, schedule, likelihood_score):
    """``E[x0 | x_t, y]`` given ``grad_{x_t} log p(y | x_t)``."""
    a = schedule.alpha_bar_at(t)
    base = tweedie_mean(model, x_t, t, schedule)
    return base + (1.0 - a) / np.sqrt(a) * np.asarray(likelihood_score)


# -- GMM spec files ---------------------------------------------------------

def load_gmm_spec(path):
    """Read a plain-text ``key = value`` GMM description.

    Keys: ``num_components``, ``weights`` (comma separated) and for each
    component ``k`` the tensor paths ``mean_k`` and ``variance_k`` (relative
    to the spec file's directory).
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            entries[key] = value
    try:
        k = int(entries["num_components"])
        weights = np.array([float(w) for w in entries["weights"].split(",")])
        means, variances = [], []
        for i in range(k):
            means.append(load_tensor(os.path.join(base, entries[f"mean_{i}"])))
            variances.append(load_tensor(os.path.join(base, entries[f"variance_{i}"])))
    except KeyError as exc:
        raise ParameterError(f"{path}: missing key {exc.args[0]!r}") from None
    if weights.size != k:
        raise ParameterError(f"{path}: {weights.size} weights for {k} components")
    return GaussianMixturePrior(weights, np.stack(means), np.stack(variances))


def save_gmm_spec(prior, path):
    base = os.path.dirname(os.path.abspath(path))
    stem = os.path.splitext(os.path.basename(path))[0]
    lines = [f"num_components = {prior.num_components}",
             "weights = " + ", ".join(repr(float(w)) for w in prior.weights)]
    for i in range(prior.num_components):
        mean_name = f"{stem}_mean_{i}.ntsr"
        var_name = f"{stem}_variance_{i}.ntsr"
        save_tensor(prior.means[i], os.path.join(base, mean_name))
        save_tensor(prior.variances[i], os.path.join(base, var_name))
        lines += [f"mean_{i} = {mean_name}", f"variance_{i} = {var_name}"]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# -- external denoisers -------------------------------------------------------

def encode_request(x_t, t):
    """Request record: ``u32 t`` followed by the tensor."""
    return struct.pack("<I", int(t)) + tensor_to_bytes(x_t)


def request_key(x_t, t):
    return f"{int(t):06d}_{hashlib.sha256(encode_request(x_t, t)).hexdigest()[:32]}"


class DirectoryDenoiser:
    """Looks up precomputed noise predictions keyed by the request record."""

    exact_jacobian_available = False

    def __init__(self, path, is_complex=False):
        self.path = os.fspath(path)
        self.is_complex = is_complex
        if not os.path.isdir(self.path):
            raise ExternalModelError(f"denoiser directory {self.path!r} does not exist")

    def _file(self, x_t, t):
        return os.path.join(self.path, request_key(x_t, t) + ".ntsr")

    def store(self, x_t, t, eps):
        save_tensor(eps, self._file(x_t, t))

    def epsilon(self, x_t, t):
        path = self._file(x_t, t)
        if not os.path.exists(path):
            raise ExternalModelError(f"no precomputed response for t={t} ({path})")
        try:
            return load_tensor(path)
        except TensorFormatError as exc:
            raise ExternalModelError(f"malformed response file {path}: {exc}") from exc


class SubprocessDenoiser:
    """Child process answering one tensor per request over stdin/stdout."""

    exact_jacobian_available = False

    def __init__(self, command, timeout=30.0, is_complex=False):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self.is_complex = is_complex
        self._proc = None

    def _process(self):
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE,
                                              stdout=subprocess.PIPE)
            except OSError as exc:
                raise ExternalModelError(f"cannot start denoiser {self.command}: {exc}") from exc
        return self._proc

    def epsilon(self, x_t, t):
        proc = self._process()
        try:
            proc.stdin.write(encode_request(x_t, t))
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self.close()
            raise ExternalModelError(f"denoiser closed its input: {exc}") from exc

        box = queue.Queue(maxsize=1)

        def reader():
            try:
                box.put(read_tensor(proc.stdout))
            except Exception as exc:  # reported to the caller below
                box.put(exc)

        threading.Thread(target=reader, daemon=True).start()
        try:
            result = box.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise ExternalModelError(f"denoiser did not answer within {self.timeout} s") from None
        if isinstance(result, Exception):
            self.close()
            raise ExternalModelError(f"malformed denoiser response: {result}") from result
        return result

    def close(self):
        if self._proc is not None:
            if self._proc.poll() is None:
                self._proc.kill()
            self._proc.wait()
            for stream in (self._proc.stdin, self._proc.stdout):
                try:
                    stream.close()
                except OSError:
                    pass
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def external_denoise(denoiser, x_t, t):
    """Query an external denoiser and validate the response."""
    x_t = to_numeric(x_t)
    eps = denoiser.epsilon(x_t, t)
    eps = np.asarray(eps)
    if eps.shape != x_t.shape:
        raise ExternalModelError(f"response shape {eps.shape} != request shape {x_t.shape}")
    if not np.all(np.isfinite(eps)):
        raise ExternalModelError("response contains non-finite values")
    if np.iscomplexobj(eps) and not np.iscomplexobj(x_t):
        raise ExternalModelError("complex response to a real request")
    return eps


class ExternalScoreModel:
    """Adapter giving an external denoiser the score-model interface."""

    exact_jacobian_available = False

    def __init__(self, denoiser):
        self.denoiser = denoiser
        self.is_complex = getattr(denoiser, "is_complex", False)

    def epsilon(self, x_t, t):
        return external_denoise(self.denoiser, x_t, t)

    def close(self):
        close = getattr(self.denoiser, "close", None)
        if close is not None:
            close()
