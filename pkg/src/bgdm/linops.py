"""Forward operators for the three reconstruction tasks.

* ``mri_masked_fourier``: ``A x = M * fft2(x)`` with a binary k-space mask in
  unshifted FFT layout (DC at index ``[0, 0]``).
* ``ct_radon``: parallel-beam sinogram, ``num_angles x detector_count``.
* ``sr_downsample``: ``factor x factor`` block average.

Each operator exposes ``apply``, ``adjoint`` and ``pseudo_inverse``. The MRI
and SR pseudo-inverses are exact; the CT one is filtered back-projection.
"""
from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, ShapeError
from .tensor import fft2, ifft2, to_numeric

MRI = "mri_masked_fourier"
CT = "ct_radon"
SR = "sr_downsample"
KINDS = (MRI, CT, SR)

MASK_PATTERNS = ("cartesian_equispaced", "gaussian1d", "uniform1d")
GAUSSIAN_MASK_WIDTH = 0.25


class LinearOperator:
    kind = None
    image_shape = ()
    measurement_shape = ()
    complex_measurements = False

    def _check_image(self, x):
        x = to_numeric(x)
        if x.shape != tuple(self.image_shape):
            raise ShapeError(f"{self.kind}: image shape {x.shape} != {tuple(self.image_shape)}")
        return x

    def _check_measurement(self, y):
        y = to_numeric(y)
        if y.shape != tuple(self.measurement_shape):
            raise ShapeError(
                f"{self.kind}: measurement shape {y.shape} != {tuple(self.measurement_shape)}")
        return y

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def pseudo_inverse(self, y):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)


class MRIOperator(LinearOperator):
    """Single-coil Cartesian MRI: ``M * F x`` with orthonormal ``F``."""

    kind = MRI
    complex_measurements = True

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=np.float64)
        if mask.ndim != 2:
            raise ShapeError(f"MRI mask must be 2-D, got shape {mask.shape}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ParameterError("MRI mask values must be 0 or 1")
        mask.setflags(write=False)
        self.mask = mask
        self.image_shape = mask.shape
        self.measurement_shape = mask.shape

    @property
    def acceleration(self):
        kept = self.mask.sum()
        return float(self.mask.size / kept) if kept else math.inf

    def apply(self, x):
        return self.mask * fft2(self._check_image(x))

    def adjoint(self, y):
        return ifft2(self.mask * self._check_measurement(y))

    def pseudo_inverse(self, y):
        # M is an orthogonal projector and F is unitary, so A^+ = A^H exactly.
        return ifft2(self.mask * self._check_measurement(y))


class SROperator(LinearOperator):
    """Block-average downsampling by an integer factor."""

    kind = SR

    def __init__(self, image_shape, factor):
        image_shape = tuple(int(s) for s in image_shape)
        factor = int(factor)
        if len(image_shape) != 2:
            raise ShapeError(f"SR operator needs a 2-D image shape, got {image_shape}")
        if factor < 1 or any(s % factor for s in image_shape):
            raise ParameterError(f"factor {factor} must divide both dimensions of {image_shape}")
        self.factor = factor
        self.image_shape = image_shape
        self.measurement_shape = (image_shape[0] // factor, image_shape[1] // factor)

    def apply(self, x):
        x = self._check_image(x)
        f = self.factor
        h, w = self.measurement_shape
        return x.reshape(h, f, w, f).mean(axis=(1, 3))

    def _replicate(self, y):
        f = self.factor
        return np.repeat(np.repeat(y, f, axis=0), f, axis=1)

    def adjoint(self, y):
        return self._replicate(self._check_measurement(y)) / self.factor ** 2

    def pseudo_inverse(self, y):
        return self._replicate(self._check_measurement(y))


@lru_cache(maxsize=8)
def _radon_matrix(n_rows, n_cols, num_angles, detector_count, sample_step):
    """Sparse ray-driven projector with bilinear interpolation along each ray."""
    angles = np.arange(num_angles) * (np.pi / num_angles)
    cr = (n_rows - 1) / 2.0
    cc = (n_cols - 1) / 2.0
    det = np.arange(detector_count) - (detector_count - 1) / 2.0
    half = 0.5 * math.hypot(n_rows, n_cols) + 1.0
    u = np.arange(-half, half + 1e-9, sample_step)

    # (angle, detector, sample) grids
    cos = np.cos(angles)[:, None, None]
    sin = np.sin(angles)[:, None, None]
    s = det[None, :, None]
    uu = u[None, None, :]
    px = s * cos - uu * sin
    py = s * sin + uu * cos
    col = px + cc
    row = cr - py

    ray = (np.arange(num_angles)[:, None, None] * detector_count
           + np.arange(detector_count)[None, :, None])
    ray = np.broadcast_to(ray, col.shape)

    c0 = np.floor(col)
    r0 = np.floor(row)
    fc = col - c0
    fr = row - r0
    c0 = c0.astype(np.int64)
    r0 = r0.astype(np.int64)

    rows_idx, cols_idx, vals = [], [], []
    for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                      (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr = r0 + dr
        cc_ = c0 + dc
        ok = (rr >= 0) & (rr < n_rows) & (cc_ >= 0) & (cc_ < n_cols) & (w > 0)
        rows_idx.append(ray[ok])
        cols_idx.append(rr[ok] * n_cols + cc_[ok])
        vals.append(w[ok] * sample_step)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows_idx), np.concatenate(cols_idx))),
        shape=(num_angles * detector_count, n_rows * n_cols)).tocsr()
    mat.sum_duplicates()
    return mat


def ramp_filter_sinogram(sino):
    """Filter each projection with the spatial-domain Ram-Lak kernel (unit spacing)."""
    num_angles, d = sino.shape
    size = max(64, int(2 ** math.ceil(math.log2(2 * d))))
    k = np.arange(size)
    k = np.where(k > size // 2, k - size, k)
    h = np.zeros(size)
    h[0] = 0.25
    odd = (k % 2) == 1
    h[odd] = -1.0 / (np.pi * k[odd]) ** 2
    H = np.real(np.fft.fft(h))
    padded = np.zeros((num_angles, size))
    padded[:, :d] = sino
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * H[None, :], axis=1))
    return filtered[:, :d]


class CTOperator(LinearOperator):
    """Parallel-beam Radon transform over ``num_angles`` angles in [0, pi)."""

    kind = CT

    def __init__(self, image_shape, num_angles, detector_count=None, sample_step=0.5):
        image_shape = tuple(int(s) for s in image_shape)
        if len(image_shape) != 2:
            raise ShapeError(f"CT operator needs a 2-D image shape, got {image_shape}")
        if int(num_angles) < 1:
            raise ParameterError(f"num_angles must be >= 1, got {num_angles}")
        self.image_shape = image_shape
        self.num_angles = int(num_angles)
        self.detector_count = int(detector_count or image_shape[1])
        self.sample_step = float(sample_step)
        self.measurement_shape = (self.num_angles, self.detector_count)
        self.matrix = _radon_matrix(image_shape[0], image_shape[1], self.num_angles,
                                    self.detector_count, self.sample_step)

    @property
    def angles(self):
        return np.arange(self.num_angles) * (np.pi / self.num_angles)

    def _matvec(self, mat, v, out_shape):
        if np.iscomplexobj(v):
            return (mat @ v.real.ravel() + 1j * (mat @ v.imag.ravel())).reshape(out_shape)
        return (mat @ v.ravel()).reshape(out_shape)

    def apply(self, x):
        return self._matvec(self.matrix, self._check_image(x), self.measurement_shape)

    def adjoint(self, y):
        return self._matvec(self.matrix.T, self._check_measurement(y), self.image_shape)

    def pseudo_inverse(self, y):
        """Filtered back-projection (approximate inverse)."""
        y = self._check_measurement(y)
        if np.iscomplexobj(y):
            return self.pseudo_inverse(y.real) + 1j * self.pseudo_inverse(y.imag)
        return (np.pi / self.num_angles) * self.adjoint(ramp_filter_sinogram(y))


def make_operator(kind, image_shape, mask=None, num_angles=None, detector_count=None,
                  factor=None):
    if kind == MRI:
        if mask is None:
            raise ParameterError("MRI operator requires a mask")
        op = MRIOperator(mask)
        if op.image_shape != tuple(image_shape):
            raise ShapeError(f"mask shape {op.image_shape} != image shape {tuple(image_shape)}")
        return op
    if kind == CT:
        return CTOperator(image_shape, num_angles, detector_count)
    if kind == SR:
        return SROperator(image_shape, factor)
    raise ParameterError(f"unknown operator kind {kind!r}; expected one of {KINDS}")


@dataclass(frozen=True)
class MaskSpec:
    pattern: str = "cartesian_equispaced"
    acceleration: float = 4.0
    center_fraction: float = 0.08
    seed: int = 0


def _signed_frequency(width):
    k = np.arange(width)
    return np.where(k < (width + 1) // 2, k, k - width)


def generate_mask(spec, shape):
    """Binary column mask in unshifted FFT layout, repeated over rows."""
    if spec.pattern not in MASK_PATTERNS:
        raise ParameterError(f"unknown mask pattern {spec.pattern!r}")
    if spec.acceleration < 1:
        raise ParameterError(f"acceleration must be >= 1, got {spec.acceleration}")
    if not 0 <= spec.center_fraction <= 1:
        raise ParameterError(f"center_fraction must lie in [0, 1], got {spec.center_fraction}")
    h, w = (int(s) for s in shape)
    if spec.acceleration == 1:
        return np.ones((h, w))
    if spec.center_fraction > 1.0 / spec.acceleration:
        raise ParameterError(
            f"center_fraction {spec.center_fraction} keeps more than 1/acceleration "
            f"= {1.0 / spec.acceleration:.4f} of the columns")

    freq = _signed_frequency(w)
    n_center = int(round(w * spec.center_fraction))
    center = np.abs(freq) <= n_center // 2 if n_center > 0 else np.zeros(w, dtype=bool)
    cols = center.copy()
    target = int(round(w / spec.acceleration))

    if spec.pattern == "cartesian_equispaced":
        cols[::int(math.ceil(spec.acceleration))] = True
    else:
        rng = np.random.default_rng(spec.seed)
        remaining = max(target - int(cols.sum()), 0)
        candidates = np.flatnonzero(~cols)
        if spec.pattern == "uniform1d":
            p = np.ones(candidates.size)
        else:
            scale = GAUSSIAN_MASK_WIDTH * (w / 2.0)
            p = np.exp(-0.5 * (freq[candidates] / scale) ** 2)
        p = p / p.sum()
        remaining = min(remaining, candidates.size)
        chosen = rng.choice(candidates, size=remaining, replace=False, p=p)
        cols[chosen] = True
    return np.repeat(cols[None, :].astype(np.float64), h, axis=0)


def simulate_measurement(op, x, sigma_y, seed):
    """``apply(op, x)`` plus Gaussian noise of standard deviation ``sigma_y``.

    Complex measurements receive circular noise (each of re/im with variance
    ``sigma_y**2 / 2``); MRI noise is confined to acquired k-space samples.
    """
    if sigma_y < 0:
        raise ParameterError(f"sigma_y must be non-negative, got {sigma_y}")
    y = op.apply(x)
    if sigma_y == 0:
        return y
    rng = np.random.default_rng(seed)
    if op.complex_measurements:
        noise = (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)) * (
            sigma_y / math.sqrt(2.0))
    else:
        noise = sigma_y * rng.standard_normal(y.shape)
    if op.kind == MRI:
        noise = noise * op.mask
    return y + noise
