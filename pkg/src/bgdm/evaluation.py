"""Phantoms, image-quality metrics and metric records."""
import csv
from dataclasses import asdict, dataclass, field
import math

import numpy as np
from scipy.signal import convolve2d

from .errors import ParameterError, ShapeError
from .prior import GaussianMixturePrior

# Modified (Toft) Shepp-Logan: intensity, semi-axis a, semi-axis b, x0, y0, angle (deg)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

CSV_FIELDS = ("scheme", "task", "accel", "nfe", "psnr_db", "ssim", "runtime_s", "seed")


def shepp_logan(n, ellipses=_SHEPP_LOGAN):
    """``n x n`` modified Shepp-Logan phantom with values in [0, 1]."""
    if n < 16:
        raise ParameterError(f"phantom size must be >= 16, got {n}")
    coords = (np.arange(n) - (n - 1) / 2.0) / (n / 2.0)
    x, y = np.meshgrid(coords, -coords)
    img = np.zeros((n, n))
    for value, a, b, x0, y0, deg in ellipses:
        th = math.radians(deg)
        xr = (x - x0) * math.cos(th) + (y - y0) * math.sin(th)
        yr = -(x - x0) * math.sin(th) + (y - y0) * math.cos(th)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return np.clip(img, 0.0, 1.0)


def phantom_gmm_prior(n, num_components=4, seed=0, jitter=0.03, base_var=2e-3, tissue_var=1e-2):
    """Gaussian-mixture prior whose components are jittered Shepp-Logan phantoms.

    Each component mean moves every ellipse by up to ``jitter`` (in units of
    the half-width) and rescales its intensity by up to 20%. Pixel variances
    are ``base_var`` plus ``tissue_var`` inside the skull.
    """
    if num_components < 1:
        raise ParameterError(f"num_components must be >= 1, got {num_components}")
    rng = np.random.default_rng(seed)
    means = []
    for _ in range(num_components):
        ellipses = []
        for value, a, b, x0, y0, deg in _SHEPP_LOGAN:
            dx, dy = rng.uniform(-jitter, jitter, size=2)
            scale = rng.uniform(0.8, 1.2)
            ellipses.append((value * scale, a, b, x0 + dx, y0 + dy, deg))
        means.append(shepp_logan(n, ellipses))
    means = np.stack(means)
    inside = (means > 0).astype(np.float64)
    variances = base_var + tissue_var * inside
    weights = np.full(num_components, 1.0 / num_components)
    return GaussianMixturePrior(weights, means, variances)


def _magnitude(x):
    x = np.asarray(x)
    return np.abs(x) if np.iscomplexobj(x) else x.astype(np.float64, copy=False)


def psnr(x, ref, data_range=None):
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    x = _magnitude(x)
    ref = _magnitude(ref)
    if x.shape != ref.shape:
        raise ShapeError(f"psnr: shapes {x.shape} and {ref.shape} differ")
    if data_range is None:
        data_range = float(ref.max())
    if data_range <= 0:
        raise ParameterError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, data_range=None, window=SSIM_WINDOW, sigma=SSIM_SIGMA, k1=SSIM_K1, k2=SSIM_K2):
    """Mean structural similarity over all fully contained Gaussian windows."""
    x = _magnitude(x)
    ref = _magnitude(ref)
    if x.shape != ref.shape:
        raise ShapeError(f"ssim: shapes {x.shape} and {ref.shape} differ")
    if x.ndim != 2:
        raise ShapeError(f"ssim needs 2-D images, got shape {x.shape}")
    if min(x.shape) < window:
        raise ParameterError(f"image {x.shape} is smaller than the {window}x{window} window")
    if data_range is None:
        data_range = float(ref.max())
    if data_range <= 0:
        raise ParameterError(f"data_range must be positive, got {data_range}")
    w = gaussian_window(window, sigma)

    def filt(img):
        return convolve2d(img, w, mode="valid")

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_x = filt(x)
    mu_y = filt(ref)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(ref * ref) - mu_y * mu_y
    sxy = filt(x * ref) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricRecord:
    scheme: str
    task: str
    accel: float
    nfe: int
    psnr_db: float
    ssim: float
    runtime_s: float
    seed: int
    ssim_params: dict = field(default_factory=lambda: {
        "window": SSIM_WINDOW, "sigma": SSIM_SIGMA, "k1": SSIM_K1, "k2": SSIM_K2})

    def __post_init__(self):
        if not (-1.0 - 1e-12 <= self.ssim <= 1.0 + 1e-12):
            raise ParameterError(f"ssim {self.ssim} outside [-1, 1]")
        if math.isnan(self.psnr_db) or self.psnr_db == -math.inf:
            raise ParameterError(f"psnr {self.psnr_db} is not a valid value")

    def as_row(self):
        d = asdict(self)
        return {k: d[k] for k in CSV_FIELDS}


def format_row(row):
    out = {}
    for k in CSV_FIELDS:
        v = row[k]
        if isinstance(v, float):
            out[k] = "inf" if v == math.inf else repr(v)
        else:
            out[k] = str(v)
    return out


def write_metrics_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for rec in records:
            row = rec.as_row() if isinstance(rec, MetricRecord) else rec
            writer.writerow(format_row(row))


def save_pgm(image, path):
    """Write an 8-bit binary PGM preview, linearly rescaled to [0, 255]."""
    img = _magnitude(image)
    if img.ndim != 2:
        raise ShapeError(f"PGM preview needs a 2-D image, got shape {img.shape}")
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = (img - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(img)
    data = np.clip(np.round(scaled), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def load_pgm(path):
    """Read an 8-bit binary PGM as floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                raise ValueError("truncated PGM header")
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise ValueError("only 8-bit PGM files are supported")
    pixels = data[pos + 1:pos + 1 + w * h]
    if len(pixels) != w * h:
        raise ValueError("truncated PGM pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).astype(np.float64) / maxval
