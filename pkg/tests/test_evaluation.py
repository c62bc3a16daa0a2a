import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bgdm.errors import ParameterError, ShapeError
from bgdm.evaluation import (CSV_FIELDS, MetricRecord, gaussian_window, load_pgm,
                             phantom_gmm_prior, psnr, save_pgm, shepp_logan, ssim,
                             write_metrics_csv)


def test_phantom_basics():
    img = shepp_logan(64)
    assert img.shape == (64, 64)
    assert img[0, 0] == 0 and img[-1, -1] == 0
    assert img.min() >= 0 and img.max() <= 1 and img.max() > 0.9
    with pytest.raises(ParameterError):
        shepp_logan(8)


def test_phantom_mass_scales_with_resolution():
    assert shepp_logan(128).sum() == pytest.approx(4 * shepp_logan(64).sum(), rel=0.01)


def test_phantom_gmm_prior():
    prior = phantom_gmm_prior(32, num_components=3, seed=1)
    assert prior.means.shape == (3, 32, 32)
    np.testing.assert_allclose(prior.weights, 1 / 3)
    assert not np.array_equal(prior.means[0], prior.means[1])
    assert set(np.unique(prior.variances)) <= {2e-3, 2e-3 + 1e-2}
    again = phantom_gmm_prior(32, num_components=3, seed=1)
    assert np.array_equal(again.means, prior.means)
    with pytest.raises(ParameterError):
        phantom_gmm_prior(32, num_components=0)


def test_psnr_examples(rng):
    ref = rng.uniform(0, 1, (16, 16))
    ref[0, 0] = 1.0
    assert psnr(ref, ref) == math.inf
    assert psnr(ref + 0.1, ref) == pytest.approx(20.0, abs=1e-12)
    assert psnr(ref + 2.0, ref, data_range=2.0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ShapeError):
        psnr(ref, ref[:4])
    with pytest.raises(ParameterError):
        psnr(ref, ref, data_range=0.0)


def test_psnr_uses_magnitude(rng):
    ref = rng.uniform(0.1, 1, (8, 8))
    assert psnr(ref * np.exp(1j * rng.uniform(0, 6, (8, 8))), ref) > 250


def test_psnr_known_noise_variance():
    rng = np.random.default_rng(2)
    ref = np.zeros((400, 400))
    ref[0, 0] = 1.0
    v = 1e-3
    got = psnr(ref + rng.normal(0, math.sqrt(v), ref.shape), ref)
    # the sample MSE of 160000 draws has relative SE sqrt(2 / n)
    assert got == pytest.approx(10 * math.log10(1 / v), abs=10 / math.log(10) * 3 * math.sqrt(
        2 / ref.size))


def test_ssim_examples(rng):
    ref = rng.uniform(0, 1, (32, 32))
    assert ssim(ref, ref) == 1.0
    # a checkerboard has (numerically) zero mean under every Gaussian window
    board = 0.5 * (-1.0) ** np.add.outer(np.arange(32), np.arange(32))
    assert ssim(-board, board, data_range=1.0) <= 0
    with pytest.raises(ParameterError):
        ssim(ref[:8, :8], ref[:8, :8])
    with pytest.raises(ShapeError):
        ssim(ref, ref[:20])
    with pytest.raises(ShapeError):
        ssim(ref[0], ref[0])


def _naive_ssim(x, ref, data_range, size=11, sigma=1.5, k1=0.01, k2=0.03):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            a = x[i:i + size, j:j + size]
            b = ref[i:i + size, j:j + size]
            ma, mb = np.sum(w * a), np.sum(w * b)
            va = np.sum(w * (a - ma) ** 2)
            vb = np.sum(w * (b - mb) ** 2)
            cov = np.sum(w * (a - ma) * (b - mb))
            vals.append((2 * ma * mb + c1) * (2 * cov + c2)
                        / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return np.mean(vals)


def test_ssim_matches_per_window_loop():
    rng = np.random.default_rng(9)
    ref = shepp_logan(32)
    x = ref + 0.05 * rng.standard_normal(ref.shape)
    assert ssim(x, ref) == pytest.approx(_naive_ssim(x, ref, ref.max()), abs=1e-8)
    assert ssim(x, ref, data_range=2.0) == pytest.approx(_naive_ssim(x, ref, 2.0), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(11, 24), st.integers(11, 24))
def test_ssim_symmetric(seed, h, w):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 1, (h, w)), rng.uniform(0, 1, (h, w))
    s = ssim(a, b, data_range=1.0)
    assert s == pytest.approx(ssim(b, a, data_range=1.0), abs=1e-12)
    assert -1 <= s <= 1


def test_gaussian_window():
    w = gaussian_window()
    assert w.shape == (11, 11) and w.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.array_equal(w, w.T) and w[5, 5] == w.max()


def test_metric_record():
    rec = MetricRecord("bgdm", "mri", 4.0, 100, math.inf, 1.0, 0.5, 3)
    assert list(rec.as_row()) == list(CSV_FIELDS)
    assert rec.ssim_params == {"window": 11, "sigma": 1.5, "k1": 0.01, "k2": 0.03}
    with pytest.raises(ParameterError):
        MetricRecord("bgdm", "mri", 4.0, 100, 30.0, 1.5, 0.5, 3)
    with pytest.raises(ParameterError):
        MetricRecord("bgdm", "mri", 4.0, 100, math.nan, 0.5, 0.5, 3)


def test_metrics_csv(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv([MetricRecord("none", "ct", 30.0, 50, math.inf, 0.25, 1.0, 0)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert lines[1] == "none,ct,30.0,50,inf,0.25,1.0,0"


def test_pgm_round_trip(tmp_path):
    img = np.linspace(0, 1, 256).reshape(16, 16)
    path = tmp_path / "x.pgm"
    save_pgm(img, path)
    back = load_pgm(path)
    # byte values 9..13 and 32 are whitespace and must not be taken for header padding
    np.testing.assert_allclose(back, np.round(img * 255) / 255, atol=1e-12)


def test_pgm_header_comments_and_errors(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x20\xff")
    np.testing.assert_allclose(load_pgm(path), [[32 / 255, 1.0]])
    path.write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(ValueError, match="truncated"):
        load_pgm(path)
    path.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        load_pgm(path)
    with pytest.raises(ShapeError):
        save_pgm(np.zeros(4), tmp_path / "bad.pgm")
