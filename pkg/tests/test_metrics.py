import math

import numpy as np
import pytest

from fourlight import metrics
from fourlight.metrics import (compare, diff_map, gaussian_window, hist_diff,
                               mae, psnr, ssim)
from fourlight.tensor import ShapeError


def ssim_reference(a, b, peak=1.0):
    """Direct per-window SSIM with explicit loops (independent oracle)."""
    win = gaussian_window()
    k = win.shape[0]
    h, w = a.shape
    values = []
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            pa = a[i:i + k, j:j + k]
            pb = b[i:i + k, j:j + k]
            mu_a = (win * pa).sum()
            mu_b = (win * pb).sum()
            var_a = (win * pa * pa).sum() - mu_a ** 2
            var_b = (win * pb * pb).sum() - mu_b ** 2
            cov = (win * pa * pb).sum() - mu_a * mu_b
            c1 = (0.01 * peak) ** 2
            c2 = (0.03 * peak) ** 2
            values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                          / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------

def test_psnr_identity_sentinel():
    a = np.random.default_rng(0).random((3, 8, 8))
    assert psnr(a, a) == math.inf


def test_psnr_closed_form():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_psnr_constant_offset():
    a = np.random.default_rng(1).uniform(0, 0.9, (4, 4))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_monotone_in_mse():
    a = np.zeros((8, 8))
    assert psnr(a, a + 0.05) > psnr(a, a + 0.1) > psnr(a, a + 0.2)


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

def test_ssim_identity_exactly_one():
    a = np.random.default_rng(2).random((16, 16))
    assert ssim(a, a) == 1.0


def test_ssim_matches_reference_oracle():
    rng = np.random.default_rng(3)
    a = rng.random((16, 16))
    b = 1.0 - a
    got = ssim(a, b)
    assert got < 1.0
    assert got == pytest.approx(ssim_reference(a, b), abs=1e-9)


def test_ssim_matches_reference_on_smooth_pair():
    rng = np.random.default_rng(4)
    base = np.linspace(0.2, 0.8, 16)[None, :] * np.ones((16, 1))
    noisy = np.clip(base + rng.normal(0, 0.05, base.shape), 0, 1)
    assert ssim(base, noisy) == pytest.approx(ssim_reference(base, noisy),
                                              abs=1e-9)


def test_ssim_symmetry():
    rng = np.random.default_rng(5)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_mean_shift_stability():
    rng = np.random.default_rng(6)
    a = 0.5 + 0.1 * rng.standard_normal((16, 16))
    b = a + 1e-3 * rng.standard_normal((16, 16))
    assert abs(ssim(a, b) - ssim(a + 0.01, b + 0.01)) < 1e-6


def test_ssim_window_too_large():
    with pytest.raises(ShapeError, match="window"):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_channel_mean():
    rng = np.random.default_rng(7)
    a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
    per_channel = [ssim(a[c], b[c]) for c in range(3)]
    assert ssim(a, b) == pytest.approx(float(np.mean(per_channel)), abs=1e-12)


# ---------------------------------------------------------------------------
# Difference diagnostics
# ---------------------------------------------------------------------------

def test_diff_and_hist_identity():
    a = np.random.default_rng(8).random((2, 5, 5))
    np.testing.assert_array_equal(diff_map(a, a).data, 0.0)
    np.testing.assert_array_equal(hist_diff(a, a), np.zeros(64, dtype=np.int64))


def test_hist_diff_quarter_bins():
    n = 36
    a = np.full((6, 6), 0.25)
    b = np.full((6, 6), 0.75)
    np.testing.assert_array_equal(hist_diff(a, b, bins=4), [n, 0, -n, 0])


def test_hist_diff_always_sums_to_zero():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a, b = rng.random((7, 3)), rng.random((7, 3))
        assert hist_diff(a, b, bins=16).sum() == 0


def test_hist_diff_edge_values():
    # a: 0.0 -> bin 0, 1.0 -> bin 1; b: both 0.5 -> bin 0 (edge inclusive)
    curve = hist_diff(np.array([0.0, 1.0]), np.array([0.5, 0.5]), bins=2)
    np.testing.assert_array_equal(curve, [-1, 1])


def test_hist_diff_edge_convention():
    # upper edges are inclusive: 0.5 with two bins lands in the first bin
    counts_half = hist_diff(np.array([0.5]), np.array([0.1]), bins=2)
    np.testing.assert_array_equal(counts_half, [0, 0])
    counts_above = hist_diff(np.array([0.51]), np.array([0.1]), bins=2)
    np.testing.assert_array_equal(counts_above, [-1, 1])


def test_mae_basic():
    assert mae(np.zeros(4), np.full(4, 0.25)) == pytest.approx(0.25)


def test_compare_batched_report():
    rng = np.random.default_rng(10)
    a = rng.random((2, 3, 16, 16))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    report = compare(a, b)
    assert len(report.per_image) == 2
    assert report.mae == pytest.approx(mae(a, b))
    d = report.as_dict()
    assert d["ssim_window"] == metrics.SSIM_WINDOW


def test_compare_identity_report():
    a = np.random.default_rng(11).random((1, 3, 16, 16))
    report = compare(a, a.copy())
    assert report.psnr_db == math.inf
    assert report.ssim == 1.0
    assert report.mae == 0.0
