"""Full-reference image quality metrics and difference diagnostics.

PSNR is computed over all channels jointly; SSIM is the channel mean of the
windowed Gaussian formulation (11x11 window, sigma 1.5, K1=0.01, K2=0.03,
peak 1), averaged over valid windows only. Constants are echoed in reports
so scores are comparable across runs.
"""

import dataclasses
import math
from typing import Optional

import numpy as np

from .tensor import ShapeError, Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _check_pair(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    a, b = _as_array(a), _as_array(b)
    _check_pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def mae(a, b):
    a, b = _as_array(a), _as_array(b)
    _check_pair(a, b, "mae")
    return float(np.abs(a - b).mean())


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_single(a, b, peak):
    """Mean local SSIM of one 2-D channel over valid windows."""
    h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"ssim: image {h}x{w} smaller than the "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = gaussian_window()

    def local_mean(x):
        views = np.lib.stride_tricks.sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(views, win, axes=([2, 3], [0, 1]))

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    e_aa = local_mean(a * a)
    e_bb = local_mean(b * b)
    e_ab = local_mean(a * b)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak=1.0):
    """Structural similarity; channel mean for multi-channel inputs."""
    a, b = _as_array(a), _as_array(b)
    _check_pair(a, b, "ssim")
    if a.ndim == 2:
        return _ssim_single(a, b, peak)
    if a.ndim == 3:
        return float(np.mean([_ssim_single(a[c], b[c], peak)
                              for c in range(a.shape[0])]))
    if a.ndim == 4:
        return float(np.mean([ssim(a[i], b[i], peak) for i in range(a.shape[0])]))
    raise ShapeError(f"ssim: unsupported rank {a.ndim}")


def diff_map(a, b):
    """Per-pixel absolute difference |a - b|."""
    a, b = _as_array(a), _as_array(b)
    _check_pair(a, b, "diff_map")
    return Tensor(np.abs(a - b), _owned=True)


def hist_diff(a, b, bins=64):
    """Signed per-bin count difference of the two value histograms on [0, 1].

    Bin upper edges are inclusive, so a value exactly on an edge falls into
    the bin below it; the signed counts always sum to zero for same-sized
    inputs.
    """
    a, b = _as_array(a), _as_array(b)
    _check_pair(a, b, "hist_diff")

    def counts(x):
        idx = np.ceil(np.clip(x, 0.0, 1.0) * bins).astype(np.int64) - 1
        np.clip(idx, 0, bins - 1, out=idx)
        return np.bincount(idx.ravel(), minlength=bins)

    return counts(a) - counts(b)


@dataclasses.dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    mae: float
    per_image: Optional[list] = None

    def as_dict(self):
        out = {"psnr_db": self.psnr_db, "ssim": self.ssim, "mae": self.mae,
               "ssim_window": SSIM_WINDOW, "ssim_sigma": SSIM_SIGMA,
               "ssim_k1": SSIM_K1, "ssim_k2": SSIM_K2}
        if self.per_image is not None:
            out["per_image"] = self.per_image
        return out


def compare(a, b, peak=1.0):
    """MetricReport for a pair or batch of images (BCHW gets per-image rows)."""
    a_arr, b_arr = _as_array(a), _as_array(b)
    _check_pair(a_arr, b_arr, "compare")
    per_image = None
    if a_arr.ndim == 4 and a_arr.shape[0] > 1:
        per_image = [
            {"psnr_db": psnr(a_arr[i], b_arr[i], peak),
             "ssim": ssim(a_arr[i], b_arr[i], peak),
             "mae": mae(a_arr[i], b_arr[i])}
            for i in range(a_arr.shape[0])
        ]
    return MetricReport(psnr_db=psnr(a_arr, b_arr, peak),
                        ssim=ssim(a_arr, b_arr, peak),
                        mae=mae(a_arr, b_arr),
                        per_image=per_image)
