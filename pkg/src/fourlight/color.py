"""RGB <-> YCbCr conversion (BT.601 full range) and the luminance target map.

These are data-preparation functions: they never participate in gradient
flow, so they work directly on the underlying arrays.
"""

import dataclasses
import logging

import numpy as np

from .tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

# counts pixels clamped into [0, 1] on conversion input; useful when hunting
# for out-of-gamut values leaking in from upstream stages
clamp_count = 0


def reset_clamp_count():
    global clamp_count
    clamp_count = 0


@dataclasses.dataclass
class YcbcrImage:
    y: Tensor
    cb: Tensor
    cr: Tensor


def _clamped01(arr, label):
    global clamp_count
    out_of_range = int((arr < 0.0).sum() + (arr > 1.0).sum())
    if out_of_range:
        clamp_count += out_of_range
        logger.warning("%s: clamped %d out-of-range values", label, out_of_range)
        return np.clip(arr, 0.0, 1.0)
    return arr


def rgb_to_ycbcr(rgb):
    """BT.601 full-range conversion of a B3HW tensor in [0, 1]."""
    if rgb.ndim != 4 or rgb.shape[1] != 3:
        raise ShapeError(f"rgb_to_ycbcr expects B3HW, got {rgb.shape}")
    arr = _clamped01(rgb.data, "rgb_to_ycbcr")
    r, g, b = arr[:, 0:1], arr[:, 1:2], arr[:, 2:3]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 0.5 + (b - y) * 0.564
    cr = 0.5 + (r - y) * 0.713
    return YcbcrImage(y=Tensor(y, _owned=True),
                      cb=Tensor(cb, _owned=True),
                      cr=Tensor(cr, _owned=True))


def ycbcr_to_rgb(img):
    """Inverse of rgb_to_ycbcr; exact for in-gamut inputs."""
    y, cb, cr = img.y.data, img.cb.data, img.cr.data
    if y.ndim != 4 or y.shape[1] != 1:
        raise ShapeError(f"ycbcr_to_rgb expects B1HW planes, got {y.shape}")
    b = y + (cb - 0.5) / 0.564
    r = y + (cr - 0.5) / 0.713
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return Tensor(np.concatenate([r, g, b], axis=1), _owned=True)


def luminance_attention_target(y_low, y_gt, eps=1e-3, clamp_max=10.0):
    """Relative luminance error |Y_low - Y_gt| / max(Y_gt, eps), clamped.

    Bright regions of the map mark areas the enhancement should focus on;
    the eps guard and the clamp keep dark ground-truth pixels from producing
    unbounded targets.
    """
    if y_low.shape != y_gt.shape:
        raise ShapeError(f"luminance target: shapes {y_low.shape} and "
                         f"{y_gt.shape} differ")
    target = np.abs(y_low.data - y_gt.data) / np.maximum(y_gt.data, eps)
    return Tensor(np.clip(target, 0.0, clamp_max), _owned=True)
