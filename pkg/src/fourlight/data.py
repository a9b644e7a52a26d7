"""PNG image I/O and paired low/ground-truth dataset loading.

Datasets are directories with ``low/`` and ``gt/`` subdirectories (plus an
optional ``ir/`` with infrared companions), matched by filename. Pixel values
are scaled to [0, 1] from 8-bit or 16-bit PNGs. Missing infrared images fall
back to the Y channel of the low input; the pair records that substitution.
"""

import dataclasses
import hashlib
import logging
import os
import tempfile

import cv2
import numpy as np

from .tensor import Tensor

logger = logging.getLogger(__name__)

_Y_WEIGHTS = (0.299, 0.587, 0.114)


class DataError(ValueError):
    """Raised for unreadable, malformed, or empty datasets."""


@dataclasses.dataclass
class ImagePair:
    """Registered low/ground-truth pair plus infrared companion (B=1)."""

    low: Tensor          # 1x3xHxW
    gt: Tensor           # 1x3xHxW
    infrared: Tensor     # 1x1xHxW
    infrared_fallback: bool
    id: str


def read_image(path, grayscale=False):
    """Load a PNG as a float array (C, H, W) scaled to [0, 1]."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DataError(f"cannot read image {path}")
    if img.dtype == np.uint8:
        arr = img.astype(np.float64) / 255.0
    elif img.dtype == np.uint16:
        arr = img.astype(np.float64) / 65535.0
    else:
        raise DataError(f"{path}: unsupported pixel type {img.dtype}")
    if arr.ndim == 2:
        arr = arr[None]
    else:
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        arr = arr[:, :, ::-1].transpose(2, 0, 1)  # HWC BGR -> CHW RGB
    arr = np.ascontiguousarray(arr)
    if grayscale and arr.shape[0] == 3:
        arr = (_Y_WEIGHTS[0] * arr[0:1] + _Y_WEIGHTS[1] * arr[1:2]
               + _Y_WEIGHTS[2] * arr[2:3])
    if not grayscale and arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    return arr


def write_image(path, arr, bits=8):
    """Write a (C,H,W) or (1,C,H,W) array in [0,1] as a PNG, atomically."""
    if isinstance(arr, Tensor):
        arr = arr.data
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise DataError("write_image expects a single image")
        arr = arr[0]
    peak = 2 ** bits - 1
    dtype = np.uint8 if bits == 8 else np.uint16
    quantized = np.clip(np.round(np.clip(arr, 0.0, 1.0) * peak), 0, peak).astype(dtype)
    if quantized.shape[0] == 1:
        img = quantized[0]
    else:
        img = quantized[::-1].transpose(1, 2, 0)  # CHW RGB -> HWC BGR
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".png")
    os.close(fd)
    try:
        if not cv2.imwrite(tmp, img):
            raise DataError(f"cannot write image {path}")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def luminance_of(rgb_chw):
    """Y channel (1, H, W) of a (3, H, W) RGB array."""
    return (_Y_WEIGHTS[0] * rgb_chw[0:1] + _Y_WEIGHTS[1] * rgb_chw[1:2]
            + _Y_WEIGHTS[2] * rgb_chw[2:3])


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_dataset(root):
    """Load every matched pair under ``root``; lexicographic by filename.

    Unmatched filenames and pairs with mismatched sizes are reported and
    skipped; an empty result is a hard error.
    """
    low_dir = os.path.join(root, "low")
    gt_dir = os.path.join(root, "gt")
    ir_dir = os.path.join(root, "ir")
    if not os.path.isdir(low_dir) or not os.path.isdir(gt_dir):
        raise DataError(f"{root}: expected low/ and gt/ subdirectories")
    low_names = {n for n in os.listdir(low_dir) if n.lower().endswith(".png")}
    gt_names = {n for n in os.listdir(gt_dir) if n.lower().endswith(".png")}
    for name in sorted(low_names ^ gt_names):
        side = "gt" if name in low_names else "low"
        logger.warning("skipping %s: missing %s/ counterpart", name, side)

    pairs = []
    for name in sorted(low_names & gt_names):
        low = read_image(os.path.join(low_dir, name))
        gt = read_image(os.path.join(gt_dir, name))
        if low.shape != gt.shape:
            logger.warning("skipping pair %s: low %s vs gt %s size mismatch",
                           name, low.shape, gt.shape)
            continue
        ir_path = os.path.join(ir_dir, name)
        fallback = not os.path.isfile(ir_path)
        if fallback:
            infrared = luminance_of(low)
        else:
            infrared = read_image(ir_path, grayscale=True)
            if infrared.shape[1:] != low.shape[1:]:
                logger.warning("skipping pair %s: infrared %s does not match "
                               "image %s", name, infrared.shape, low.shape)
                continue
        pairs.append(ImagePair(low=Tensor(low[None]), gt=Tensor(gt[None]),
                               infrared=Tensor(infrared[None]),
                               infrared_fallback=fallback, id=name))
    if not pairs:
        raise DataError(f"{root}: no usable image pairs found")
    return pairs
