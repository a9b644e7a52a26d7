"""Seeded procedural dataset generator for desk-scale experiments.

Ground-truth images mix gradients, checkerboards and low-pass filtered noise;
low-light companions are gamma-darkened (gamma in [2, 3]) with additive
Gaussian noise (sigma 0.02). The same generator provides the bundled sample
pair used by the swap diagnostics.
"""

import os

import numpy as np

from .tensor import Tensor


def _gradient(rng, size):
    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    a, b = rng.normal(size=2)
    field = a * xs + b * ys
    span = field.max() - field.min()
    return (field - field.min()) / (span if span > 0 else 1.0)


def _checkerboard(rng, size):
    cell = int(rng.integers(4, max(5, size // 4)))
    ys, xs = np.mgrid[0:size, 0:size]
    return ((ys // cell + xs // cell) % 2).astype(np.float64)


def _filtered_noise(rng, size):
    noise = rng.random((size, size))
    # separable box blur, applied a few times for a smooth field
    for _ in range(3):
        kernel = np.ones(5) / 5.0
        noise = np.apply_along_axis(
            lambda r: np.convolve(r, kernel, mode="same"), 1, noise)
        noise = np.apply_along_axis(
            lambda c: np.convolve(c, kernel, mode="same"), 0, noise)
    span = noise.max() - noise.min()
    return (noise - noise.min()) / (span if span > 0 else 1.0)


def synthesize_pair(rng, size=64):
    """One (low, gt) pair of (3, size, size) arrays in [0, 1]."""
    layers = [_gradient(rng, size), _checkerboard(rng, size),
              _filtered_noise(rng, size)]
    weights = rng.dirichlet(np.ones(len(layers)), size=3)  # per channel
    gt = np.stack([sum(w * lay for w, lay in zip(weights[c], layers))
                   for c in range(3)])
    # keep ground truth comfortably mid-range so darkening is visible
    gt = 0.15 + 0.75 * gt
    gamma = rng.uniform(2.0, 3.0)
    low = np.clip(gt ** gamma + rng.normal(0.0, 0.02, size=gt.shape), 0.0, 1.0)
    return low, gt


def generate_dataset(out_dir, pairs=16, size=64, seed=7):
    """Write a seeded synthetic dataset as 8-bit PNGs under low/ and gt/."""
    import cv2

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    low_dir = os.path.join(out_dir, "low")
    gt_dir = os.path.join(out_dir, "gt")
    os.makedirs(low_dir, exist_ok=True)
    os.makedirs(gt_dir, exist_ok=True)
    names = []
    for i in range(pairs):
        low, gt = synthesize_pair(rng, size)
        name = f"{i:03d}.png"
        for arr, directory in ((low, low_dir), (gt, gt_dir)):
            u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
            bgr = u8[::-1].transpose(1, 2, 0)  # CHW RGB -> HWC BGR
            tmp = os.path.join(directory, name + ".tmp.png")
            cv2.imwrite(tmp, bgr)
            os.replace(tmp, os.path.join(directory, name))
        names.append(name)
    return names


def sample_pair(size=64, seed=2024):
    """Bundled deterministic low/ground-truth pair as (1,3,H,W) tensors."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A9]))
    low, gt = synthesize_pair(rng, size)
    return Tensor(low[None]), Tensor(gt[None])
