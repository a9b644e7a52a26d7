"""Orthonormal per-channel 2-D Fourier transforms and amplitude/phase tools.

The forward and inverse transforms both carry a 1/sqrt(H*W) factor, so the
pair is unitary: round trips are exact to float precision and Parseval holds
without correction factors. Amplitude/phase swaps and the repeated round-trip
error probe used for diagnostics live here as well.
"""

import dataclasses
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class FourierError(ValueError):
    """Raised when a spectrum violates an asserted property."""


@dataclasses.dataclass
class ComplexField:
    """Per-channel complex spectrum stored as separate real/imaginary tensors."""

    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"re/im shapes differ: {self.re.shape} vs {self.im.shape}")

    @property
    def shape(self):
        return self.re.shape


@dataclasses.dataclass
class PolarField:
    """Amplitude (non-negative) and phase (radians in (-pi, pi]) of a spectrum."""

    amplitude: Tensor
    phase: Tensor

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise ShapeError(f"amplitude/phase shapes differ: "
                             f"{self.amplitude.shape} vs {self.phase.shape}")
        if self.amplitude.size and float(self.amplitude.data.min()) < 0.0:
            raise ValueError("amplitude must be non-negative")


def fft2(x):
    """Forward orthonormal DFT of a BCHW tensor, independently per channel."""
    c = x.shape[1]
    z = T.dft2(x)
    return ComplexField(re=T.slice_axis(z, 1, 0, c),
                        im=T.slice_axis(z, 1, c, 2 * c))


def ifft2(field, assert_real_tol=None):
    """Inverse orthonormal DFT, returning the real part of the result.

    When ``assert_real_tol`` is given, the imaginary residue of the inverse is
    checked against it and a FourierError diagnoses a malformed spectrum.
    """
    if assert_real_tol is not None:
        residue = imaginary_residue(field)
        if residue > assert_real_tol:
            raise FourierError(
                f"inverse transform has imaginary residue {residue:.3e} "
                f"> {assert_real_tol:.0e}; spectrum is not conjugate-symmetric")
    z = T.concat([field.re, field.im], axis=1)
    return T.idft2_real(z)


def imaginary_residue(field):
    """Max |imag| of the full complex inverse transform (diagnostic only)."""
    zc = field.re.data + 1j * field.im.data
    return float(np.abs(np.fft.ifft2(zc, norm="ortho").imag).max())


def decompose(field):
    """Amplitude and full-quadrant phase of a spectrum; (0,0) maps to (0, 0)."""
    return PolarField(amplitude=T.hypot(field.re, field.im),
                      phase=T.atan2(field.im, field.re))


def recompose(polar):
    """Rebuild the complex spectrum as (A cos P, A sin P)."""
    if float(polar.amplitude.data.min()) < 0.0:
        raise ValueError("recompose: amplitude must be non-negative")
    return ComplexField(re=T.mul(polar.amplitude, T.cos(polar.phase)),
                        im=T.mul(polar.amplitude, T.sin(polar.phase)))


class SwapResult(NamedTuple):
    image: Tensor   # clamped to [0, 1] for emission
    raw: Tensor     # unclamped, for metrology


def swap_components(x, y, which):
    """Rebuild ``x`` with one Fourier component taken from ``y``.

    ``which="amplitude"`` keeps x's phase under y's amplitude (the degraded
    image obtained by grafting a bright image's amplitude onto a dark one);
    ``which="phase"`` keeps x's amplitude under y's phase.
    """
    if x.shape != y.shape:
        raise ShapeError(f"swap_components: shapes {x.shape} and {y.shape} differ")
    px = decompose(fft2(x))
    py = decompose(fft2(y))
    if which == "amplitude":
        mixed = PolarField(amplitude=py.amplitude, phase=px.phase)
    elif which == "phase":
        mixed = PolarField(amplitude=px.amplitude, phase=py.phase)
    else:
        raise ValueError(f"which must be 'amplitude' or 'phase', got {which!r}")
    raw = ifft2(recompose(mixed))
    return SwapResult(image=T.clip01(raw), raw=raw)


def quantize(x, bits=8):
    """Snap values to the uniform n-bit grid on [0, 1] (clamping first)."""
    levels = float(2 ** bits - 1)
    return Tensor(np.round(np.clip(x.data, 0.0, 1.0) * levels) / levels, _owned=True)


def roundtrip_loss(x, repeats):
    """Mean absolute error after ``repeats`` forward/inverse transform passes."""
    return roundtrip_series(x, repeats)[-1]


def roundtrip_series(x, repeats, quantize_bits=None):
    """MAE against the original after each of ``repeats`` round trips.

    With ``quantize_bits`` set, the image is requantized between passes,
    reproducing the discretization loss that repeated transforms accumulate.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    original = x.data
    current = x
    series = []
    for _ in range(repeats):
        current = ifft2(fft2(current))
        if quantize_bits is not None:
            current = quantize(current, bits=quantize_bits)
        series.append(float(np.abs(current.data - original).mean()))
    return series
