"""Two-stage Fourier-domain low-light image enhancement.

A self-contained pipeline: float64 tensors with reverse-mode autodiff,
orthonormal 2-D Fourier transforms with amplitude/phase tooling, the two
reconstruction stages, a deterministic training loop, image quality metrics,
and a CLI for experiments.
"""

__version__ = "0.1.0"

from .tensor import ConvSpec, Tape, Tensor, backward  # noqa: F401
from .fourier import (ComplexField, PolarField, decompose, fft2, ifft2,  # noqa: F401
                      recompose, roundtrip_loss, swap_components)
from .metrics import MetricReport, compare, psnr, ssim  # noqa: F401
from .training import LossWeights, TrainConfig, train  # noqa: F401
