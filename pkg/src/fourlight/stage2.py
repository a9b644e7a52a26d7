"""Spatial and texture reconstruction stage.

An encoder downsamples the first-stage output, two parallel six-block paths
process the features (multi-scale spatial convolutions alongside fast Fourier
convolutions), and a decoder rebuilds the image with a global residual from
the stage input. Every block is residual, so a zero-weight network is the
identity map end to end.
"""

import dataclasses
import math

import numpy as np

from . import tensor as T
from .tensor import ConvSpec, ShapeError, Tensor

N_BLOCKS = 6
MS_KERNELS = (3, 5, 7, 9)


@dataclasses.dataclass
class MultiScaleBlock:
    reduce: ConvSpec          # 1x1, C -> C/4
    branches: list            # kernels 3/5/7/9, each C/4 -> C/4, same padding
    merge: ConvSpec           # 1x1, C -> C


@dataclasses.dataclass
class FfcBlock:
    local_conv: ConvSpec      # 3x3 on the local channel half
    global_conv: ConvSpec     # 1x1 over stacked (re, im) of the global half
    merge: ConvSpec           # 1x1, C -> C


@dataclasses.dataclass
class PlainBlock:
    """Traditional conv layer standing in for an ablated specialized block."""

    conv: ConvSpec            # 3x3, C -> C


@dataclasses.dataclass
class Stage2Net:
    enc1: ConvSpec            # 3 -> C/2, stride 2
    enc2: ConvSpec            # C/2 -> C, stride 2
    ms_blocks: list
    ffc_blocks: list
    fuse: ConvSpec            # 1x1, 2C -> C
    dec1: ConvSpec            # C -> C/2 after upsample
    dec2: ConvSpec            # C/2 -> 3 after upsample
    slope: float = 0.2


def _conv(rng, out_ch, in_ch, k, stride=1, sigma=None, bias_sigma=0.0):
    if sigma is None:
        sigma = 1.0 / math.sqrt(in_ch * k * k)
    kernel = rng.normal(0.0, sigma, size=(out_ch, in_ch, k, k))
    bias = (rng.normal(0.0, bias_sigma, size=(out_ch,)) if bias_sigma
            else np.zeros(out_ch))
    return ConvSpec(Tensor(kernel), Tensor(bias),
                    stride=stride, padding=(k - 1) // 2)


def build_stage2(c=16, seed=0, init="train", slope=0.2,
                 use_ffc=True, use_multiscale=True):
    """Create a Stage2Net of width ``c`` (divisible by 4).

    Disabling a path replaces its six specialized blocks with plain residual
    3x3 convolution blocks. ``init="train"`` shrinks the merge and final
    decoder kernels so the stage starts close to a passthrough.
    """
    if c % 4 != 0:
        raise ShapeError(f"stage-2 width must be divisible by 4, got {c}")
    rng = np.random.default_rng(seed)
    train = init == "train"
    if init not in ("train", "random"):
        raise ValueError(f"unknown init {init!r}")
    small = 0.05 if train else 1.0
    # see stage1: random-init biases keep activations off the LeakyReLU kink
    bs = 0.0 if train else 0.1

    def ms_block():
        return MultiScaleBlock(
            reduce=_conv(rng, c // 4, c, 1, bias_sigma=bs),
            branches=[_conv(rng, c // 4, c // 4, k, bias_sigma=bs)
                      for k in MS_KERNELS],
            merge=_conv(rng, c, c, 1, sigma=small / math.sqrt(c), bias_sigma=bs),
        )

    def ffc_block():
        half = c // 2
        return FfcBlock(
            local_conv=_conv(rng, half, half, 3, bias_sigma=bs),
            global_conv=_conv(rng, c, c, 1, bias_sigma=bs),
            merge=_conv(rng, c, c, 1, sigma=small / math.sqrt(c), bias_sigma=bs),
        )

    def plain_block():
        return PlainBlock(conv=_conv(rng, c, c, 3, sigma=small / math.sqrt(9 * c),
                                     bias_sigma=bs))

    return Stage2Net(
        enc1=_conv(rng, c // 2, 3, 3, stride=2, bias_sigma=bs),
        enc2=_conv(rng, c, c // 2, 3, stride=2, bias_sigma=bs),
        ms_blocks=[ms_block() if use_multiscale else plain_block()
                   for _ in range(N_BLOCKS)],
        ffc_blocks=[ffc_block() if use_ffc else plain_block()
                    for _ in range(N_BLOCKS)],
        fuse=_conv(rng, c, 2 * c, 1, bias_sigma=bs),
        dec1=_conv(rng, c // 2, c, 3, bias_sigma=bs),
        dec2=_conv(rng, 3, c // 2, 3, sigma=small / math.sqrt(9 * (c // 2)),
                   bias_sigma=bs),
        slope=slope,
    )


def zero_stage2(c=16, slope=0.2):
    """All-zero Stage2Net; forward is exactly the identity map."""

    def zc(out_ch, in_ch, k, stride=1):
        return ConvSpec(T.zeros((out_ch, in_ch, k, k)), T.zeros((out_ch,)),
                        stride=stride, padding=(k - 1) // 2)

    return Stage2Net(
        enc1=zc(c // 2, 3, 3, stride=2), enc2=zc(c, c // 2, 3, stride=2),
        ms_blocks=[MultiScaleBlock(reduce=zc(c // 4, c, 1),
                                   branches=[zc(c // 4, c // 4, k) for k in MS_KERNELS],
                                   merge=zc(c, c, 1)) for _ in range(N_BLOCKS)],
        ffc_blocks=[FfcBlock(local_conv=zc(c // 2, c // 2, 3),
                             global_conv=zc(c, c, 1),
                             merge=zc(c, c, 1)) for _ in range(N_BLOCKS)],
        fuse=zc(c, 2 * c, 1), dec1=zc(c // 2, c, 3), dec2=zc(3, c // 2, 3),
        slope=slope,
    )


# ---------------------------------------------------------------------------
# Block forwards
# ---------------------------------------------------------------------------

def multiscale_block_forward(f, p):
    """Parallel 3/5/7/9 convolutions over reduced features, sigmoid-gated.

    The reduced features r gate each branch: b_k = conv_k(r) * sigmoid(r);
    the concatenated branches restore the width and a residual adds the input.
    """
    c = f.shape[1]
    if c % 4 != 0:
        raise ShapeError(f"multi-scale block needs channels divisible by 4, got {c}")
    r = T.conv2d(f, p.reduce)
    gate = T.sigmoid(r)
    branches = [T.mul(T.conv2d(r, spec), gate) for spec in p.branches]
    merged = T.conv2d(T.concat(branches, axis=1), p.merge)
    return T.add(f, merged)


def ffc_block_forward(f, p):
    """Fast Fourier convolution block: local conv half, spectral conv half.

    The global half is transformed per channel, its stacked (re, im) channels
    pass through a 1x1 convolution, and the real part of the inverse
    transform returns to the spatial domain.
    """
    c = f.shape[1]
    if c % 2 != 0:
        raise ShapeError(f"FFC block needs an even channel count, got {c}")
    half = c // 2
    f_local = T.slice_axis(f, 1, 0, half)
    f_global = T.slice_axis(f, 1, half, c)
    local = T.conv2d(f_local, p.local_conv)
    spectrum = T.dft2(f_global)
    global_out = T.idft2_real(T.conv2d(spectrum, p.global_conv))
    merged = T.conv2d(T.concat([local, global_out], axis=1), p.merge)
    return T.add(f, merged)


def plain_block_forward(f, p, slope):
    return T.add(f, T.leaky_relu(T.conv2d(f, p.conv), slope))


def _run_block(f, block, slope):
    if isinstance(block, MultiScaleBlock):
        return multiscale_block_forward(f, block)
    if isinstance(block, FfcBlock):
        return ffc_block_forward(f, block)
    return plain_block_forward(f, block, slope)


def stage2_forward(i_s1, net, trace=None):
    """Refine I_s1 into I_s2. Output is unclamped; clamp only at emission.

    ``trace``, when given, captures intermediate tensors for inspection
    (encoder output and the two path outputs).
    """
    if i_s1.ndim != 4 or i_s1.shape[1] != 3:
        raise ShapeError(f"stage2 expects B3HW input, got {i_s1.shape}")
    H, W = i_s1.shape[2], i_s1.shape[3]
    if H % 4 != 0 or W % 4 != 0:
        raise ShapeError(f"stage 2 needs H, W divisible by 4, got {H}x{W}; "
                         "pad the input first")
    slope = net.slope
    act = lambda t: T.leaky_relu(t, slope)

    encoded = act(T.conv2d(act(T.conv2d(i_s1, net.enc1)), net.enc2))
    ms = encoded
    for block in net.ms_blocks:
        ms = _run_block(ms, block, slope)
    ffc = encoded
    for block in net.ffc_blocks:
        ffc = _run_block(ffc, block, slope)

    fused = T.conv2d(T.concat([ms, ffc], axis=1), net.fuse)
    up = act(T.conv2d(T.upsample2(fused), net.dec1))
    residual = T.conv2d(T.upsample2(up), net.dec2)
    i_s2 = T.add(residual, i_s1)

    if trace is not None:
        trace.update(encoded=encoded, ms_input=encoded, ffc_input=encoded,
                     ms_output=ms, ffc_output=ffc)
    return i_s2
