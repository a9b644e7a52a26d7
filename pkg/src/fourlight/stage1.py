"""Fourier reconstruction stage: six spectral components with skip connections.

Each component transforms its features to the Fourier domain, enhances the
amplitude with a luminance-attention gate and the phase with channel-wise
transposed attention over infrared-derived features, then transforms back.
The luminance U-Net and the shared base extractors run once; each component
owns lightweight 1x1 refiners of the shared bases.
"""

import dataclasses
import math
from typing import NamedTuple, Optional

import numpy as np

from . import color
from . import fourier
from . import tensor as T
from .tensor import ConvSpec, ShapeError, Tensor


@dataclasses.dataclass
class LaNetParams:
    """Two-level U-Net predicting the luminance attention map from Y."""

    enc0: ConvSpec
    enc1: ConvSpec   # stride 2
    enc2: ConvSpec   # stride 2
    up1: ConvSpec
    dec1: ConvSpec   # after skip concat
    up0: ConvSpec
    dec0: ConvSpec   # after skip concat
    head: ConvSpec   # linear 1x1, clamped only at emission


@dataclasses.dataclass
class FourierComponent:
    amp_conv: ConvSpec
    pha_conv: ConvSpec
    lum_refine: list   # two 1x1 ConvSpec refining the shared luminance base
    inf_refine: list   # two 1x1 ConvSpec refining the shared infrared base


@dataclasses.dataclass
class Stage1Net:
    entry_proj: ConvSpec
    exit_proj: ConvSpec
    components: list
    la_net: LaNetParams
    lum_base: list     # two 1x1 ConvSpec, shared amplitude extraction
    inf_base: list     # two 1x1 ConvSpec, shared phase extraction
    slope: float = 0.2


class Stage1Output(NamedTuple):
    i_s1: Tensor
    l_att_pred: Optional[Tensor]


N_COMPONENTS = 6


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def _conv(rng, out_ch, in_ch, k=1, stride=1, sigma=None, bias_sigma=0.0):
    if sigma is None:
        sigma = 1.0 / math.sqrt(in_ch * k * k)
    kernel = rng.normal(0.0, sigma, size=(out_ch, in_ch, k, k))
    bias = (rng.normal(0.0, bias_sigma, size=(out_ch,)) if bias_sigma
            else np.zeros(out_ch))
    return ConvSpec(Tensor(kernel), Tensor(bias),
                    stride=stride, padding=(k - 1) // 2)


def _zero_conv(out_ch, in_ch, k=1, stride=1):
    return ConvSpec(T.zeros((out_ch, in_ch, k, k)), T.zeros((out_ch,)),
                    stride=stride, padding=(k - 1) // 2)


def _la_net(rng, width, scale, bias_sigma=0.0):
    w = width

    def he(out_ch, in_ch, k, stride=1):
        return _conv(rng, out_ch, in_ch, k, stride,
                     sigma=scale * math.sqrt(2.0 / (in_ch * k * k)),
                     bias_sigma=bias_sigma)

    return LaNetParams(
        enc0=he(w, 1, 3),
        enc1=he(2 * w, w, 3, stride=2),
        enc2=he(4 * w, 2 * w, 3, stride=2),
        up1=he(2 * w, 4 * w, 3),
        dec1=he(2 * w, 4 * w, 3),
        up0=he(w, 2 * w, 3),
        dec0=he(w, 2 * w, 3),
        head=_conv(rng, 1, w, 1, sigma=0.01),
    )


def build_stage1(c1=8, la_width=8, seed=0, init="train", slope=0.2):
    """Create a Stage1Net.

    ``init="train"`` starts the spectral convs at zero so every component is
    an identity map and the stage begins as a near-passthrough, which keeps
    short training runs stable. ``init="random"`` gives every kernel modest
    random weights, used by gradient-flow tests.
    """
    rng = np.random.default_rng(seed)
    train = init == "train"
    if init not in ("train", "random"):
        raise ValueError(f"unknown init {init!r}")

    entry_kernel = np.zeros((c1, 3, 1, 1))
    entry_kernel[:3, :, 0, 0] = np.eye(3)
    if c1 > 3:
        entry_kernel[3:] = rng.normal(0.0, 0.3, size=(c1 - 3, 3, 1, 1))
    exit_kernel = np.zeros((3, c1, 1, 1))
    exit_kernel[:, :3, 0, 0] = np.eye(3)
    if not train:
        entry_kernel = rng.normal(0.0, 0.5 / math.sqrt(3), size=(c1, 3, 1, 1))
        exit_kernel = rng.normal(0.0, 0.5 / math.sqrt(c1), size=(3, c1, 1, 1))

    # random-init biases keep LeakyReLU pre-activations away from the kink,
    # which the finite-difference suites rely on; training starts from zeros
    bias_sigma = 0.0 if train else 0.1

    def spectral_conv():
        if train:
            return _zero_conv(c1, c1)
        return _conv(rng, c1, c1, sigma=0.5 / math.sqrt(c1),
                     bias_sigma=bias_sigma)

    def refine_pair():
        sigma = (0.2 if train else 0.5) / math.sqrt(c1)
        return [_conv(rng, c1, c1, sigma=sigma, bias_sigma=bias_sigma),
                _conv(rng, c1, c1, sigma=sigma, bias_sigma=bias_sigma)]

    def base_pair():
        q = 0.3 if train else 0.5
        return [_conv(rng, c1, 1, sigma=q, bias_sigma=bias_sigma),
                _conv(rng, c1, c1, sigma=q / math.sqrt(c1),
                      bias_sigma=bias_sigma)]

    components = [
        FourierComponent(amp_conv=spectral_conv(), pha_conv=spectral_conv(),
                         lum_refine=refine_pair(), inf_refine=refine_pair())
        for _ in range(N_COMPONENTS)
    ]
    return Stage1Net(
        entry_proj=ConvSpec(Tensor(entry_kernel), T.zeros((c1,))),
        exit_proj=ConvSpec(Tensor(exit_kernel), T.zeros((3,))),
        components=components,
        la_net=_la_net(rng, la_width, scale=1.0 if train else 0.5,
                       bias_sigma=bias_sigma),
        lum_base=base_pair(),
        inf_base=base_pair(),
        slope=slope,
    )


def identity_stage1(c1=8, slope=0.2):
    """A Stage1Net that is exactly the identity map on its input image.

    Spectral convs, refiners, bases and the LA-Net are all zero, so every
    component contributes nothing beyond its skip connection, and the entry
    and exit projections embed/extract the RGB channels unchanged.
    """
    entry_kernel = np.zeros((c1, 3, 1, 1))
    entry_kernel[:3, :, 0, 0] = np.eye(3)
    exit_kernel = np.zeros((3, c1, 1, 1))
    exit_kernel[:, :3, 0, 0] = np.eye(3)
    zero_pair = lambda out_ch, in_ch: [_zero_conv(out_ch, in_ch), _zero_conv(out_ch, out_ch)]
    components = [
        FourierComponent(amp_conv=_zero_conv(c1, c1), pha_conv=_zero_conv(c1, c1),
                         lum_refine=zero_pair(c1, c1), inf_refine=zero_pair(c1, c1))
        for _ in range(N_COMPONENTS)
    ]
    w = 4
    la = LaNetParams(
        enc0=_zero_conv(w, 1, 3), enc1=_zero_conv(2 * w, w, 3, stride=2),
        enc2=_zero_conv(4 * w, 2 * w, 3, stride=2), up1=_zero_conv(2 * w, 4 * w, 3),
        dec1=_zero_conv(2 * w, 4 * w, 3), up0=_zero_conv(w, 2 * w, 3),
        dec0=_zero_conv(w, 2 * w, 3), head=_zero_conv(1, w),
    )
    return Stage1Net(
        entry_proj=ConvSpec(Tensor(entry_kernel), T.zeros((c1,))),
        exit_proj=ConvSpec(Tensor(exit_kernel), T.zeros((3,))),
        components=components, la_net=la,
        lum_base=zero_pair(c1, 1), inf_base=zero_pair(c1, 1), slope=slope,
    )


# ---------------------------------------------------------------------------
# Forward operations
# ---------------------------------------------------------------------------

def la_net_forward(y_low, p, slope=0.2):
    """Predict the luminance attention map from the Y channel (B1HW)."""
    if y_low.ndim != 4 or y_low.shape[1] != 1:
        raise ShapeError(f"la_net_forward expects B1HW, got {y_low.shape}")
    H, W = y_low.shape[2], y_low.shape[3]
    if H % 4 != 0 or W % 4 != 0:
        raise ShapeError(f"LA-Net needs H, W divisible by 4, got {H}x{W}; "
                         "pad the input first")
    act = lambda t: T.leaky_relu(t, slope)
    e0 = act(T.conv2d(y_low, p.enc0))
    e1 = act(T.conv2d(e0, p.enc1))
    e2 = act(T.conv2d(e1, p.enc2))
    u1 = act(T.conv2d(T.upsample2(e2), p.up1))
    u1 = act(T.conv2d(T.concat([u1, e1], axis=1), p.dec1))
    u0 = act(T.conv2d(T.upsample2(u1), p.up0))
    u0 = act(T.conv2d(T.concat([u0, e0], axis=1), p.dec0))
    return T.conv2d(u0, p.head)


def luminance_augment(a_out, a_lum_tilde):
    """Gate the amplitude features: A_out * sigmoid(A_lum) + A_out."""
    if a_out.shape != a_lum_tilde.shape:
        raise ShapeError(f"luminance_augment: shapes {a_out.shape} and "
                         f"{a_lum_tilde.shape} differ")
    return T.add(T.mul(a_out, T.sigmoid(a_lum_tilde)), a_out)


def infrared_augment(p_out, p_inf_tilde):
    """Channel-wise transposed attention fusing infrared phase features.

    Per batch item, both inputs are flattened to (C, H*W); the C x C
    attention map softmax(P_out @ P_inf^T) reweights the visible phase
    features, and a residual connection preserves the original.
    """
    if p_out.shape != p_inf_tilde.shape:
        raise ShapeError(f"infrared_augment: shapes {p_out.shape} and "
                         f"{p_inf_tilde.shape} differ")
    B, C, H, W = p_out.shape
    po = T.reshape(p_out, (B, C, H * W))
    pi = T.reshape(p_inf_tilde, (B, C, H * W))
    m_pha = T.softmax_rows(T.bmm(po, T.transpose_last2(pi)))
    fused = T.reshape(T.bmm(m_pha, po), (B, C, H, W))
    return T.add(fused, p_out)


def _chain2(x, pair, slope):
    """Two 1x1 convolutions, each followed by LeakyReLU."""
    x = T.leaky_relu(T.conv2d(x, pair[0]), slope)
    return T.leaky_relu(T.conv2d(x, pair[1]), slope)


def stage1_forward(i_low, i_inf, net, *, use_luminance=True, use_infrared=True,
                   use_luminance_augment=True, use_infrared_augment=True):
    """Run the Fourier reconstruction stage.

    Returns the unclamped stage output I_s1 together with the raw luminance
    attention prediction (None when the luminance branch is disabled).
    Clamping to [0, 1] happens only at image emission.
    """
    if i_low.ndim != 4 or i_low.shape[1] != 3:
        raise ShapeError(f"stage1 expects B3HW input, got {i_low.shape}")
    if i_inf.ndim != 4 or i_inf.shape[1] != 1:
        raise ShapeError(f"infrared input must be B1HW, got {i_inf.shape}")
    if i_inf.shape[2:] != i_low.shape[2:] or i_inf.shape[0] != i_low.shape[0]:
        raise ShapeError(f"infrared size {i_inf.shape} does not match input "
                         f"{i_low.shape}")
    slope = net.slope

    l_att = None
    a_base = None
    if use_luminance:
        y_low = color.rgb_to_ycbcr(i_low).y
        l_att = la_net_forward(y_low, net.la_net, slope)
        if use_luminance_augment:
            a_lum = fourier.decompose(fourier.fft2(l_att)).amplitude
            a_base = _chain2(a_lum, net.lum_base, slope)

    p_base = None
    if use_infrared:
        p_inf = fourier.decompose(fourier.fft2(i_inf)).phase
        p_base = _chain2(p_inf, net.inf_base, slope)

    f = T.conv2d(i_low, net.entry_proj)
    for comp in net.components:
        f_in = f
        polar = fourier.decompose(fourier.fft2(f_in))
        a_out = T.leaky_relu(T.conv2d(polar.amplitude, comp.amp_conv), slope)
        p_out = T.leaky_relu(T.conv2d(polar.phase, comp.pha_conv), slope)

        if a_base is not None:
            a_aug = luminance_augment(a_out, _chain2(a_base, comp.lum_refine, slope))
        else:
            a_aug = a_out

        if p_base is not None:
            p_tilde = _chain2(p_base, comp.inf_refine, slope)
            if use_infrared_augment:
                p_aug = infrared_augment(p_out, p_tilde)
            else:
                # ablated attention: plain additive cross-modal fusion
                p_aug = T.add(p_out, p_tilde)
        else:
            p_aug = p_out

        # learned amplitudes may be negative, so recompose directly instead
        # of going through the sign-checked PolarField
        rec = fourier.ComplexField(re=T.mul(a_aug, T.cos(p_aug)),
                                   im=T.mul(a_aug, T.sin(p_aug)))
        f = T.add(fourier.ifft2(rec), f_in)

    i_s1 = T.conv2d(f, net.exit_proj)
    return Stage1Output(i_s1=i_s1, l_att_pred=l_att)
