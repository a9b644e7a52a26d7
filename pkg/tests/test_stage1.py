import math

import numpy as np
import pytest

from fourlight import stage1 as s1
from fourlight import tensor as T
from fourlight import training
from fourlight.stage1 import (FourierComponent, LaNetParams, Stage1Net,
                              build_stage1, identity_stage1, infrared_augment,
                              la_net_forward, luminance_augment, stage1_forward)
from fourlight.tensor import (ConvSpec, ShapeError, Tape, Tensor,
                              named_parameters)


def rand(shape, seed=0, lo=0.0, hi=1.0):
    return Tensor(np.random.default_rng(seed).uniform(lo, hi, size=shape))


def identity_conv(c):
    kernel = np.zeros((c, c, 1, 1))
    kernel[:, :, 0, 0] = np.eye(c)
    return ConvSpec(Tensor(kernel), T.zeros((c,)))


def zero_conv(out_c, in_c):
    return ConvSpec(T.zeros((out_c, in_c, 1, 1)), T.zeros((out_c,)))


# ---------------------------------------------------------------------------
# Luminance augment (amplitude gating)
# ---------------------------------------------------------------------------

def test_luminance_augment_zero_gate():
    a = rand((1, 2, 3, 3), seed=1)
    out = luminance_augment(a, T.zeros((1, 2, 3, 3)))
    np.testing.assert_allclose(out.data, 1.5 * a.data, atol=1e-12)


def test_luminance_augment_saturated_gate():
    a = rand((1, 2, 3, 3), seed=2)
    out = luminance_augment(a, Tensor(np.full((1, 2, 3, 3), -20.0)))
    np.testing.assert_allclose(out.data, a.data, atol=1e-6)


def test_luminance_augment_ln3():
    a = Tensor(np.full((1, 1, 1, 1), 2.0))
    out = luminance_augment(a, Tensor(np.full((1, 1, 1, 1), math.log(3.0))))
    assert out.data.reshape(()) == pytest.approx(3.5, abs=1e-9)


def test_luminance_augment_shape_mismatch():
    with pytest.raises(ShapeError):
        luminance_augment(rand((1, 2, 2, 2)), rand((1, 2, 3, 3)))


# ---------------------------------------------------------------------------
# Infrared augment (channel transposed attention)
# ---------------------------------------------------------------------------

def test_infrared_augment_single_channel_doubles():
    p = rand((2, 1, 3, 3), seed=3, lo=-1, hi=1)
    out = infrared_augment(p, rand((2, 1, 3, 3), seed=4))
    np.testing.assert_allclose(out.data, 2.0 * p.data, atol=1e-12)


def test_infrared_augment_uniform_attention_fixture():
    p = Tensor(np.array([[[[0.5, -1.0], [2.0, 0.0]],
                          [[1.5, 1.0], [-2.0, 4.0]]]]))  # 1x2x2x2
    out = infrared_augment(p, T.zeros((1, 2, 2, 2)))
    channel_mean = p.data.mean(axis=1, keepdims=True)
    expected = np.repeat(channel_mean, 2, axis=1) + p.data
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_attention_rows_are_stochastic():
    rng = np.random.default_rng(5)
    p_out = Tensor(rng.normal(size=(2, 4, 4, 4)))
    p_inf = Tensor(rng.normal(size=(2, 4, 4, 4)))
    po = T.reshape(p_out, (2, 4, 16))
    pi = T.reshape(p_inf, (2, 4, 16))
    m = T.softmax_rows(T.bmm(po, T.transpose_last2(pi)))
    np.testing.assert_allclose(m.data.sum(axis=-1), 1.0, atol=1e-9)


# ---------------------------------------------------------------------------
# LA-Net
# ---------------------------------------------------------------------------

def test_la_net_zero_head_outputs_zero():
    net = build_stage1(c1=4, la_width=4, seed=0, init="random")
    zero_head = ConvSpec(T.zeros(net.la_net.head.kernel.shape),
                         T.zeros(net.la_net.head.bias.shape))
    net.la_net.head = zero_head
    out = la_net_forward(rand((1, 1, 8, 8), seed=6), net.la_net)
    np.testing.assert_array_equal(out.data, 0.0)


def test_la_net_shape_contract():
    net = build_stage1(c1=4, la_width=8, seed=1)
    out = la_net_forward(rand((2, 1, 64, 64), seed=7), net.la_net)
    assert out.shape == (2, 1, 64, 64)


def test_la_net_rejects_indivisible_size():
    net = build_stage1(c1=4, la_width=4, seed=2)
    with pytest.raises(ShapeError, match="divisible"):
        la_net_forward(rand((1, 1, 6, 6)), net.la_net)


def test_la_net_toy_training_reaches_zero_target():
    # pairs with y_low == y_gt have an all-zero attention target
    net = build_stage1(c1=4, la_width=4, seed=3, init="random")
    params = named_parameters(net.la_net, "la")
    state = training.AdamState.for_params(params)
    rng = np.random.default_rng(8)
    for _ in range(60):
        y = Tensor(rng.random((2, 1, 16, 16)))
        with Tape() as tape:
            params = named_parameters(net.la_net, "la")
            for _, p in params:
                tape.watch(p)
            pred = la_net_forward(y, net.la_net)
            loss = training.mse_loss(pred, T.zeros(pred.shape))
        grads = tape.backward(loss)
        updates = training.adam_step(params, [grads.get(p) for _, p in params],
                                     state, 1e-3)
        for name, value in updates:
            T.set_parameter(net.la_net, name.split(".", 1)[1], value)
    final = la_net_forward(Tensor(rng.random((2, 1, 16, 16))), net.la_net)
    assert np.abs(final.data).mean() < 0.05


# ---------------------------------------------------------------------------
# Full stage forward
# ---------------------------------------------------------------------------

def _fixture_net(c1, slope=0.2, la_width=4):
    """Identity amp/pha convs, zero refiners and bases, zero LA-Net."""
    components = [
        FourierComponent(amp_conv=identity_conv(c1), pha_conv=identity_conv(c1),
                         lum_refine=[zero_conv(c1, c1), zero_conv(c1, c1)],
                         inf_refine=[zero_conv(c1, c1), zero_conv(c1, c1)])
        for _ in range(s1.N_COMPONENTS)
    ]
    w = la_width
    la = LaNetParams(
        enc0=ConvSpec(T.zeros((w, 1, 3, 3)), T.zeros((w,)), padding=1),
        enc1=ConvSpec(T.zeros((2 * w, w, 3, 3)), T.zeros((2 * w,)), stride=2, padding=1),
        enc2=ConvSpec(T.zeros((4 * w, 2 * w, 3, 3)), T.zeros((4 * w,)), stride=2, padding=1),
        up1=ConvSpec(T.zeros((2 * w, 4 * w, 3, 3)), T.zeros((2 * w,)), padding=1),
        dec1=ConvSpec(T.zeros((2 * w, 4 * w, 3, 3)), T.zeros((2 * w,)), padding=1),
        up0=ConvSpec(T.zeros((w, 2 * w, 3, 3)), T.zeros((w,)), padding=1),
        dec0=ConvSpec(T.zeros((w, 2 * w, 3, 3)), T.zeros((w,)), padding=1),
        head=zero_conv(1, w),
    )
    rng = np.random.default_rng(99)
    entry = ConvSpec(Tensor(rng.normal(0, 0.4, (c1, 3, 1, 1))), T.zeros((c1,)))
    exit_ = ConvSpec(Tensor(rng.normal(0, 0.4, (3, c1, 1, 1))), T.zeros((3,)))
    return Stage1Net(entry_proj=entry, exit_proj=exit_, components=components,
                     la_net=la, lum_base=[zero_conv(c1, 1), zero_conv(c1, c1)],
                     inf_base=[zero_conv(c1, 1), zero_conv(c1, c1)], slope=slope)


def _conv1x1_np(x, spec):
    k = spec.kernel.data[:, :, 0, 0]
    return np.einsum("oc,bchw->bohw", k, x) + spec.bias.data[None, :, None, None]


def stage1_straightline(low, inf, net):
    """Plain numpy replay of the documented stage-1 algebra.

    Assumes zero refiners/bases: the amplitude gate is sigmoid(0) = 0.5 and
    the phase attention is the uniform C x C map (channel-mean broadcast).
    """
    slope = net.slope
    lrelu = lambda v: np.where(v >= 0, v, slope * v)
    f = _conv1x1_np(low, net.entry_proj)
    for comp in net.components:
        spec = np.fft.fft2(f, norm="ortho")
        amp, pha = np.abs(spec), np.angle(spec)
        a_out = lrelu(_conv1x1_np(amp, comp.amp_conv))
        p_out = lrelu(_conv1x1_np(pha, comp.pha_conv))
        a_aug = a_out * 0.5 + a_out
        p_aug = p_out.mean(axis=1, keepdims=True) + p_out
        rebuilt = a_aug * np.cos(p_aug) + 1j * a_aug * np.sin(p_aug)
        f = np.fft.ifft2(rebuilt, norm="ortho").real + f
    return _conv1x1_np(f, net.exit_proj)


def test_stage1_matches_straightline_oracle():
    net = _fixture_net(c1=4)
    low = rand((1, 3, 8, 8), seed=10)
    inf = rand((1, 1, 8, 8), seed=11)
    out = stage1_forward(low, inf, net)
    expected = stage1_straightline(low.data, inf.data, net)
    np.testing.assert_allclose(out.i_s1.data, expected, atol=1e-9)


def test_stage1_shape_contract():
    net = build_stage1(c1=8, seed=4)
    out = stage1_forward(rand((1, 3, 64, 64), seed=12),
                         rand((1, 1, 64, 64), seed=13), net)
    assert out.i_s1.shape == (1, 3, 64, 64)
    assert out.l_att_pred.shape == (1, 1, 64, 64)


def test_stage1_size_mismatch_rejected():
    net = build_stage1(c1=4, la_width=4, seed=5)
    with pytest.raises(ShapeError, match="infrared"):
        stage1_forward(rand((1, 3, 8, 8)), rand((1, 1, 16, 16)), net)


def test_infrared_ablation_changes_output():
    net = build_stage1(c1=4, la_width=4, seed=6, init="random")
    low = rand((1, 3, 8, 8), seed=14)
    inf = rand((1, 1, 8, 8), seed=15)
    with_ir = stage1_forward(low, inf, net)
    without_ir = stage1_forward(low, inf, net, use_infrared=False)
    assert np.abs(with_ir.i_s1.data - without_ir.i_s1.data).mean() > 0


def test_infrared_augment_off_is_additive_fusion():
    net = build_stage1(c1=4, la_width=4, seed=7, init="random")
    low = rand((1, 3, 8, 8), seed=16)
    inf = rand((1, 1, 8, 8), seed=17)
    attention = stage1_forward(low, inf, net)
    additive = stage1_forward(low, inf, net, use_infrared_augment=False)
    disabled = stage1_forward(low, inf, net, use_infrared=False)
    assert np.abs(attention.i_s1.data - additive.i_s1.data).mean() > 0
    assert np.abs(additive.i_s1.data - disabled.i_s1.data).mean() > 0


def test_roundtrip_plus_skips_invariant():
    # identity spectral convs with a transparent activation and both augments
    # disabled reduce every component to an FFT round trip plus its skip
    net = _fixture_net(c1=4, slope=1.0)
    low = rand((1, 3, 8, 8), seed=18)
    inf = rand((1, 1, 8, 8), seed=19)
    out = stage1_forward(low, inf, net,
                         use_luminance_augment=False,
                         use_infrared_augment=False)
    f = _conv1x1_np(low.data, net.entry_proj)
    expected = _conv1x1_np((2.0 ** s1.N_COMPONENTS) * f, net.exit_proj)
    np.testing.assert_allclose(out.i_s1.data, expected, atol=1e-6)


def test_identity_configuration_is_passthrough():
    net = identity_stage1(c1=8)
    low = rand((1, 3, 16, 16), seed=20)
    inf = rand((1, 1, 16, 16), seed=21)
    out = stage1_forward(low, inf, net)
    np.testing.assert_allclose(out.i_s1.data, low.data, atol=1e-12)


# ---------------------------------------------------------------------------
# Structure invariants
# ---------------------------------------------------------------------------

def test_component_parameter_budget():
    net = build_stage1(c1=8, seed=8)
    params = named_parameters(net)
    total = sum(t.size for _, t in params)
    comp0 = sum(t.size for n, t in params if n.startswith("components.0."))
    comp_all = sum(t.size for n, t in params if n.startswith("components."))
    assert comp_all == s1.N_COMPONENTS * comp0
    rest = sum(t.size for n, t in params
               if n.startswith(("la_net.", "lum_base.", "inf_base.",
                                "entry_proj.", "exit_proj.")))
    assert total == comp_all + rest
    assert len(net.components) == 6


def test_components_do_not_share_parameters():
    net = build_stage1(c1=4, la_width=4, seed=9, init="random")
    k0 = net.components[0].amp_conv.kernel.data
    k1 = net.components[1].amp_conv.kernel.data
    assert not np.array_equal(k0, k1)


def test_gradients_reach_every_parameter_group():
    net = build_stage1(c1=4, la_width=4, seed=10, init="random")
    low = rand((1, 3, 8, 8), seed=22)
    inf = rand((1, 1, 8, 8), seed=23)
    gt = rand((1, 3, 8, 8), seed=24)
    with Tape() as tape:
        params = named_parameters(net)
        for _, p in params:
            tape.watch(p)
        out = stage1_forward(low, inf, net)
        loss = T.add(training.mse_loss(out.i_s1, gt),
                     training.mse_loss(out.l_att_pred,
                                       T.zeros(out.l_att_pred.shape)))
    grads = tape.backward(loss)
    dead = [n for n, p in params if not np.any(grads.get(p))]
    assert dead == []
