import numpy as np
import pytest

from fourlight import color
from fourlight.color import (luminance_attention_target, rgb_to_ycbcr,
                             ycbcr_to_rgb)
from fourlight.tensor import ShapeError, Tensor


def solid(r, g, b):
    return Tensor(np.array([r, g, b]).reshape(1, 3, 1, 1))


def test_black_maps_to_zero_luma():
    out = rgb_to_ycbcr(solid(0, 0, 0))
    assert out.y.data.reshape(()) == 0.0


def test_white_is_on_gray_axis():
    out = rgb_to_ycbcr(solid(1, 1, 1))
    assert out.y.data.reshape(()) == pytest.approx(1.0, abs=1e-12)
    assert out.cb.data.reshape(()) == pytest.approx(0.5, abs=1e-12)
    assert out.cr.data.reshape(()) == pytest.approx(0.5, abs=1e-12)


def test_pure_red_luma():
    out = rgb_to_ycbcr(solid(1, 0, 0))
    assert out.y.data.reshape(()) == pytest.approx(0.299, abs=1e-12)


def test_roundtrip_in_gamut():
    rng = np.random.default_rng(0)
    rgb = Tensor(rng.random((2, 3, 8, 8)))
    back = ycbcr_to_rgb(rgb_to_ycbcr(rgb))
    assert np.abs(back.data - rgb.data).max() < 1e-6


def test_wrong_channel_count_rejected():
    with pytest.raises(ShapeError):
        rgb_to_ycbcr(Tensor(np.zeros((1, 4, 2, 2))))


def test_out_of_range_clamped_and_counted():
    color.reset_clamp_count()
    bad = Tensor(np.array([1.5, 0.5, -0.2]).reshape(1, 3, 1, 1))
    out = rgb_to_ycbcr(bad)
    assert color.clamp_count == 2
    assert out.y.data.reshape(()) <= 1.0
    color.reset_clamp_count()


# ---------------------------------------------------------------------------
# Luminance attention target
# ---------------------------------------------------------------------------

def flat(value, shape=(1, 1, 2, 2)):
    return Tensor(np.full(shape, float(value)))


def test_identical_luminance_gives_zero_map():
    y = flat(0.4)
    np.testing.assert_array_equal(
        luminance_attention_target(y, y).data, 0.0)


def test_reference_ratio():
    target = luminance_attention_target(flat(0.2), flat(0.8))
    np.testing.assert_allclose(target.data, 0.75, atol=1e-12)


def test_dark_ground_truth_clamped():
    target = luminance_attention_target(flat(0.5), flat(0.0),
                                        eps=1e-3, clamp_max=10.0)
    np.testing.assert_array_equal(target.data, 10.0)


def test_nonnegative_and_monotone():
    rng = np.random.default_rng(1)
    y_gt = Tensor(rng.uniform(0.2, 1.0, size=(1, 1, 4, 4)))
    near = Tensor(np.clip(y_gt.data - 0.1, 0, 1))
    far = Tensor(np.clip(y_gt.data - 0.3, 0, 1))
    t_near = luminance_attention_target(near, y_gt).data
    t_far = luminance_attention_target(far, y_gt).data
    assert (t_near >= 0).all()
    assert (t_far >= t_near - 1e-12).all()


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        luminance_attention_target(flat(0.1), flat(0.1, shape=(1, 1, 3, 3)))
