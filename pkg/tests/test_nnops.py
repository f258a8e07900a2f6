import math

import numpy as np
import pytest

from plksr.nnops import (
    ConvKernel,
    conv2d_fast,
    conv2d_naive,
    depthwise_conv2d,
    gelu,
    make_kernel,
    nearest_upscale,
    pixel_shuffle,
    pixel_unshuffle,
    repeat_channels,
    sigmoid,
)
from plksr.tensor import Tensor, from_array


def rand_tensor(rng, c, h, w, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, (c, h, w)).astype(np.float32))


def rand_kernel(rng, o, i, k, scale=1.0, bias=True):
    w = rng.uniform(-scale, scale, (o, i, k, k)).astype(np.float32)
    b = (rng.uniform(-scale, scale, o) if bias else np.zeros(o)).astype(np.float32)
    return ConvKernel(w, b)


def delta_kernel(channels, k):
    """Per-channel identity: center tap 1 on the diagonal."""
    w = np.zeros((channels, channels, k, k), np.float32)
    for c in range(channels):
        w[c, c, k // 2, k // 2] = 1.0
    return ConvKernel(w, np.zeros(channels, np.float32))


# ---------------------------------------------------------------------------
# conv2d_naive (the oracle itself must be right)
# ---------------------------------------------------------------------------

def test_naive_1x1_identity():
    rng = np.random.default_rng(0)
    x = rand_tensor(rng, 1, 4, 4)
    k = make_kernel(np.ones((1, 1, 1, 1)))
    assert np.array_equal(conv2d_naive(x, k).data, x.data)


def test_naive_delta_identity():
    rng = np.random.default_rng(1)
    x = rand_tensor(rng, 3, 5, 6)
    assert np.array_equal(conv2d_naive(x, delta_kernel(3, 3)).data, x.data)


def test_naive_zero_padding_counts():
    x = Tensor(np.ones((1, 3, 3), np.float32))
    k = make_kernel(np.ones((1, 1, 3, 3)))
    out = conv2d_naive(x, k).data[0]
    assert out[1, 1] == 9.0
    for corner in [(0, 0), (0, 2), (2, 0), (2, 2)]:
        assert out[corner] == 4.0
    for edge in [(0, 1), (1, 0), (1, 2), (2, 1)]:
        assert out[edge] == 6.0


def test_naive_channel_mismatch():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError):
        conv2d_naive(rand_tensor(rng, 2, 3, 3), rand_kernel(rng, 1, 3, 3))


# ---------------------------------------------------------------------------
# conv2d_fast vs the oracle
# ---------------------------------------------------------------------------

def test_fast_matches_naive_randomized():
    # fan-in-scaled weights keep outputs O(1), the magnitude the absolute
    # 1e-4 equivalence tolerance is calibrated for
    rng = np.random.default_rng(3)
    kchoices = [1, 3, 13, 17]
    worst = 0.0
    for trial in range(100):
        k = kchoices[trial % len(kchoices)]
        cin = int(rng.integers(1, 65)) if trial % 7 == 0 else int(rng.integers(1, 17))
        cout = int(rng.integers(1, 13))
        h = int(rng.integers(1, 33)) if trial % 5 == 0 else int(rng.integers(1, 15))
        w = int(rng.integers(1, 33)) if trial % 5 == 1 else int(rng.integers(1, 15))
        x = rand_tensor(rng, cin, h, w)
        kern = rand_kernel(rng, cout, cin, k, scale=1.0 / math.sqrt(cin * k * k))
        diff = np.abs(conv2d_fast(x, kern).data - conv2d_naive(x, kern).data).max()
        worst = max(worst, float(diff))
    assert worst <= 1e-4, f"max |fast - naive| = {worst}"


def test_fast_stress_shape_large_magnitude():
    # unscaled [-1, 1] weights at the largest shape drive outputs to ~|50|;
    # the equivalence bound scales with output magnitude beyond 1
    rng = np.random.default_rng(4)
    x = rand_tensor(rng, 64, 32, 32)
    kern = rand_kernel(rng, 16, 64, 17)
    want = conv2d_naive(x, kern).data
    diff = np.abs(conv2d_fast(x, kern).data - want).max()
    assert diff <= 1e-4 * max(1.0, float(np.abs(want).max()))


def test_fast_identity_1x1_exact():
    rng = np.random.default_rng(5)
    x = rand_tensor(rng, 4, 6, 7)
    assert np.array_equal(conv2d_fast(x, delta_kernel(4, 1)).data, x.data)


def test_fast_zero_weights_gives_bias():
    rng = np.random.default_rng(6)
    x = rand_tensor(rng, 3, 4, 4)
    b = np.array([0.5, -1.25], np.float32)
    k = ConvKernel(np.zeros((2, 3, 3, 3), np.float32), b)
    out = conv2d_fast(x, k).data
    assert np.array_equal(out[0], np.full((4, 4), 0.5, np.float32))
    assert np.array_equal(out[1], np.full((4, 4), -1.25, np.float32))


def test_conv_linearity():
    rng = np.random.default_rng(7)
    x = rand_tensor(rng, 4, 8, 8)
    y = rand_tensor(rng, 4, 8, 8)
    kern = rand_kernel(rng, 5, 4, 3, bias=False)
    a, b = 0.75, -1.5
    mix = Tensor((a * x.data + b * y.data).astype(np.float32))
    lhs = conv2d_fast(mix, kern).data
    rhs = a * conv2d_fast(x, kern).data + b * conv2d_fast(y, kern).data
    assert np.abs(lhs - rhs).max() <= 1e-4


@pytest.mark.parametrize("k", [3, 5, 13])
def test_border_law_constant_input(k):
    const = 0.5
    x = Tensor(np.full((1, 2 * k, 2 * k), const, np.float32))
    kern = make_kernel(np.ones((1, 1, k, k)))
    out = conv2d_fast(x, kern).data[0]
    interior = out[k // 2: -(k // 2), k // 2: -(k // 2)]
    assert np.allclose(interior, k * k * const, rtol=1e-6)
    half_up = (k + 1) // 2
    for corner in [(0, 0), (0, -1), (-1, 0), (-1, -1)]:
        assert np.isclose(out[corner], half_up * half_up * const, rtol=1e-6)


# ---------------------------------------------------------------------------
# depthwise
# ---------------------------------------------------------------------------

def test_depthwise_delta_identity():
    rng = np.random.default_rng(8)
    x = rand_tensor(rng, 5, 6, 6)
    w = np.zeros((5, 1, 3, 3), np.float32)
    w[:, 0, 1, 1] = 1.0
    assert np.array_equal(
        depthwise_conv2d(x, ConvKernel(w, np.zeros(5, np.float32))).data, x.data
    )


def test_depthwise_matches_blockdiag_full_conv():
    rng = np.random.default_rng(9)
    c, k = 6, 5
    x = rand_tensor(rng, c, 9, 8)
    dw = rand_kernel(rng, c, 1, k)
    full_w = np.zeros((c, c, k, k), np.float32)
    for ch in range(c):
        full_w[ch, ch] = dw.weights[ch, 0]
    full = ConvKernel(full_w, dw.bias.copy())
    diff = np.abs(depthwise_conv2d(x, dw).data - conv2d_naive(x, full).data).max()
    assert diff <= 1e-4


def test_depthwise_zero_filter_channel_gives_bias():
    rng = np.random.default_rng(10)
    x = rand_tensor(rng, 2, 4, 4)
    w = rng.uniform(-1, 1, (2, 1, 3, 3)).astype(np.float32)
    w[1] = 0.0
    b = np.array([0.0, 2.5], np.float32)
    out = depthwise_conv2d(x, ConvKernel(w, b)).data
    assert np.array_equal(out[1], np.full((4, 4), 2.5, np.float32))


def test_depthwise_channel_mismatch():
    rng = np.random.default_rng(11)
    with pytest.raises(ValueError):
        depthwise_conv2d(rand_tensor(rng, 3, 4, 4), rand_kernel(rng, 4, 1, 3))
    with pytest.raises(ValueError):
        depthwise_conv2d(rand_tensor(rng, 3, 4, 4), rand_kernel(rng, 3, 2, 3))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def test_gelu_reference_points():
    vals = from_array([0.0, 1.0, -10.0, 10.0], (4, 1, 1))
    out = gelu(vals).flat
    assert out[0] == 0.0
    assert abs(out[1] - 0.841345) <= 1e-5
    assert abs(out[2] - 0.0) <= 1e-6
    assert abs(out[3] - 10.0) <= 1e-6


def test_sigmoid_reference_points():
    out = sigmoid(from_array([0.0, 30.0, -30.0], (3, 1, 1))).flat
    assert out[0] == 0.5
    assert abs(out[1] - 1.0) <= 1e-9
    assert abs(out[2]) <= 1e-9


def test_sigmoid_symmetry_and_range():
    rng = np.random.default_rng(12)
    x = rand_tensor(rng, 4, 8, 8, lo=-12.0, hi=12.0)
    neg = Tensor(-x.data)
    s, sn = sigmoid(x).data, sigmoid(neg).data
    assert np.abs(s + sn - 1.0).max() <= 1e-6
    # strictly inside (0, 1) away from float32 saturation
    assert (s > 0.0).all() and (s < 1.0).all()


# ---------------------------------------------------------------------------
# pixel shuffle / repeat / nearest
# ---------------------------------------------------------------------------

def test_pixel_shuffle_ordering():
    t = from_array([1.0, 2.0, 3.0, 4.0], (4, 1, 1))
    out = pixel_shuffle(t, 2)
    assert out.shape == (1, 2, 2)
    assert np.array_equal(out.data[0], [[1.0, 2.0], [3.0, 4.0]])


def test_pixel_shuffle_r1_identity_and_errors():
    rng = np.random.default_rng(13)
    t = rand_tensor(rng, 3, 2, 2)
    assert np.array_equal(pixel_shuffle(t, 1).data, t.data)
    with pytest.raises(ValueError):
        pixel_shuffle(t, 2)  # 3 channels not divisible by 4
    with pytest.raises(ValueError):
        pixel_shuffle(t, 0)


def test_pixel_shuffle_unshuffle_roundtrip():
    rng = np.random.default_rng(14)
    t = rand_tensor(rng, 18, 3, 5)
    back = pixel_unshuffle(pixel_shuffle(t, 3), 3)
    assert np.array_equal(back.data, t.data)


def test_pixel_shuffle_preserves_multiset():
    rng = np.random.default_rng(15)
    t = rand_tensor(rng, 8, 4, 3)
    out = pixel_shuffle(t, 2)
    assert np.array_equal(np.sort(out.flat), np.sort(t.flat))


def test_repeat_channels_pattern():
    rng = np.random.default_rng(16)
    t = rand_tensor(rng, 3, 2, 2)
    assert np.array_equal(repeat_channels(t, 1).data, t.data)
    rep = repeat_channels(t, 4)
    assert rep.shape == (12, 2, 2)
    for src in range(3):
        for j in range(4):
            assert np.array_equal(rep.data[src * 4 + j], t.data[src])
    with pytest.raises(ValueError):
        repeat_channels(t, 0)


def test_repeat_then_shuffle_equals_nearest():
    rng = np.random.default_rng(17)
    for r in (1, 2, 3, 4):
        t = rand_tensor(rng, 3, 4, 5)
        via_shuffle = pixel_shuffle(repeat_channels(t, r * r), r)
        assert np.array_equal(via_shuffle.data, nearest_upscale(t, r).data)


def test_nearest_upscale_basics():
    t = from_array([2.5], (1, 1, 1))
    out = nearest_upscale(t, 3)
    assert out.shape == (1, 3, 3)
    assert np.array_equal(out.data, np.full((1, 3, 3), 2.5, np.float32))
    rng = np.random.default_rng(18)
    t2 = rand_tensor(rng, 2, 3, 3)
    assert np.array_equal(nearest_upscale(t2, 1).data, t2.data)
    with pytest.raises(ValueError):
        nearest_upscale(t2, 0)


# ---------------------------------------------------------------------------
# kernel validation
# ---------------------------------------------------------------------------

def test_kernel_validation():
    with pytest.raises(ValueError):
        ConvKernel(np.zeros((2, 2, 2, 2), np.float32), np.zeros(2, np.float32))
    with pytest.raises(ValueError):
        ConvKernel(np.zeros((2, 2, 3, 3), np.float32), np.zeros(3, np.float32))
    with pytest.raises(ValueError):
        ConvKernel(np.zeros((2, 2, 3, 3), np.float64), np.zeros(2, np.float64))
    k = make_kernel(np.zeros((2, 3, 5, 5)))
    assert (k.out_channels, k.in_channels, k.k) == (2, 3, 5)
