import numpy as np
import pytest

from plksr.model import (
    BlockWeights,
    MixerVariant,
    ModelConfig,
    block_forward,
    count_flops,
    count_params,
    ea_forward,
    mixer_forward,
    model_forward,
    plkc_forward,
    preset_config,
    random_init,
    zero_init,
)
from plksr.nnops import ConvKernel, conv2d_fast, conv2d_naive, gelu, nearest_upscale
from plksr.tensor import Tensor


def rand_tensor(rng, c, h, w):
    return Tensor(rng.uniform(-1, 1, (c, h, w)).astype(np.float32))


def rand_kernel(rng, o, i, k):
    s = 1.0 / np.sqrt(i * k * k)
    return ConvKernel(
        rng.uniform(-s, s, (o, i, k, k)).astype(np.float32),
        rng.uniform(-s, s, o).astype(np.float32),
    )


def zero_kernel(o, i, k, bias=None):
    b = np.zeros(o, np.float32) if bias is None else np.asarray(bias, np.float32)
    return ConvKernel(np.zeros((o, i, k, k), np.float32), b)


ALL_MIXERS = [MixerVariant.FFN, MixerVariant.CCM, MixerVariant.ICCM, MixerVariant.DCCM]


# ---------------------------------------------------------------------------
# config / presets
# ---------------------------------------------------------------------------

def test_presets_match_published_configurations():
    p = preset_config("plksr", 4)
    assert (p.n_blocks, p.width, p.split, p.kernel) == (28, 64, 16, 17)
    assert p.mixer is MixerVariant.DCCM and p.use_ea

    t = preset_config("plksr-tiny", 2)
    assert (t.n_blocks, t.width, t.split, t.kernel) == (12, 64, 16, 13)
    assert t.mixer is MixerVariant.DCCM and not t.use_ea

    with pytest.raises(ValueError):
        preset_config("nope", 2)


def test_config_validation():
    ok = dict(scale=2, n_blocks=1, width=8, split=4, kernel=3)
    ModelConfig(**ok)
    for bad in [dict(scale=0), dict(n_blocks=0), dict(split=0), dict(split=9),
                dict(kernel=4), dict(kernel=-1), dict(width=0)]:
        with pytest.raises(ValueError):
            ModelConfig(**{**ok, **bad})


# ---------------------------------------------------------------------------
# mixers
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("variant", ALL_MIXERS)
def test_mixer_shape_law(variant):
    rng = np.random.default_rng(0)
    c = 6
    kp, ka = {"FFN": (1, 1), "CCM": (3, 1), "ICCM": (1, 3), "DCCM": (3, 3)}[variant.name]
    x = rand_tensor(rng, c, 5, 7)
    out = mixer_forward(x, variant, rand_kernel(rng, 2 * c, c, kp),
                        rand_kernel(rng, c, 2 * c, ka))
    assert out.shape == (c, 5, 7)


def test_mixer_zero_proj_gives_agg_bias():
    rng = np.random.default_rng(1)
    c = 4
    x = rand_tensor(rng, c, 3, 3)
    agg_bias = np.arange(c, dtype=np.float32) - 1.5
    out = mixer_forward(
        x, MixerVariant.DCCM,
        zero_kernel(2 * c, c, 3),
        zero_kernel(c, 2 * c, 3, bias=agg_bias),
    )
    assert np.array_equal(out.data, np.broadcast_to(agg_bias[:, None, None], (c, 3, 3)))


def test_dccm_identity_through_expansion_is_gelu():
    rng = np.random.default_rng(2)
    c = 5
    x = rand_tensor(rng, c, 6, 4)
    proj_w = np.zeros((2 * c, c, 3, 3), np.float32)
    agg_w = np.zeros((c, 2 * c, 3, 3), np.float32)
    for i in range(c):
        proj_w[i, i, 1, 1] = 1.0  # first c of 2c channels carry x
        agg_w[i, i, 1, 1] = 1.0   # agg picks them back
    out = mixer_forward(
        x, MixerVariant.DCCM,
        ConvKernel(proj_w, np.zeros(2 * c, np.float32)),
        ConvKernel(agg_w, np.zeros(c, np.float32)),
    )
    assert np.abs(out.data - gelu(x).data).max() <= 1e-5


def test_mixer_rejects_wrong_kernel_sides():
    rng = np.random.default_rng(3)
    c = 4
    x = rand_tensor(rng, c, 3, 3)
    with pytest.raises(ValueError):
        mixer_forward(x, MixerVariant.FFN,
                      rand_kernel(rng, 2 * c, c, 3), rand_kernel(rng, c, 2 * c, 1))
    with pytest.raises(ValueError):
        mixer_forward(x, MixerVariant.DCCM,
                      rand_kernel(rng, 2 * c, c + 1, 3), rand_kernel(rng, c, 2 * c, 3))


# ---------------------------------------------------------------------------
# partial large-kernel conv
# ---------------------------------------------------------------------------

def test_plkc_degenerate_full_split():
    rng = np.random.default_rng(4)
    x = rand_tensor(rng, 8, 6, 6)
    k = rand_kernel(rng, 8, 8, 5)
    assert np.array_equal(plkc_forward(x, k, 8).data, conv2d_fast(x, k).data)


def test_plkc_delta_kernel_is_identity():
    rng = np.random.default_rng(5)
    x = rand_tensor(rng, 8, 5, 5)
    w = np.zeros((3, 3, 5, 5), np.float32)
    for i in range(3):
        w[i, i, 2, 2] = 1.0
    out = plkc_forward(x, ConvKernel(w, np.zeros(3, np.float32)), 3)
    assert np.array_equal(out.data, x.data)


def test_plkc_matches_embedded_full_kernel_oracle():
    rng = np.random.default_rng(6)
    c, split, k = 12, 5, 3
    x = rand_tensor(rng, c, 7, 6)
    plk = rand_kernel(rng, split, split, k)
    full_w = np.zeros((c, c, k, k), np.float32)
    full_w[:split, :split] = plk.weights
    for ch in range(split, c):
        full_w[ch, ch, k // 2, k // 2] = 1.0  # copy channels split..c
    full_b = np.zeros(c, np.float32)
    full_b[:split] = plk.bias
    got = plkc_forward(x, plk, split)
    want = conv2d_naive(x, ConvKernel(full_w, full_b))
    assert np.abs(got.data - want.data).max() <= 1e-4
    # pass-through channels are bit-identical, not merely close
    assert np.array_equal(got.data[split:], x.data[split:])


def test_plkc_split_too_large():
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        plkc_forward(rand_tensor(rng, 4, 3, 3), rand_kernel(rng, 5, 5, 3), 5)


# ---------------------------------------------------------------------------
# element-wise attention
# ---------------------------------------------------------------------------

def test_ea_zero_weights_halves_input():
    rng = np.random.default_rng(8)
    x = rand_tensor(rng, 4, 5, 5)
    out = ea_forward(x, zero_kernel(4, 4, 3))
    assert np.array_equal(out.data, (0.5 * x.data).astype(np.float32))


def test_ea_saturated_gate_passes_input():
    rng = np.random.default_rng(9)
    x = rand_tensor(rng, 3, 4, 4)
    big_bias = np.full(3, 30.0, np.float32)
    out = ea_forward(x, zero_kernel(3, 3, 3, bias=big_bias))
    assert np.abs(out.data - x.data).max() <= 1e-6


def test_ea_contracts_magnitudes():
    rng = np.random.default_rng(10)
    for _ in range(50):
        c = int(rng.integers(1, 6))
        x = rand_tensor(rng, c, 4, 4)
        ea = rand_kernel(rng, c, c, 3)
        out = ea_forward(x, ea)
        assert (np.abs(out.data) <= np.abs(x.data)).all()


# ---------------------------------------------------------------------------
# block / model forward
# ---------------------------------------------------------------------------

def _block_weights(rng, cfg):
    c = cfg.width
    kp, ka = cfg.mixer_sides()
    return BlockWeights(
        mixer_proj=rand_kernel(rng, 2 * c, c, kp),
        mixer_agg=rand_kernel(rng, c, 2 * c, ka),
        plk=rand_kernel(rng, cfg.split, cfg.split, cfg.kernel),
        ea=rand_kernel(rng, c, c, 3) if cfg.use_ea else None,
        fuse=rand_kernel(rng, c, c, 1),
    )


def test_block_zero_weights_is_identity():
    rng = np.random.default_rng(11)
    cfg = ModelConfig(scale=2, n_blocks=1, width=6, split=3, kernel=5)
    x = rand_tensor(rng, 6, 5, 5)
    bw = BlockWeights(
        mixer_proj=zero_kernel(12, 6, 3), mixer_agg=zero_kernel(6, 12, 3),
        plk=zero_kernel(3, 3, 5), ea=zero_kernel(6, 6, 3),
        fuse=zero_kernel(6, 6, 1),
    )
    assert np.array_equal(block_forward(x, bw, cfg).data, x.data)


@pytest.mark.parametrize("preset", ["plksr", "plksr-tiny"])
def test_block_shape_law(preset):
    rng = np.random.default_rng(12)
    cfg = preset_config(preset, 2)
    x = rand_tensor(rng, cfg.width, 24, 24)
    out = block_forward(x, _block_weights(rng, cfg), cfg)
    assert out.shape == (64, 24, 24)


def test_block_ignores_ea_weights_when_disabled():
    rng = np.random.default_rng(13)
    cfg = ModelConfig(scale=2, n_blocks=1, width=6, split=3, kernel=3, use_ea=False)
    x = rand_tensor(rng, 6, 5, 5)
    bw = _block_weights(rng, cfg)
    with_junk = BlockWeights(
        mixer_proj=bw.mixer_proj, mixer_agg=bw.mixer_agg, plk=bw.plk,
        ea=rand_kernel(rng, 6, 6, 3), fuse=bw.fuse,
    )
    assert np.array_equal(block_forward(x, bw, cfg).data,
                          block_forward(x, with_junk, cfg).data)


def test_zero_model_equals_nearest_upscale():
    rng = np.random.default_rng(14)
    for scale in (1, 2, 3, 4):
        cfg = ModelConfig(scale=scale, n_blocks=2, width=8, split=4, kernel=5)
        img = Tensor(rng.uniform(0, 1, (3, 6, 7)).astype(np.float32))
        out = model_forward(img, zero_init(cfg), cfg)
        assert np.array_equal(out.data, nearest_upscale(img, scale).data)


def test_model_forward_shape_and_determinism():
    rng = np.random.default_rng(15)
    cfg = ModelConfig(scale=4, n_blocks=2, width=8, split=4, kernel=3)
    weights = random_init(cfg, seed=3)
    img = Tensor(rng.uniform(0, 1, (3, 48, 48)).astype(np.float32))
    a = model_forward(img, weights, cfg)
    assert a.shape == (3, 192, 192)
    b = model_forward(img, weights, cfg)
    assert np.array_equal(a.data, b.data)


def test_model_forward_requires_three_channels():
    cfg = ModelConfig(scale=2, n_blocks=1, width=4, split=2, kernel=3)
    with pytest.raises(ValueError):
        model_forward(Tensor(np.zeros((4, 4, 4), np.float32)),
                      zero_init(cfg), cfg)


# ---------------------------------------------------------------------------
# parameter / FLOP counting
# ---------------------------------------------------------------------------

def enumerate_params(weights: "ModelWeights") -> int:
    kernels = [weights.head, weights.tail]
    for bw in weights.blocks:
        kernels += [bw.mixer_proj, bw.mixer_agg, bw.plk, bw.fuse]
        if bw.ea is not None:
            kernels.append(bw.ea)
    return sum(k.weights.size + k.bias.size for k in kernels)


def test_head_conv_param_count_closed_form():
    cfg = preset_config("plksr", 2)
    head = random_init(cfg, 0).head
    assert head.weights.size + head.bias.size == 3 * 64 * 9 + 64 == 1792


@pytest.mark.parametrize("preset,scale", [("plksr", 2), ("plksr", 4),
                                          ("plksr-tiny", 2), ("plksr-tiny", 3)])
def test_count_params_matches_enumeration_presets(preset, scale):
    cfg = preset_config(preset, scale)
    assert count_params(cfg) == enumerate_params(random_init(cfg, 0))


def test_count_params_matches_enumeration_random_configs():
    rng = np.random.default_rng(16)
    for _ in range(20):
        cfg = ModelConfig(
            scale=int(rng.integers(1, 5)),
            n_blocks=int(rng.integers(1, 4)),
            width=int(rng.integers(2, 13)),
            split=1, kernel=int(rng.integers(0, 4)) * 2 + 1,
            mixer=ALL_MIXERS[int(rng.integers(0, 4))],
            use_ea=bool(rng.integers(0, 2)),
        )
        cfg = ModelConfig(**{**cfg.__dict__, "split": int(rng.integers(1, cfg.width + 1))})
        assert count_params(cfg) == enumerate_params(random_init(cfg, 1))


def test_count_params_block_additivity():
    base = dict(scale=2, width=8, split=4, kernel=5)
    one = count_params(ModelConfig(n_blocks=1, **base))
    two = count_params(ModelConfig(n_blocks=2, **base))
    three = count_params(ModelConfig(n_blocks=3, **base))
    assert three - two == two - one
    with pytest.raises(ValueError):
        ModelConfig(n_blocks=0, **base)


def test_count_flops_scales_with_area():
    cfg = preset_config("plksr-tiny", 2)
    assert count_flops(cfg, 64, 32) == 2 * count_flops(cfg, 32, 32)
    assert count_flops(cfg, 32, 64) == 2 * count_flops(cfg, 32, 32)


def test_count_flops_hand_expanded_plksr():
    # independent spreadsheet-style expansion for plksr at 640x360, x2
    cfg = preset_config("plksr", 2)
    hw = 640 * 360
    head = 2 * 64 * 3 * 9 * hw
    proj = 2 * 128 * 64 * 9 * hw
    agg = 2 * 64 * 128 * 9 * hw
    plk = 2 * 16 * 16 * 17 * 17 * hw
    ea_conv = 2 * 64 * 64 * 9 * hw
    fuse = 2 * 64 * 64 * 1 * hw
    tail = 2 * 12 * 64 * 9 * hw
    gelu_cost = 128 * hw
    sigmoid_cost = 64 * hw
    attention_mul = 64 * hw
    residual = 64 * hw
    final_add = 12 * hw
    per_block = proj + agg + plk + ea_conv + fuse + gelu_cost + sigmoid_cost \
        + attention_mul + residual
    total = head + 28 * per_block + tail + final_add
    assert count_flops(cfg, 640, 360) == total


def test_count_flops_1x1_conv_closed_form():
    # an FFN-mixer config isolates pure 1x1 convs: proj term is 2*(2c)*c*H*W
    c, h, w = 8, 10, 12
    cfg = ModelConfig(scale=1, n_blocks=1, width=c, split=c, kernel=1,
                      mixer=MixerVariant.FFN, use_ea=False)
    base = count_flops(cfg, h, w)
    cfg2 = ModelConfig(scale=1, n_blocks=2, width=c, split=c, kernel=1,
                       mixer=MixerVariant.FFN, use_ea=False)
    per_block = count_flops(cfg2, h, w) - base
    expected_block = (2 * (2 * c) * c * h * w      # proj 1x1
                      + 2 * c * (2 * c) * h * w    # agg 1x1
                      + 2 * c * c * 1 * h * w      # plk (K=1, full split)
                      + 2 * c * c * h * w          # fuse 1x1
                      + 2 * c * h * w              # GELU on 2c channels
                      + c * h * w)                 # residual add
    assert per_block == expected_block


# ---------------------------------------------------------------------------
# random init
# ---------------------------------------------------------------------------

def test_random_init_deterministic_and_seed_sensitive():
    cfg = ModelConfig(scale=2, n_blocks=2, width=6, split=3, kernel=3)
    a = random_init(cfg, seed=0)
    b = random_init(cfg, seed=0)
    c = random_init(cfg, seed=1)
    assert np.array_equal(a.head.weights, b.head.weights)
    assert np.array_equal(a.blocks[1].plk.weights, b.blocks[1].plk.weights)
    assert not np.array_equal(a.head.weights, c.head.weights)


def test_random_init_range_law():
    cfg = ModelConfig(scale=2, n_blocks=1, width=6, split=3, kernel=5)
    w = random_init(cfg, seed=0)
    checks = [
        (w.head, 3, 3), (w.blocks[0].mixer_proj, 6, 3),
        (w.blocks[0].plk, 3, 5), (w.blocks[0].fuse, 6, 1), (w.tail, 6, 3),
    ]
    for kern, in_ch, k in checks:
        s = 1.0 / np.sqrt(in_ch * k * k)
        assert np.abs(kern.weights).max() < s
        assert np.abs(kern.bias).max() < s
