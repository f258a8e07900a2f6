"""PLKSR architecture: channel mixers, partial large-kernel convolution,
element-wise attention, block/model forward passes, named presets,
parameter/FLOP counting, and the ``.plkw`` weight-file format.

The network maps a (3, H, W) image in [0, 1] to a (3, H*r, W*r) image:
a learnable path (3x3 head conv, N PLK blocks, 3x3 tail conv producing
3*r^2 channels) is added to a residual path that repeats each input
channel r^2 times, and the sum is pixel-shuffled up by r. With all-zero
weights the learnable path vanishes and the output is exactly the
nearest-neighbor upscale of the input.
"""
from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass

import numpy as np

from .nnops import (
    ConvKernel,
    conv2d_fast,
    gelu,
    pixel_shuffle,
    repeat_channels,
    sigmoid,
)
from .tensor import Tensor, concat_channels, slice_channels

__all__ = [
    "MixerVariant",
    "ModelConfig",
    "BlockWeights",
    "ModelWeights",
    "PRESETS",
    "preset_config",
    "mixer_forward",
    "plkc_forward",
    "ea_forward",
    "block_forward",
    "model_forward",
    "count_params",
    "count_flops",
    "flop_formula",
    "random_init",
    "save_weights",
    "load_weights",
    "WeightFileError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedFileError",
    "ShapeError",
]


class MixerVariant(enum.Enum):
    """Channel-mixer family: which of proj/agg are 3x3 convs vs 1x1."""

    FFN = 0
    CCM = 1
    ICCM = 2
    DCCM = 3


# (proj kernel side, agg kernel side) per variant
_MIXER_SIDES = {
    MixerVariant.FFN: (1, 1),
    MixerVariant.CCM: (3, 1),
    MixerVariant.ICCM: (1, 3),
    MixerVariant.DCCM: (3, 3),
}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    scale: upscale factor r; n_blocks: PLK block count N; width: feature
    channels c; split: channels the large kernel processes C; kernel: large
    kernel side K; mixer: channel-mixer variant; use_ea: element-wise
    attention on/off.
    """

    scale: int
    n_blocks: int
    width: int
    split: int
    kernel: int
    mixer: MixerVariant = MixerVariant.DCCM
    use_ea: bool = True

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if not (1 <= self.split <= self.width):
            raise ValueError("split must satisfy 1 <= split <= width")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be odd and >= 1")

    def mixer_sides(self) -> tuple[int, int]:
        return _MIXER_SIDES[self.mixer]


PRESETS = {
    "plksr": dict(n_blocks=28, width=64, split=16, kernel=17,
                  mixer=MixerVariant.DCCM, use_ea=True),
    "plksr-tiny": dict(n_blocks=12, width=64, split=16, kernel=13,
                       mixer=MixerVariant.DCCM, use_ea=False),
}


def preset_config(name: str, scale: int) -> ModelConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(scale=scale, **PRESETS[name])


@dataclass(frozen=True)
class BlockWeights:
    """Weights of one PLK block."""

    mixer_proj: ConvKernel  # c -> 2c
    mixer_agg: ConvKernel   # 2c -> c
    plk: ConvKernel         # C -> C, K x K
    ea: ConvKernel | None   # c -> c, 3x3 (present iff use_ea)
    fuse: ConvKernel        # c -> c, 1x1


@dataclass(frozen=True)
class ModelWeights:
    head: ConvKernel              # 3 -> c, 3x3
    blocks: tuple[BlockWeights, ...]
    tail: ConvKernel              # c -> 3*r^2, 3x3


def _check_weights(weights: ModelWeights, cfg: ModelConfig) -> None:
    c, cc = cfg.width, 2 * cfg.width
    kp, ka = cfg.mixer_sides()
    expect = [("head", weights.head, (c, 3, 3, 3))]
    if len(weights.blocks) != cfg.n_blocks:
        raise ShapeError(
            f"expected {cfg.n_blocks} blocks, got {len(weights.blocks)}"
        )
    for i, bw in enumerate(weights.blocks):
        expect += [
            (f"block{i}.mixer_proj", bw.mixer_proj, (cc, c, kp, kp)),
            (f"block{i}.mixer_agg", bw.mixer_agg, (c, cc, ka, ka)),
            (f"block{i}.plk", bw.plk, (cfg.split, cfg.split, cfg.kernel, cfg.kernel)),
        ]
        if cfg.use_ea:
            if bw.ea is None:
                raise ShapeError(f"block{i}.ea missing but config enables EA")
            expect.append((f"block{i}.ea", bw.ea, (c, c, 3, 3)))
        expect.append((f"block{i}.fuse", bw.fuse, (c, c, 1, 1)))
    expect.append(("tail", weights.tail, (3 * cfg.scale ** 2, c, 3, 3)))
    for name, kern, shape in expect:
        if kern.weights.shape != shape:
            raise ShapeError(
                f"{name}: expected weight shape {shape}, got {kern.weights.shape}"
            )


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def mixer_forward(x: Tensor, variant: MixerVariant,
                  proj: ConvKernel, agg: ConvKernel) -> Tensor:
    """agg(GELU(proj(x))): expand channels c -> 2c, squash back to c."""
    kp, ka = _MIXER_SIDES[variant]
    if proj.k != kp or agg.k != ka:
        raise ValueError(
            f"{variant.name} mixer expects proj {kp}x{kp} and agg {ka}x{ka}, "
            f"got {proj.k}x{proj.k} and {agg.k}x{agg.k}"
        )
    if proj.in_channels != x.channels or proj.out_channels != 2 * x.channels:
        raise ValueError("mixer proj must map c -> 2c for the input width")
    if agg.in_channels != 2 * x.channels or agg.out_channels != x.channels:
        raise ValueError("mixer agg must map 2c -> c for the input width")
    return conv2d_fast(gelu(conv2d_fast(x, proj)), agg)


def plkc_forward(x: Tensor, plk: ConvKernel, split: int) -> Tensor:
    """Partial large-kernel conv: filter the first `split` channels, pass
    the rest through untouched."""
    if split > x.channels:
        raise ValueError(f"split {split} exceeds {x.channels} channels")
    if plk.in_channels != split or plk.out_channels != split:
        raise ValueError("plk kernel must map split -> split channels")
    f_conv = slice_channels(x, 0, split)
    f_global = conv2d_fast(f_conv, plk)
    if split == x.channels:
        return f_global
    f_id = slice_channels(x, split, x.channels)
    return concat_channels([f_global, f_id])


def ea_forward(x: Tensor, ea: ConvKernel) -> Tensor:
    """Element-wise attention: x * sigmoid(conv3x3(x)). Shape preserved;
    every output magnitude is bounded by the input's."""
    if ea.in_channels != x.channels or ea.out_channels != x.channels:
        raise ValueError("ea kernel must map c -> c")
    gate = sigmoid(conv2d_fast(x, ea))
    return Tensor(x.data * gate.data)


def block_forward(x: Tensor, bw: BlockWeights, cfg: ModelConfig) -> Tensor:
    """x + fuse(EA?(PLKC(Mixer(x))))."""
    y = mixer_forward(x, cfg.mixer, bw.mixer_proj, bw.mixer_agg)
    y = plkc_forward(y, bw.plk, cfg.split)
    if cfg.use_ea:
        y = ea_forward(y, bw.ea)
    y = conv2d_fast(y, bw.fuse)
    return Tensor(x.data + y.data)


def model_forward(img: Tensor, weights: ModelWeights, cfg: ModelConfig) -> Tensor:
    """Full forward pass: (3, H, W) in [0, 1] -> un-clamped (3, H*r, W*r)."""
    if img.channels != 3:
        raise ValueError(f"expected a 3-channel input, got {img.channels}")
    _check_weights(weights, cfg)
    r = cfg.scale
    f = conv2d_fast(img, weights.head)
    for bw in weights.blocks:
        f = block_forward(f, bw, cfg)
    f_h = conv2d_fast(f, weights.tail)
    f_l = repeat_channels(img, r * r)
    return pixel_shuffle(Tensor(f_h.data + f_l.data), r)


# ---------------------------------------------------------------------------
# Parameter and FLOP counting
# ---------------------------------------------------------------------------

def _layer_shapes(cfg: ModelConfig) -> list[tuple[str, int, int, int]]:
    """Canonical layer order as (name, out_ch, in_ch, k) tuples."""
    c, cc = cfg.width, 2 * cfg.width
    kp, ka = cfg.mixer_sides()
    layers = [("head", c, 3, 3)]
    for i in range(cfg.n_blocks):
        layers.append((f"block{i}.mixer_proj", cc, c, kp))
        layers.append((f"block{i}.mixer_agg", c, cc, ka))
        layers.append((f"block{i}.plk", cfg.split, cfg.split, cfg.kernel))
        if cfg.use_ea:
            layers.append((f"block{i}.ea", c, c, 3))
        layers.append((f"block{i}.fuse", c, c, 1))
    layers.append(("tail", 3 * cfg.scale ** 2, c, 3))
    return layers


def count_params(cfg: ModelConfig) -> int:
    """Total weight + bias element count across all convolutions."""
    return sum(o * i * k * k + o for _, o, i, k in _layer_shapes(cfg))


def count_flops(cfg: ModelConfig, height: int, width: int) -> int:
    """FLOPs of one forward pass on an (3, height, width) input.

    Convolutions cost 2*out*in*k^2 per pixel (multiply-add = 2); each
    elementwise op (GELU, sigmoid, attention product, residual adds)
    costs one FLOP per element. See :func:`flop_formula`.
    """
    hw = height * width
    total = sum(2 * o * i * k * k * hw for _, o, i, k in _layer_shapes(cfg))
    c = cfg.width
    per_block = 2 * c          # GELU on the expanded 2c-channel map
    if cfg.use_ea:
        per_block += 2 * c     # sigmoid + attention product on c channels
    per_block += c             # residual add
    total += cfg.n_blocks * per_block * hw
    total += 3 * cfg.scale ** 2 * hw  # learnable + repeat path add
    return total


def flop_formula() -> str:
    """Human-readable statement of what count_flops counts."""
    return (
        "convs: 2*out*in*k^2*H*W each (multiply-add = 2 FLOPs); "
        "elementwise: H*W*channels each for GELU (2c), sigmoid (c) and "
        "attention product (c) when EA is on, residual add (c) per block, "
        "plus the 3*r^2-channel path merge; pixel shuffle and channel "
        "repeat are data movement (0 FLOPs)."
    )


# ---------------------------------------------------------------------------
# Deterministic initialization
# ---------------------------------------------------------------------------

def random_init(cfg: ModelConfig, seed: int = 0) -> ModelWeights:
    """Weights from uniform(-s, s), s = 1/sqrt(in*k^2) per kernel, drawn
    from a seeded PCG64 generator in canonical layer order."""
    rng = np.random.default_rng(seed)

    def kern(out_ch, in_ch, k):
        s = 1.0 / np.sqrt(in_ch * k * k)
        w = rng.uniform(-s, s, (out_ch, in_ch, k, k)).astype(np.float32)
        b = rng.uniform(-s, s, out_ch).astype(np.float32)
        return ConvKernel(w, b)

    layers = {name: kern(o, i, k) for name, o, i, k in _layer_shapes(cfg)}
    blocks = tuple(
        BlockWeights(
            mixer_proj=layers[f"block{i}.mixer_proj"],
            mixer_agg=layers[f"block{i}.mixer_agg"],
            plk=layers[f"block{i}.plk"],
            ea=layers.get(f"block{i}.ea"),
            fuse=layers[f"block{i}.fuse"],
        )
        for i in range(cfg.n_blocks)
    )
    return ModelWeights(head=layers["head"], blocks=blocks, tail=layers["tail"])


def zero_init(cfg: ModelConfig) -> ModelWeights:
    """All-zero weights; model_forward degenerates to nearest upscaling."""

    def kern(out_ch, in_ch, k):
        return ConvKernel(
            np.zeros((out_ch, in_ch, k, k), np.float32),
            np.zeros(out_ch, np.float32),
        )

    layers = {name: kern(o, i, k) for name, o, i, k in _layer_shapes(cfg)}
    blocks = tuple(
        BlockWeights(
            mixer_proj=layers[f"block{i}.mixer_proj"],
            mixer_agg=layers[f"block{i}.mixer_agg"],
            plk=layers[f"block{i}.plk"],
            ea=layers.get(f"block{i}.ea"),
            fuse=layers[f"block{i}.fuse"],
        )
        for i in range(cfg.n_blocks)
    )
    return ModelWeights(head=layers["head"], blocks=blocks, tail=layers["tail"])


# ---------------------------------------------------------------------------
# Weight file format (.plkw)
# ---------------------------------------------------------------------------
#
# Little-endian throughout:
#   magic "PLKW" | u32 version (=1) | u32 scale | u32 n_blocks | u32 width
#   | u32 split | u32 kernel | u32 mixer (0=FFN,1=CCM,2=ICCM,3=DCCM)
#   | u32 flags (bit 0: EA tensors present)
# followed by raw float32 tensors, weights then bias per kernel, in order:
# head, then per block (mixer_proj, mixer_agg, plk, ea?, fuse), then tail.
# No padding or alignment gaps.

MAGIC = b"PLKW"
_HEADER = struct.Struct("<4s8I")
FLAG_EA = 1


class WeightFileError(Exception):
    """Base class for .plkw validation failures."""


class BadMagicError(WeightFileError):
    pass


class UnsupportedVersionError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ShapeError(WeightFileError):
    pass


def _ordered_kernels(weights: ModelWeights, cfg: ModelConfig):
    yield "head", weights.head
    for i, bw in enumerate(weights.blocks):
        yield f"block{i}.mixer_proj", bw.mixer_proj
        yield f"block{i}.mixer_agg", bw.mixer_agg
        yield f"block{i}.plk", bw.plk
        if cfg.use_ea:
            yield f"block{i}.ea", bw.ea
        yield f"block{i}.fuse", bw.fuse
    yield "tail", weights.tail


def save_weights(weights: ModelWeights, cfg: ModelConfig, path: str) -> None:
    """Write weights to `path`; atomic (temp file + rename)."""
    _check_weights(weights, cfg)
    header = _HEADER.pack(
        MAGIC, 1, cfg.scale, cfg.n_blocks, cfg.width, cfg.split,
        cfg.kernel, cfg.mixer.value, FLAG_EA if cfg.use_ea else 0,
    )
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(header)
        for _, kern in _ordered_kernels(weights, cfg):
            f.write(np.ascontiguousarray(kern.weights, "<f4").tobytes())
            f.write(np.ascontiguousarray(kern.bias, "<f4").tobytes())
    os.replace(tmp, path)


def load_weights(path: str) -> tuple[ModelWeights, ModelConfig]:
    """Read and validate a .plkw file; raises a specific WeightFileError
    subclass for each malformed-file class."""
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) < 4 or raw[:4] != MAGIC:
            raise BadMagicError(f"{path}: not a .plkw file (bad magic)")
        if len(raw) < _HEADER.size:
            raise TruncatedFileError(f"{path}: truncated header")
        _, version, scale, n_blocks, width, split, kernel, mixer, flags = \
            _HEADER.unpack(raw)
        if version != 1:
            raise UnsupportedVersionError(
                f"{path}: unsupported version {version} (expected 1)"
            )
        try:
            cfg = ModelConfig(
                scale=scale, n_blocks=n_blocks, width=width, split=split,
                kernel=kernel, mixer=MixerVariant(mixer),
                use_ea=bool(flags & FLAG_EA),
            )
        except ValueError as e:
            raise ShapeError(f"{path}: inconsistent header: {e}") from None

        def read_kernel(name, out_ch, in_ch, k):
            nw = out_ch * in_ch * k * k
            buf = f.read(nw * 4)
            if len(buf) != nw * 4:
                raise TruncatedFileError(
                    f"{path}: truncated while reading weights of {name}"
                )
            w = np.frombuffer(buf, "<f4").reshape(out_ch, in_ch, k, k)
            buf = f.read(out_ch * 4)
            if len(buf) != out_ch * 4:
                raise TruncatedFileError(
                    f"{path}: truncated while reading bias of {name}"
                )
            b = np.frombuffer(buf, "<f4")
            return ConvKernel(w.astype(np.float32), b.astype(np.float32))

        kernels = {
            name: read_kernel(name, o, i, k)
            for name, o, i, k in _layer_shapes(cfg)
        }
        if f.read(1):
            raise ShapeError(f"{path}: trailing bytes after last tensor")

    blocks = tuple(
        BlockWeights(
            mixer_proj=kernels[f"block{i}.mixer_proj"],
            mixer_agg=kernels[f"block{i}.mixer_agg"],
            plk=kernels[f"block{i}.plk"],
            ea=kernels.get(f"block{i}.ea"),
            fuse=kernels[f"block{i}.fuse"],
        )
        for i in range(cfg.n_blocks)
    )
    weights = ModelWeights(head=kernels["head"], blocks=blocks,
                           tail=kernels["tail"])
    _check_weights(weights, cfg)
    return weights, cfg
