"""Neural-net primitives: convolutions, activations, pixel shuffle, upscaling.

All convolutions are stride 1 with zero padding of ``k // 2`` on every side,
so spatial dims are preserved. ``conv2d_naive`` is the brute-force reference
(definition sum per output element, float64 accumulation); ``conv2d_fast``
is the im2col + GEMM implementation the benchmarks time, equivalent to the
reference within 1e-4 max-abs-diff.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .tensor import Tensor, track_array

__all__ = [
    "ConvKernel",
    "conv2d_naive",
    "conv2d_fast",
    "depthwise_conv2d",
    "gelu",
    "sigmoid",
    "pixel_shuffle",
    "pixel_unshuffle",
    "repeat_channels",
    "nearest_upscale",
]

# Output rows processed per im2col block; fixed so the patch-matrix size
# scales with in_channels * k^2 (the memory-occupancy comparison relies on
# that) instead of adapting to it.
_ROW_BLOCK = 8


@dataclass(frozen=True)
class ConvKernel:
    """Convolution weights: (out, in, kh, kw) float32 plus per-output bias.

    Square odd kernels everywhere except inside the re-parameterization
    merge, which temporarily works with rectangular odd shapes.
    """

    weights: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)

    def __post_init__(self):
        w, b = self.weights, self.bias
        if w.ndim != 4:
            raise ValueError("kernel weights must be rank 4 (out, in, kh, kw)")
        if w.dtype != np.float32 or b.dtype != np.float32:
            raise ValueError("kernel weights and bias must be float32")
        kh, kw = w.shape[2], w.shape[3]
        if kh % 2 == 0 or kw % 2 == 0 or kh < 1 or kw < 1:
            raise ValueError(f"kernel sides must be odd and >= 1, got {kh}x{kw}")
        if b.shape != (w.shape[0],):
            raise ValueError("bias length must equal out_channels")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        kh, kw = self.weights.shape[2:]
        if kh != kw:
            raise ValueError("kernel is not square")
        return kh

    def __repr__(self):
        o, i, kh, kw = self.weights.shape
        return f"ConvKernel({i}->{o}, {kh}x{kw})"


def make_kernel(weights, bias=None) -> ConvKernel:
    """ConvKernel from array-likes; copies and casts to float32."""
    w = np.array(weights, dtype=np.float32)
    if bias is None:
        bias = np.zeros(w.shape[0], np.float32)
    b = np.array(bias, dtype=np.float32)
    return ConvKernel(w, b)


def _pad_input(data: np.ndarray, ph: int, pw: int, dtype) -> np.ndarray:
    c, h, w = data.shape
    padded = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype)
    padded[:, ph:ph + h, pw:pw + w] = data
    return padded


def conv2d_naive(x: Tensor, kernel: ConvKernel) -> Tensor:
    """Brute-force reference convolution.

    Evaluates the definition directly for every output element: the kernel
    is multiplied against the zero-padded input patch and summed, with no
    patch-matrix or other rearrangement. Accumulates in float64 so this is
    the ground truth the fast path is checked against.
    """
    if x.channels != kernel.in_channels:
        raise ValueError(
            f"input has {x.channels} channels, kernel expects {kernel.in_channels}"
        )
    w = kernel.weights.astype(np.float64)
    bias = kernel.bias.astype(np.float64)
    out_ch, _, kh, kw = w.shape
    h, wdt = x.height, x.width
    padded = _pad_input(x.data, kh // 2, kw // 2, np.float64)
    out = np.empty((out_ch, h, wdt), np.float64)
    for o in range(out_ch):
        for y in range(h):
            for xx in range(wdt):
                out[o, y, xx] = bias[o] + np.sum(
                    w[o] * padded[:, y:y + kh, xx:xx + kw]
                )
    return Tensor(out.astype(np.float32))


def conv2d_fast(x: Tensor, kernel: ConvKernel) -> Tensor:
    """im2col + GEMM convolution; the implementation the benchmarks time.

    The input is unfolded block-of-rows at a time into a patch matrix of
    shape (in*k*k, rows*W) and multiplied by the (out, in*k*k) weight
    matrix, keeping the scratch buffer proportional to in_channels * k^2.
    """
    if x.channels != kernel.in_channels:
        raise ValueError(
            f"input has {x.channels} channels, kernel expects {kernel.in_channels}"
        )
    w = kernel.weights
    out_ch, in_ch, kh, kw = w.shape
    h, wdt = x.height, x.width
    if kh == 1 and kw == 1:
        # degenerate im2col: the patch matrix is the input itself
        gem = w.reshape(out_ch, in_ch) @ x.data.reshape(in_ch, h * wdt)
        out = gem.reshape(out_ch, h, wdt) + kernel.bias[:, None, None]
        return Tensor(np.ascontiguousarray(out))

    padded = track_array(_pad_input(x.data, kh // 2, kw // 2, np.float32))
    wmat = w.reshape(out_ch, in_ch * kh * kw)
    out = np.empty((out_ch, h, wdt), np.float32)
    rb = min(_ROW_BLOCK, h)
    patch = track_array(np.empty((in_ch, kh, kw, rb, wdt), np.float32))
    for y0 in range(0, h, rb):
        rows = min(rb, h - y0)
        p = patch[:, :, :, :rows, :]
        for ky in range(kh):
            for kx in range(kw):
                p[:, ky, kx] = padded[:, y0 + ky:y0 + ky + rows, kx:kx + wdt]
        gem = wmat @ p.reshape(in_ch * kh * kw, rows * wdt)
        out[:, y0:y0 + rows, :] = gem.reshape(out_ch, rows, wdt)
    out += kernel.bias[:, None, None]
    return Tensor(out)


def depthwise_conv2d(x: Tensor, kernel: ConvKernel) -> Tensor:
    """Per-channel convolution: channel c filtered by kernel slice (c, 0)."""
    if kernel.in_channels != 1:
        raise ValueError("depthwise kernel must have in_channels == 1")
    if kernel.out_channels != x.channels:
        raise ValueError(
            f"depthwise kernel has {kernel.out_channels} filters, "
            f"input has {x.channels} channels"
        )
    w = kernel.weights
    k = kernel.k
    h, wdt = x.height, x.width
    padded = track_array(_pad_input(x.data, k // 2, k // 2, np.float32))
    out = np.empty((x.channels, h, wdt), np.float32)
    out[:] = kernel.bias[:, None, None]
    for ky in range(k):
        for kx in range(k):
            out += w[:, 0, ky, kx][:, None, None] * padded[:, ky:ky + h, kx:kx + wdt]
    return Tensor(out)


def gelu(t: Tensor) -> Tensor:
    """x * Phi(x) with the exact erf-based normal CDF."""
    x = t.data
    return Tensor(np.asarray(x * 0.5 * (1.0 + erf(x / math.sqrt(2.0))), np.float32))


def sigmoid(t: Tensor) -> Tensor:
    """1 / (1 + exp(-x)), computed in a branch-stable form."""
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor(out)


def pixel_shuffle(t: Tensor, r: int) -> Tensor:
    """Move r*r channel groups into r x r spatial sub-pixels.

    out[c, y*r + dy, x*r + dx] = in[c*r*r + dy*r + dx, y, x]
    """
    if r < 1:
        raise ValueError("upscale factor must be >= 1")
    c, h, w = t.shape
    if c % (r * r) != 0:
        raise ValueError(f"channels ({c}) not divisible by r^2 ({r * r})")
    if r == 1:
        return Tensor(t.data.copy())
    co = c // (r * r)
    out = (
        t.data.reshape(co, r, r, h, w)
        .transpose(0, 3, 1, 4, 2)
        .reshape(co, h * r, w * r)
    )
    return Tensor(np.ascontiguousarray(out))


def pixel_unshuffle(t: Tensor, r: int) -> Tensor:
    """Index inverse of :func:`pixel_shuffle`."""
    if r < 1:
        raise ValueError("downscale factor must be >= 1")
    c, h, w = t.shape
    if h % r != 0 or w % r != 0:
        raise ValueError(f"spatial dims ({h}x{w}) not divisible by r ({r})")
    if r == 1:
        return Tensor(t.data.copy())
    out = (
        t.data.reshape(c, h // r, r, w // r, r)
        .transpose(0, 2, 4, 1, 3)
        .reshape(c * r * r, h // r, w // r)
    )
    return Tensor(np.ascontiguousarray(out))


def repeat_channels(t: Tensor, times: int) -> Tensor:
    """Duplicate each channel into `times` consecutive output slots.

    (R,G,B) repeated 4 times gives [R,R,R,R,G,G,G,G,B,B,B,B]; this
    interleaved order is what makes pixel_shuffle(repeat(x, r*r), r)
    reproduce nearest-neighbor upscaling exactly.
    """
    if times < 1:
        raise ValueError("repeat count must be >= 1")
    if times == 1:
        return Tensor(t.data.copy())
    return Tensor(np.repeat(t.data, times, axis=0))


def nearest_upscale(t: Tensor, r: int) -> Tensor:
    """Nearest-neighbor upscale: out[c, y, x] = in[c, y // r, x // r]."""
    if r < 1:
        raise ValueError("upscale factor must be >= 1")
    if r == 1:
        return Tensor(t.data.copy())
    return Tensor(np.repeat(np.repeat(t.data, r, axis=1), r, axis=2))
