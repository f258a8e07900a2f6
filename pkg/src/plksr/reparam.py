"""Structural re-parameterization: merge parallel convolution branches
(dense or dilated, square or rectangular) into one equivalent large kernel.

With zero padding of half the kernel side per branch and half the target
side for the merged kernel, center-embedding is lossless including at the
borders, so the merged convolution equals the sum of the branch
convolutions in exact arithmetic.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .nnops import ConvKernel
from .tensor import Tensor, track_array

__all__ = [
    "BranchSpec",
    "expand_dilated",
    "merge_branches",
    "dilated_conv_reference",
    "save_kernel",
    "load_kernel",
    "KernelFileError",
]


@dataclass(frozen=True)
class BranchSpec:
    """One branch: a (possibly rectangular) odd kernel plus its dilation."""

    kernel: ConvKernel
    dilation: int = 1

    def __post_init__(self):
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")

    def effective_sides(self) -> tuple[int, int]:
        kh, kw = self.kernel.weights.shape[2:]
        d = self.dilation
        return (kh - 1) * d + 1, (kw - 1) * d + 1


def expand_dilated(kernel: ConvKernel, dilation: int) -> ConvKernel:
    """Dense equivalent of a dilated kernel: original taps placed every
    `dilation` positions, zeros elsewhere, bias unchanged."""
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    if dilation == 1:
        return kernel
    w = kernel.weights
    o, i, kh, kw = w.shape
    eh, ew = (kh - 1) * dilation + 1, (kw - 1) * dilation + 1
    dense = np.zeros((o, i, eh, ew), np.float32)
    dense[:, :, ::dilation, ::dilation] = w
    return ConvKernel(dense, kernel.bias.copy())


def merge_branches(branches: list[BranchSpec], target_k: int) -> ConvKernel:
    """Sum all branches into one dense target_k x target_k kernel.

    Each branch is dilation-expanded, center-embedded into the target
    size, and summed tap-wise in float64; biases are summed. Branches are
    accumulated in a canonical content-derived order, so the result is
    bit-identical under any permutation of the branch list.
    """
    if not branches:
        raise ValueError("need at least one branch")
    if target_k < 1 or target_k % 2 == 0:
        raise ValueError("target kernel side must be odd and >= 1")
    o, i = branches[0].kernel.out_channels, branches[0].kernel.in_channels
    for br in branches:
        if (br.kernel.out_channels, br.kernel.in_channels) != (o, i):
            raise ValueError(
                f"branch channel mismatch: {br.kernel} vs first branch {o}x{i}"
            )
        eh, ew = br.effective_sides()
        if eh > target_k or ew > target_k:
            raise ValueError(
                f"branch effective size {eh}x{ew} exceeds target {target_k}"
            )

    def canonical_key(br: BranchSpec):
        kh, kw = br.kernel.weights.shape[2:]
        return (kh, kw, br.dilation,
                br.kernel.weights.tobytes(), br.kernel.bias.tobytes())

    acc_w = np.zeros((o, i, target_k, target_k), np.float64)
    acc_b = np.zeros(o, np.float64)
    for br in sorted(branches, key=canonical_key):
        dense = expand_dilated(br.kernel, br.dilation)
        eh, ew = dense.weights.shape[2:]
        dh = (target_k - eh) // 2
        dw = (target_k - ew) // 2
        acc_w[:, :, dh:dh + eh, dw:dw + ew] += dense.weights
        acc_b += dense.bias
    return ConvKernel(acc_w.astype(np.float32), acc_b.astype(np.float32))


def dilated_conv_reference(x: Tensor, kernel: ConvKernel, dilation: int) -> Tensor:
    """Direct dilated convolution (taps applied at spaced offsets, no
    expansion); padding matches the dense equivalent's effective size.

    This is the independent check the merge CLI runs against; the
    correctness tests also compare expand_dilated against it.
    """
    w = kernel.weights
    o, i, kh, kw = w.shape
    if x.channels != i:
        raise ValueError(f"input has {x.channels} channels, kernel expects {i}")
    eh, ew = (kh - 1) * dilation + 1, (kw - 1) * dilation + 1
    ph, pw = eh // 2, ew // 2
    h, wdt = x.height, x.width
    padded = track_array(
        np.zeros((i, h + 2 * ph, wdt + 2 * pw), np.float64)
    )
    padded[:, ph:ph + h, pw:pw + wdt] = x.data
    w64 = w.astype(np.float64)
    out = np.empty((o, h, wdt), np.float64)
    out[:] = kernel.bias.astype(np.float64)[:, None, None]
    for ky in range(kh):
        for kx in range(kw):
            oy, ox = ky * dilation, kx * dilation
            shifted = padded[:, oy:oy + h, ox:ox + wdt]
            out += np.einsum("oi,ihw->ohw", w64[:, :, ky, kx], shifted)
    return Tensor(out.astype(np.float32))


# ---------------------------------------------------------------------------
# Kernel container file (.plkk) for the merge CLI
# ---------------------------------------------------------------------------
#
# Little-endian: magic "PLKK" | u32 version (=1) | u32 out | u32 in
# | u32 kh | u32 kw | float32 weights (out, in, kh, kw) | float32 bias (out).

_K_MAGIC = b"PLKK"
_K_HEADER = struct.Struct("<4s5I")


class KernelFileError(Exception):
    pass


def save_kernel(kernel: ConvKernel, path: str) -> None:
    o, i, kh, kw = kernel.weights.shape
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_K_HEADER.pack(_K_MAGIC, 1, o, i, kh, kw))
        f.write(np.ascontiguousarray(kernel.weights, "<f4").tobytes())
        f.write(np.ascontiguousarray(kernel.bias, "<f4").tobytes())
    os.replace(tmp, path)


def load_kernel(path: str) -> ConvKernel:
    with open(path, "rb") as f:
        raw = f.read(_K_HEADER.size)
        if len(raw) < 4 or raw[:4] != _K_MAGIC:
            raise KernelFileError(f"{path}: not a .plkk kernel file (bad magic)")
        if len(raw) < _K_HEADER.size:
            raise KernelFileError(f"{path}: truncated header")
        _, version, o, i, kh, kw = _K_HEADER.unpack(raw)
        if version != 1:
            raise KernelFileError(f"{path}: unsupported version {version}")
        if min(o, i, kh, kw) < 1 or kh % 2 == 0 or kw % 2 == 0:
            raise KernelFileError(f"{path}: invalid kernel dims {o},{i},{kh},{kw}")
        nw = o * i * kh * kw
        buf = f.read(nw * 4)
        if len(buf) != nw * 4:
            raise KernelFileError(f"{path}: truncated weights")
        w = np.frombuffer(buf, "<f4").reshape(o, i, kh, kw).astype(np.float32)
        buf = f.read(o * 4)
        if len(buf) != o * 4:
            raise KernelFileError(f"{path}: truncated bias")
        b = np.frombuffer(buf, "<f4").astype(np.float32)
        if f.read(1):
            raise KernelFileError(f"{path}: trailing bytes")
    return ConvKernel(w, b)
