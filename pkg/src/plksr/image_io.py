"""PNG decode/encode and byte/float image conversions for the CLI.

Only 8-bit PNGs are supported; grayscale and palette images are promoted
to RGB and alpha channels are stripped on decode. Encoding quantizes with
round-half-away-from-zero, which the metric-reproduction tolerances
depend on.
"""
from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .metrics import ImageU8
from .tensor import Tensor

__all__ = ["ImageDecodeError", "decode_png", "encode_png",
           "tensor_from_image", "image_from_tensor"]


class ImageDecodeError(Exception):
    pass


def decode_png(path: str) -> ImageU8:
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise ImageDecodeError(f"{path}: cannot decode as an image: {e}") from None
    return ImageU8(arr)


def encode_png(img: ImageU8, path: str) -> None:
    """Write a PNG atomically (temp file + rename)."""
    tmp = path + ".tmp"
    try:
        Image.fromarray(img.data, mode="RGB").save(tmp, format="PNG")
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tensor_from_image(img: ImageU8) -> Tensor:
    """(H, W, 3) bytes -> (3, H, W) float32 in [0, 1]."""
    arr = img.data.astype(np.float32) / np.float32(255.0)
    return Tensor(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def image_from_tensor(t: Tensor) -> ImageU8:
    """Clamp to [0, 1] and quantize to bytes, rounding half away from zero."""
    if t.channels != 3:
        raise ValueError(f"expected 3 channels, got {t.channels}")
    clamped = np.clip(t.data, 0.0, 1.0).astype(np.float64)
    # values are non-negative, so floor(x + 0.5) is half-away-from-zero
    q = np.floor(clamped * 255.0 + 0.5).astype(np.uint8)
    return ImageU8(np.ascontiguousarray(q.transpose(1, 2, 0)))
