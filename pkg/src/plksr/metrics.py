"""Y-channel image-quality metrics: PSNR and SSIM with border cropping.

Protocol: convert RGB to the BT.601 studio-swing luma channel
(65.481 R' + 128.553 G' + 24.966 B' + 16, primes meaning bytes / 255),
crop a border equal to the upscale factor from every side, then compute
PSNR with peak 255 and SSIM with the standard 11x11 Gaussian window
(sigma 1.5, K1 = 0.01, K2 = 0.03, L = 255, valid-region windows).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["ImageU8", "rgb_to_y", "crop_border", "psnr", "ssim"]

Y_COEFFS = (65.481, 128.553, 24.966)
Y_OFFSET = 16.0


@dataclass(frozen=True)
class ImageU8:
    """8-bit interleaved RGB raster: data has shape (height, width, 3)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3 or d.dtype != np.uint8:
            raise ValueError("image data must be (H, W, 3) uint8")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("image dims must be >= 1")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def __repr__(self):
        return f"ImageU8({self.height}x{self.width})"


def rgb_to_y(img: ImageU8) -> Tensor:
    """BT.601 studio-swing luma on the 0-255 scale; range [16, 235]."""
    rgb = img.data.astype(np.float64) / 255.0
    y = (Y_COEFFS[0] * rgb[:, :, 0] + Y_COEFFS[1] * rgb[:, :, 1]
         + Y_COEFFS[2] * rgb[:, :, 2] + Y_OFFSET)
    return Tensor(y[None, :, :].astype(np.float32))


def crop_border(t: Tensor, pixels: int) -> Tensor:
    """Remove `pixels` rows/columns from every side."""
    if pixels < 0:
        raise ValueError("crop must be >= 0")
    if pixels == 0:
        return Tensor(t.data.copy())
    if 2 * pixels >= min(t.height, t.width):
        raise ValueError(
            f"crop of {pixels} px per side exceeds image {t.height}x{t.width}"
        )
    return Tensor(
        np.ascontiguousarray(t.data[:, pixels:-pixels, pixels:-pixels])
    )


def psnr(a: Tensor, b: Tensor) -> float:
    """10 * log10(255^2 / MSE) over values on the 0-255 scale.

    Identical inputs have zero MSE and return positive infinity.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _window_filter(plane: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Valid-region correlation of a 2D plane with the window."""
    k = win.shape[0]
    patches = np.lib.stride_tricks.sliding_window_view(plane, (k, k))
    return np.tensordot(patches, win, axes=([2, 3], [0, 1]))


def ssim(a: Tensor, b: Tensor) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows.

    Y planes on the 0-255 scale; single-channel or per-channel averaged.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    win = _gaussian_window()
    k = win.shape[0]
    if min(a.height, a.width) < k:
        raise ValueError(
            f"image {a.height}x{a.width} smaller than the {k}x{k} SSIM window"
        )
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    scores = []
    for ch in range(a.channels):
        x = a.data[ch].astype(np.float64)
        y = b.data[ch].astype(np.float64)
        mu_x = _window_filter(x, win)
        mu_y = _window_filter(y, win)
        mu_xx = mu_x * mu_x
        mu_yy = mu_y * mu_y
        mu_xy = mu_x * mu_y
        sig_xx = _window_filter(x * x, win) - mu_xx
        sig_yy = _window_filter(y * y, win) - mu_yy
        sig_xy = _window_filter(x * y, win) - mu_xy
        num = (2.0 * mu_xy + c1) * (2.0 * sig_xy + c2)
        den = (mu_xx + mu_yy + c1) * (sig_xx + sig_yy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))
