"""Dense rank-3 feature-map tensor and the allocation-accounting arena.

Feature maps are stored channel-major: element (c, y, x) of a C×H×W tensor
lives at flat index ``c*H*W + y*W + x``. All values are 32-bit floats.

Every tensor (and every large scratch buffer the conv kernels create, see
:func:`track_array`) is charged against a process-global byte counter whose
high-water mark serves as the engine's memory-occupancy proxy.
"""
from __future__ import annotations

import sys
import threading
import weakref
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "AllocStats",
    "zeros",
    "from_array",
    "elementwise_add",
    "hadamard_mul",
    "slice_channels",
    "concat_channels",
    "alloc_stats",
    "live_memory",
    "peak_memory",
    "reset_peak",
    "track_array",
]


# ---------------------------------------------------------------------------
# Allocation arena
# ---------------------------------------------------------------------------

@dataclass
class AllocStats:
    """Snapshot of the arena: currently live bytes and the high-water mark."""

    live_bytes: int
    peak_bytes: int


_lock = threading.Lock()
_live = 0
_peak = 0


def _charge(nbytes: int) -> None:
    global _live, _peak
    with _lock:
        _live += nbytes
        if _live > _peak:
            _peak = _live


def _release(nbytes: int) -> None:
    global _live
    with _lock:
        _live -= nbytes


def track_array(arr: np.ndarray) -> np.ndarray:
    """Charge `arr` against the arena until it is garbage collected.

    Used by Tensor construction and by conv kernels for their scratch
    buffers, so peak_bytes reflects working-set size, not just tensors.
    """
    nbytes = int(arr.nbytes)
    _charge(nbytes)
    weakref.finalize(arr, _release, nbytes)
    return arr


def alloc_stats() -> AllocStats:
    with _lock:
        return AllocStats(live_bytes=_live, peak_bytes=_peak)


def live_memory() -> int:
    with _lock:
        return _live


def peak_memory() -> int:
    """High-water mark of tracked bytes since the last reset_peak()."""
    with _lock:
        return _peak


def reset_peak() -> None:
    """Drop the high-water mark to the currently live byte count."""
    global _peak
    with _lock:
        _peak = _live


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tensor:
    """Dense C×H×W float32 tensor, immutable after construction.

    `data` is a C-contiguous (channels, height, width) array, which is
    exactly the channel-major flat layout documented above.
    """

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = self.data
        if not isinstance(d, np.ndarray) or d.ndim != 3:
            raise ValueError("tensor data must be a rank-3 ndarray")
        if d.dtype != np.float32 or not d.flags["C_CONTIGUOUS"]:
            raise ValueError("tensor data must be C-contiguous float32")
        if min(d.shape) < 1:
            raise ValueError(f"tensor dims must be >= 1, got {d.shape}")
        track_array(d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def flat(self) -> np.ndarray:
        """Flat channel-major view of the data."""
        return self.data.reshape(-1)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def zeros(channels: int, height: int, width: int) -> Tensor:
    """All-zero tensor of the given shape."""
    if min(channels, height, width) < 1:
        raise ValueError("all dims must be >= 1")
    nelem = channels * height * width
    if nelem * 4 > sys.maxsize:
        raise ValueError("tensor size overflows addressable memory")
    return Tensor(np.zeros((channels, height, width), np.float32))


def from_array(values, shape: tuple[int, int, int] | None = None) -> Tensor:
    """Tensor from any array-like; copies and casts to float32.

    If `values` is flat, `shape` gives the (channels, height, width) to
    reshape it to, interpreting the flat order as channel-major.
    """
    arr = np.array(values, dtype=np.float32, order="C")
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim != 3:
        raise ValueError("expected rank-3 data (or flat data plus shape)")
    return Tensor(arr)


def _check_same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b)
    return Tensor(a.data + b.data)


def hadamard_mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b)
    return Tensor(a.data * b.data)


def slice_channels(t: Tensor, start: int, stop: int) -> Tensor:
    """Copy of channels [start, stop); spatial dims unchanged."""
    if not (0 <= start < stop <= t.channels):
        raise ValueError(
            f"channel slice [{start}, {stop}) out of range for {t.channels} channels"
        )
    return Tensor(np.ascontiguousarray(t.data[start:stop]))


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Stack tensors along the channel axis, in list order."""
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    hw = parts[0].data.shape[1:]
    for p in parts[1:]:
        if p.data.shape[1:] != hw:
            raise ValueError(
                f"spatial mismatch in concat: {p.data.shape[1:]} vs {hw}"
            )
    return Tensor(np.concatenate([p.data for p in parts], axis=0))
