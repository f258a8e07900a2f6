"""Micro-benchmark harness for convolution strategies and model forwards.

Measurements are medians of >= 5 timed iterations after >= 1 warmups (the
headline comparisons use 9 and 3), taken with the monotonic wall clock.
Every cell first does a cold reference run whose output checksum each timed
iteration must reproduce, which both guards against dead-code elimination
and proves timing never changes results. Peak arena bytes are reset per
cell. Cells run strictly sequentially.

Absolute times are machine-specific; only orderings and ratios with
generous margins are ever asserted, and those in the test suite only.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .model import ModelConfig, count_flops, count_params, model_forward, random_init
from .nnops import ConvKernel, conv2d_fast, depthwise_conv2d, gelu
from .reparam import BranchSpec, merge_branches
from .tensor import Tensor, concat_channels, slice_channels

__all__ = [
    "BenchSpec",
    "BenchRecord",
    "CSV_HEADER",
    "run_cell",
    "run_conv_sweep",
    "run_stack_vs_single",
    "run_model_bench",
    "StackVsSingle",
    "write_csv",
    "SWEEP_OPS",
]

CSV_HEADER = ("op,c,h,w,split,kernel,iters,median_ms,min_ms,max_ms,"
              "peak_bytes,checksum")

SWEEP_OPS = ("partial", "full", "dwc", "merged")

# Default feature-map size for conv sweeps: the HD-restoration working set
# (a 640x360 map is the x2 source for a 1280x720 output).
DEFAULT_SHAPE = (64, 640, 360)


@dataclass(frozen=True)
class BenchSpec:
    """One benchmark cell: what to run, on what shape, how many times."""

    op: str
    channels: int
    height: int
    width: int
    split: int
    kernel: int
    warmup: int = 3
    iters: int = 9
    seed: int = 0

    def __post_init__(self):
        if self.iters < 5:
            raise ValueError("timed iterations must be >= 5")
        if self.warmup < 1:
            raise ValueError("warmup iterations must be >= 1")


@dataclass(frozen=True)
class BenchRecord:
    spec: BenchSpec
    median_ms: float
    min_ms: float
    max_ms: float
    peak_bytes: int
    checksum: float
    meta: dict = field(default_factory=dict)

    def csv_row(self) -> str:
        s = self.spec
        return (f"{s.op},{s.channels},{s.height},{s.width},{s.split},"
                f"{s.kernel},{s.iters},{self.median_ms:.3f},{self.min_ms:.3f},"
                f"{self.max_ms:.3f},{self.peak_bytes},{self.checksum:.9g}")


def _checksum(t: Tensor) -> float:
    """Sum of all output elements in 64-bit accumulation."""
    return float(np.sum(t.data, dtype=np.float64))


def _random_tensor(rng: np.random.Generator, c: int, h: int, w: int) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, (c, h, w)).astype(np.float32))


def _random_kernel(rng: np.random.Generator, o: int, i: int, k: int) -> ConvKernel:
    s = 1.0 / np.sqrt(i * k * k)
    return ConvKernel(
        rng.uniform(-s, s, (o, i, k, k)).astype(np.float32),
        rng.uniform(-s, s, o).astype(np.float32),
    )


def _partial_conv(x: Tensor, kernel: ConvKernel, split: int) -> Tensor:
    f_conv = slice_channels(x, 0, split)
    f_global = conv2d_fast(f_conv, kernel)
    if split == x.channels:
        return f_global
    return concat_channels([f_global, slice_channels(x, split, x.channels)])


def _stacked_partial(x: Tensor, kernels: list[ConvKernel], split: int,
                     use_gelu: bool) -> Tensor:
    # GELU, when enabled, is applied to the convolved slice after each conv
    for kern in kernels:
        f = conv2d_fast(slice_channels(x, 0, split), kern)
        if use_gelu:
            f = gelu(f)
        if split == x.channels:
            x = f
        else:
            x = concat_channels([f, slice_channels(x, split, x.channels)])
    return x


def _build_op(spec: BenchSpec):
    """Build (closure, meta) for a spec; all inputs/weights are seeded."""
    rng = np.random.default_rng(spec.seed)
    c, h, w, split, k = (spec.channels, spec.height, spec.width,
                         spec.split, spec.kernel)
    x = _random_tensor(rng, c, h, w)
    meta: dict = {}

    if spec.op == "partial":
        kern = _random_kernel(rng, split, split, k)
        return (lambda: _partial_conv(x, kern, split)), meta
    if spec.op == "full":
        kern = _random_kernel(rng, c, c, k)
        return (lambda: conv2d_fast(x, kern)), meta
    if spec.op == "dwc":
        kern = _random_kernel(rng, c, 1, k)
        return (lambda: depthwise_conv2d(x, kern)), meta
    if spec.op == "merged":
        # dense K plus the smaller dense/dilated branches that fit in K
        candidates = [(k, 1), (5, 1), (9, 2), (5, 3), (5, 4)]
        branches = [
            BranchSpec(_random_kernel(rng, split, split, bk), d)
            for bk, d in candidates
            if (bk - 1) * d + 1 <= k
        ]
        kern = merge_branches(branches, k)
        meta["branches"] = "+".join(
            f"{bk}x{bk}d{d}" for bk, d in candidates if (bk - 1) * d + 1 <= k
        )
        return (lambda: _partial_conv(x, kern, split)), meta
    if spec.op == "stacked_partial_3x3":
        kernels = [_random_kernel(rng, split, split, 3) for _ in range(6)]
        meta["receptive_field"] = "13 (6 stacked 3x3)"
        return (lambda: _stacked_partial(x, kernels, split, False)), meta
    if spec.op == "stacked_partial_3x3_gelu":
        kernels = [_random_kernel(rng, split, split, 3) for _ in range(6)]
        meta["receptive_field"] = "13 (6 stacked 3x3, GELU interleaved)"
        return (lambda: _stacked_partial(x, kernels, split, True)), meta
    raise ValueError(f"unknown bench op {spec.op!r}")


def run_cell(spec: BenchSpec, op=None, meta: dict | None = None) -> BenchRecord:
    """Time one cell: cold reference run, warmups, then timed iterations."""
    if op is None:
        op, meta = _build_op(spec)
    meta = dict(meta or {})

    reference = _checksum(op())
    tz.reset_peak()
    for _ in range(spec.warmup):
        op()
    times = []
    for _ in range(spec.iters):
        t0 = time.perf_counter()
        out = op()
        times.append((time.perf_counter() - t0) * 1e3)
        got = _checksum(out)
        if got != reference:
            raise RuntimeError(
                f"{spec.op}: timed checksum {got!r} != cold reference "
                f"{reference!r}; timing changed results"
            )
    peak = tz.peak_memory()
    return BenchRecord(
        spec=spec,
        median_ms=statistics.median(times),
        min_ms=min(times),
        max_ms=max(times),
        peak_bytes=peak,
        checksum=reference,
        meta=meta,
    )


def run_conv_sweep(channels: list[int], kernels: list[int],
                   shape: tuple[int, int, int] = DEFAULT_SHAPE,
                   iters: int = 9, warmup: int = 3, seed: int = 0,
                   op: str = "partial") -> list[BenchRecord]:
    """One record per (C, K) pair, channels outer, kernels inner."""
    if op not in SWEEP_OPS:
        raise ValueError(f"sweep op must be one of {SWEEP_OPS}")
    c, h, w = shape
    records = []
    for split in channels:
        if not (1 <= split <= c):
            raise ValueError(f"channel count {split} invalid for a {c}-wide map")
        for k in kernels:
            spec = BenchSpec(op=op, channels=c, height=h, width=w,
                             split=split, kernel=k, warmup=warmup,
                             iters=iters, seed=seed)
            records.append(run_cell(spec))
    return records


@dataclass(frozen=True)
class StackVsSingle:
    """Equal-receptive-field comparison: 6 stacked 3x3 partial convs
    (plain and GELU-interleaved) against one 13x13 partial conv."""

    stacked: BenchRecord
    stacked_gelu: BenchRecord
    single: BenchRecord

    @property
    def ratio(self) -> float:
        """median(stacked) / median(single); reported, never asserted."""
        return self.stacked.median_ms / self.single.median_ms

    @property
    def ratio_gelu(self) -> float:
        return self.stacked_gelu.median_ms / self.single.median_ms


def run_stack_vs_single(shape: tuple[int, int, int] = DEFAULT_SHAPE,
                        split: int = 16, iters: int = 9, warmup: int = 3,
                        seed: int = 0) -> StackVsSingle:
    c, h, w = shape
    if split > c:
        raise ValueError(f"split {split} exceeds {c} channels")

    def spec(op, k):
        return BenchSpec(op=op, channels=c, height=h, width=w, split=split,
                         kernel=k, warmup=warmup, iters=iters, seed=seed)

    stacked = run_cell(spec("stacked_partial_3x3", 3))
    stacked_gelu = run_cell(spec("stacked_partial_3x3_gelu", 3))
    single = run_cell(spec("partial", 13))
    single.meta["receptive_field"] = "13"
    return StackVsSingle(stacked=stacked, stacked_gelu=stacked_gelu,
                         single=single)


def run_model_bench(cfg: ModelConfig, hw: tuple[int, int],
                    iters: int = 9, warmup: int = 3,
                    seed: int = 0) -> BenchRecord:
    """End-to-end model_forward timing with seeded random weights."""
    h, w = hw
    weights = random_init(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    img = Tensor(rng.uniform(0.0, 1.0, (3, h, w)).astype(np.float32))
    spec = BenchSpec(op="model_forward", channels=cfg.width, height=h,
                     width=w, split=cfg.split, kernel=cfg.kernel,
                     warmup=warmup, iters=iters, seed=seed)
    record = run_cell(spec, op=lambda: model_forward(img, weights, cfg))
    record.meta["params"] = str(count_params(cfg))
    record.meta["flops"] = str(count_flops(cfg, h, w))
    return record


def write_csv(records: list[BenchRecord], out, comments: list[str] = ()) -> None:
    """CSV with the fixed header; deterministic row order (input order)."""
    for line in comments:
        out.write(f"# {line}\n")
    out.write(CSV_HEADER + "\n")
    for rec in records:
        out.write(rec.csv_row() + "\n")
