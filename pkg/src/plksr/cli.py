"""Command-line front end.

Subcommands: upscale, eval, bench {sweep,stack,model}, inspect, merge.
Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numerical
failure. Commands never leave partially written output files (everything
is written to a temp file and renamed on success).

``--threads N`` must be handled before numpy loads its BLAS, so main()
pre-scans argv and sets the thread-count environment variables before
importing any numerical module; the numeric imports therefore live inside
the command functions.
"""
from __future__ import annotations

import argparse
import os
import sys

MERGE_RESIDUAL_LIMIT = 1e-3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1, not 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _apply_thread_flag(argv: list[str]) -> None:
    n = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif arg.startswith("--threads="):
            n = arg.split("=", 1)[1]
    if n is None:
        return
    if not n.isdigit() or int(n) < 1:
        raise UsageError(f"--threads expects a positive integer, got {n!r}")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = n


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise UsageError(f"{what} must be a comma-separated integer list, got {text!r}")
    if not values:
        raise UsageError(f"{what} list is empty")
    return values


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    try:
        c, h, w = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"--shape expects CxHxW, got {text!r}") from None
    if min(c, h, w) < 1:
        raise UsageError(f"--shape dims must be >= 1, got {text!r}")
    return c, h, w


def _parse_hw(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        h, w = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"--hw expects HxW, got {text!r}") from None
    if min(h, w) < 1:
        raise UsageError(f"--hw dims must be >= 1, got {text!r}")
    return h, w


def _open_out(path):
    """Context manager yielding stdout or an atomically written file."""
    import contextlib

    @contextlib.contextmanager
    def cm():
        if path is None:
            yield sys.stdout
            return
        tmp = path + ".tmp"
        try:
            with open(tmp, "w") as f:
                yield f
            os.replace(tmp, path)
        except Exception:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    return cm()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_upscale(args) -> int:
    from .image_io import decode_png, encode_png, image_from_tensor, tensor_from_image
    from .model import load_weights, preset_config, model_forward

    weights, cfg = load_weights(args.weights)
    if args.preset:
        want = preset_config(args.preset, cfg.scale)
        if want != cfg:
            raise DataError(
                f"{args.weights}: config {cfg} does not match preset "
                f"{args.preset!r} ({want})"
            )
    img = decode_png(args.input)
    lr = tensor_from_image(img)
    sr = model_forward(lr, weights, cfg)
    encode_png(image_from_tensor(sr), args.output)
    print(f"{args.input} ({img.width}x{img.height}) -> {args.output} "
          f"({img.width * cfg.scale}x{img.height * cfg.scale}), x{cfg.scale}",
          file=sys.stderr)
    return 0


def _resolve_pairs(path: str, scale: int) -> list[tuple[str, str, str]]:
    """(name, lr_path, hr_path) tuples from a manifest file or directory.

    Directory convention: `<name>.png` is the HR image and `<name>x<r>.png`
    its LR counterpart. Manifest: one `lr_path,hr_path` per line, UTF-8,
    resolved relative to the manifest's directory.
    """
    pairs = []
    if os.path.isdir(path):
        suffix = f"x{scale}.png"
        names = sorted(os.listdir(path))
        hr_names = [n for n in names if n.endswith(".png") and not n.endswith(suffix)]
        if not hr_names:
            raise DataError(f"{path}: no HR .png files found")
        for hr in hr_names:
            stem = hr[:-len(".png")]
            lr = f"{stem}{suffix}"
            lr_path = os.path.join(path, lr)
            if not os.path.exists(lr_path):
                raise DataError(f"{path}: missing LR pair {lr} for {hr}")
            pairs.append((stem, lr_path, os.path.join(path, hr)))
        return pairs
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'lr_path,hr_path'")
            lr, hr = (os.path.join(base, p.strip()) for p in parts)
            for p in (lr, hr):
                if not os.path.exists(p):
                    raise DataError(f"{path}:{lineno}: missing file {p}")
            name = os.path.splitext(os.path.basename(hr))[0]
            pairs.append((name, lr, hr))
    if not pairs:
        raise DataError(f"{path}: manifest lists no pairs")
    return pairs


def cmd_eval(args) -> int:
    from .image_io import decode_png, image_from_tensor, tensor_from_image
    from .metrics import crop_border, psnr, rgb_to_y, ssim
    from .model import load_weights, model_forward

    weights, cfg = load_weights(args.weights)
    if cfg.scale != args.scale:
        raise DataError(
            f"{args.weights} is a x{cfg.scale} model but --scale is {args.scale}"
        )
    pairs = _resolve_pairs(args.path, args.scale)
    print("name,psnr_db,ssim")
    psnrs, ssims = [], []
    for name, lr_path, hr_path in pairs:
        lr = decode_png(lr_path)
        hr = decode_png(hr_path)
        sr = image_from_tensor(model_forward(tensor_from_image(lr), weights, cfg))
        if sr.data.shape != hr.data.shape:
            raise DataError(
                f"{name}: upscaled LR is {sr.width}x{sr.height} but HR is "
                f"{hr.width}x{hr.height}"
            )
        y_sr = crop_border(rgb_to_y(sr), args.scale)
        y_hr = crop_border(rgb_to_y(hr), args.scale)
        p, s = psnr(y_sr, y_hr), ssim(y_sr, y_hr)
        psnrs.append(p)
        ssims.append(s)
        print(f"{name},{p:.4f},{s:.6f}")
    mean_p = sum(psnrs) / len(psnrs)
    mean_s = sum(ssims) / len(ssims)
    print(f"mean,{mean_p:.4f},{mean_s:.6f}")
    return 0


def cmd_inspect(args) -> int:
    from .model import count_params, load_weights, _layer_shapes

    weights, cfg = load_weights(args.weights)
    size = os.path.getsize(args.weights)
    print(f"file: {args.weights} ({size} bytes)")
    print(f"config: scale={cfg.scale} n_blocks={cfg.n_blocks} "
          f"width={cfg.width} split={cfg.split} kernel={cfg.kernel} "
          f"mixer={cfg.mixer.name} use_ea={cfg.use_ea}")
    by_name = {}
    for i, bw in enumerate(weights.blocks):
        by_name[f"block{i}.mixer_proj"] = bw.mixer_proj
        by_name[f"block{i}.mixer_agg"] = bw.mixer_agg
        by_name[f"block{i}.plk"] = bw.plk
        if bw.ea is not None:
            by_name[f"block{i}.ea"] = bw.ea
        by_name[f"block{i}.fuse"] = bw.fuse
    by_name["head"] = weights.head
    by_name["tail"] = weights.tail
    total = 0
    for name, o, i, k in _layer_shapes(cfg):
        kern = by_name[name]
        n = kern.weights.size + kern.bias.size
        total += n
        print(f"  {name}: {o}x{i}x{k}x{k} + bias[{o}]  ({n} params)")
    analytic = count_params(cfg)
    print(f"total params: {total}")
    if total != analytic:
        raise DataError(
            f"param total {total} disagrees with analytic count {analytic}"
        )
    return 0


def cmd_merge(args) -> int:
    import numpy as np

    from .reparam import (BranchSpec, dilated_conv_reference, load_kernel,
                          merge_branches, save_kernel)
    from .tensor import Tensor

    if args.target_k < 1 or args.target_k % 2 == 0:
        raise UsageError(f"--target-k must be odd and >= 1, got {args.target_k}")
    kernels = [load_kernel(p) for p in args.branches]
    dilations = ([1] * len(kernels) if args.dilations is None
                 else _parse_int_list(args.dilations, "--dilations"))
    if len(dilations) != len(kernels):
        raise UsageError(
            f"got {len(kernels)} branch files but {len(dilations)} dilations"
        )
    try:
        branches = [BranchSpec(k, d) for k, d in zip(kernels, dilations)]
        merged = merge_branches(branches, args.target_k)
    except ValueError as e:
        raise DataError(str(e)) from None

    # built-in equivalence check on a random input before anything is
    # written; both sides go through the same reference conv so the
    # residual isolates merge error (a single dense branch gives exactly 0)
    rng = np.random.default_rng(args.seed)
    in_ch = merged.in_channels
    x = Tensor(rng.uniform(-1.0, 1.0, (in_ch, 32, 32)).astype(np.float32))
    want = np.zeros((merged.out_channels, 32, 32), np.float64)
    for br in branches:
        want += dilated_conv_reference(x, br.kernel, br.dilation).data
    got = dilated_conv_reference(x, merged, 1).data.astype(np.float64)
    residual = float(np.abs(got - want).max())
    print(f"merged {len(branches)} branch(es) into {args.target_k}x"
          f"{args.target_k}; max-abs verification residual: {residual:.3e}")
    if residual > MERGE_RESIDUAL_LIMIT:
        raise NumericalError(
            f"merge equivalence residual {residual:.3e} exceeds "
            f"{MERGE_RESIDUAL_LIMIT:g}; output not written"
        )
    save_kernel(merged, args.output)
    return 0


def cmd_bench(args) -> int:
    from . import bench

    comments = []
    if args.bench_cmd == "sweep":
        channels = _parse_int_list(args.channels, "--channels")
        kernels = _parse_int_list(args.kernels, "--kernels")
        shape = _parse_shape(args.shape)
        for k in kernels:
            if k < 1 or k % 2 == 0:
                raise UsageError(f"kernel sizes must be odd and >= 1, got {k}")
        for c in channels:
            if not (1 <= c <= shape[0]):
                raise UsageError(
                    f"channel count {c} invalid for a {shape[0]}-wide map"
                )
        try:
            records = bench.run_conv_sweep(
                channels, kernels, shape, iters=args.iters,
                warmup=args.warmup, seed=args.seed, op=args.op,
            )
        except ValueError as e:
            raise UsageError(str(e)) from None
        comments.append(f"op={args.op} shape={args.shape} biases=on")
    elif args.bench_cmd == "stack":
        shape = _parse_shape(args.shape)
        if args.split > shape[0]:
            raise UsageError(f"--split {args.split} exceeds map width {shape[0]}")
        result = bench.run_stack_vs_single(
            shape, split=args.split, iters=args.iters,
            warmup=args.warmup, seed=args.seed,
        )
        records = [result.stacked, result.stacked_gelu, result.single]
        comments.append("equal receptive field: 6 stacked 3x3 => 13x13; biases=on")
        comments.append(
            f"median ratio stacked/single={result.ratio:.3f} "
            f"(gelu variant {result.ratio_gelu:.3f}); informational only"
        )
    else:  # model
        from .model import count_flops, count_params, flop_formula, preset_config

        cfg = preset_config(args.preset, args.scale)
        hw = _parse_hw(args.hw)
        record = bench.run_model_bench(
            cfg, hw, iters=args.iters, warmup=args.warmup, seed=args.seed
        )
        records = [record]
        comments.append(
            f"preset={args.preset} scale={args.scale} "
            f"params={count_params(cfg)} flops={count_flops(cfg, *hw)}"
        )
        comments.append(f"flop accounting: {flop_formula()}")

    with _open_out(args.out) as out:
        bench.write_csv(records, out, comments=comments)
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(
        prog="plksr",
        description="CPU super-resolution engine: partial large-kernel "
                    "network inference, metrics, and conv benchmarks.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True, metavar="COMMAND")

    p = sub.add_parser("upscale", help="upscale a PNG with a .plkw model")
    p.add_argument("input", help="input PNG (8-bit; gray/alpha promoted to RGB)")
    p.add_argument("output", help="output PNG path")
    p.add_argument("--weights", required=True, help="path to a .plkw weight file")
    p.add_argument("--preset", choices=["plksr", "plksr-tiny"],
                   help="require the weight file to match this preset")
    p.add_argument("--threads", type=int, help="BLAS thread count")
    p.set_defaults(func=cmd_upscale)

    p = sub.add_parser("eval", help="PSNR/SSIM of a model over LR/HR pairs")
    p.add_argument("path", help="manifest file (lr_path,hr_path per line) or "
                                "directory with <name>.png / <name>x<r>.png pairs")
    p.add_argument("--weights", required=True, help="path to a .plkw weight file")
    p.add_argument("--scale", required=True, type=int, choices=[1, 2, 3, 4],
                   help="upscale factor (and border crop width)")
    p.add_argument("--threads", type=int, help="BLAS thread count")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="validate and describe a .plkw file")
    p.add_argument("weights", help="path to a .plkw weight file")
    p.add_argument("--threads", type=int, help="BLAS thread count")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("merge", help="merge conv branches into one kernel")
    p.add_argument("branches", nargs="+", help=".plkk branch kernel files")
    p.add_argument("--target-k", required=True, type=int,
                   help="side of the merged (odd) kernel")
    p.add_argument("--dilations", help="comma list, one per branch (default all 1)")
    p.add_argument("-o", "--output", required=True, help="merged .plkk path")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for the built-in equivalence check")
    p.add_argument("--threads", type=int, help="BLAS thread count")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("bench", help="convolution / model micro-benchmarks")
    bsub = p.add_subparsers(dest="bench_cmd", required=True, metavar="KIND")

    def common(bp):
        bp.add_argument("--iters", type=int, default=9,
                        help="timed iterations per cell (>= 5)")
        bp.add_argument("--warmup", type=int, default=3,
                        help="warmup iterations per cell (>= 1)")
        bp.add_argument("--seed", type=int, default=0, help="RNG seed")
        bp.add_argument("--out", help="write CSV here instead of stdout")
        bp.add_argument("--csv", action="store_true",
                        help="accepted for symmetry; output is always CSV")
        bp.add_argument("--threads", type=int, help="BLAS thread count")
        bp.set_defaults(func=cmd_bench)

    bp = bsub.add_parser("sweep", help="partial-conv (C, K) latency sweep")
    bp.add_argument("--channels", default="4,8,16,32,64",
                    help="comma list of processed-channel counts")
    bp.add_argument("--kernels", default="5,9,13,17",
                    help="comma list of odd kernel sizes")
    bp.add_argument("--shape", default="64x640x360", help="feature map CxHxW")
    bp.add_argument("--op", default="partial",
                    choices=["partial", "full", "dwc", "merged"],
                    help="which conv strategy each cell times")
    common(bp)

    bp = bsub.add_parser("stack", help="6 stacked 3x3 vs one 13x13 partial conv")
    bp.add_argument("--shape", default="64x640x360", help="feature map CxHxW")
    bp.add_argument("--split", type=int, default=16,
                    help="channels the partial convs process")
    common(bp)

    bp = bsub.add_parser("model", help="end-to-end model forward timing")
    bp.add_argument("--preset", required=True, choices=["plksr", "plksr-tiny"])
    bp.add_argument("--scale", type=int, default=4, choices=[1, 2, 3, 4])
    bp.add_argument("--hw", required=True, help="input height x width, e.g. 180x320")
    common(bp)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        _apply_thread_flag(argv)
        parser = _build_parser()
        args = parser.parse_args(argv)
        if getattr(args, "iters", 9) < 5:
            raise UsageError("--iters must be >= 5")
        if getattr(args, "warmup", 3) < 1:
            raise UsageError("--warmup must be >= 1")
        return args.func(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - map known data errors to exit 2
        from .image_io import ImageDecodeError
        from .model import WeightFileError
        from .reparam import KernelFileError

        if isinstance(e, (WeightFileError, KernelFileError, ImageDecodeError,
                          OSError, ValueError)):
            print(f"error: {e}", file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
