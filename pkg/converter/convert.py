#!/usr/bin/env python3
"""Convert released PLKSR PyTorch checkpoints into the engine's .plkw format.

Usage:
    convert.py --src model.pth --preset {plksr,plksr-tiny} --scale {2,3,4} \
               --out model.plkw

The source layout is mapped by position and shape, not by parameter names:
tensors are taken in state-dict order, paired as (weight, bias), and matched
against the expected layer inventory for the chosen preset. Within one
block the five (or four, without attention) conv layers all have pairwise
distinct shapes, so any within-block ordering is absorbed. Every mapping is
printed; a missing, leftover, or mis-shaped tensor is fatal. Weights pass
through as raw float32 bytes, so conversion is lossless.

This tool deliberately does not import the inference engine; the .plkw wire
format below is its only coupling (see the engine README for the spec).
"""
from __future__ import annotations

import argparse
import os
import struct
import sys
from collections import OrderedDict

import numpy as np

MAGIC = b"PLKW"
HEADER = struct.Struct("<4s8I")
FLAG_EA = 1
MIXER_DCCM = 3

PRESETS = {
    "plksr": dict(n_blocks=28, width=64, split=16, kernel=17, use_ea=True),
    "plksr-tiny": dict(n_blocks=12, width=64, split=16, kernel=13, use_ea=False),
}

# state-dict wrappers seen in the wild, tried in order
WRAPPER_KEYS = ("params_ema", "params", "state_dict", "model_state_dict")
STRIP_PREFIXES = ("module.", "model.")


class ConversionError(Exception):
    pass


def expected_slots(preset: str, scale: int) -> list[tuple[str, tuple[int, ...]]]:
    """Engine slot names and weight shapes, in canonical .plkw order."""
    p = PRESETS[preset]
    c, cc, split, k = p["width"], 2 * p["width"], p["split"], p["kernel"]
    slots = [("head", (c, 3, 3, 3))]
    for i in range(p["n_blocks"]):
        slots.append((f"block{i}.mixer_proj", (cc, c, 3, 3)))
        slots.append((f"block{i}.mixer_agg", (c, cc, 3, 3)))
        slots.append((f"block{i}.plk", (split, split, k, k)))
        if p["use_ea"]:
            slots.append((f"block{i}.ea", (c, c, 3, 3)))
        slots.append((f"block{i}.fuse", (c, c, 1, 1)))
    slots.append(("tail", (3 * scale * scale, c, 3, 3)))
    return slots


def load_source(path: str) -> "OrderedDict[str, np.ndarray]":
    """State dict as name -> float32 array, insertion order preserved."""
    import torch

    try:
        raw = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise ConversionError(f"{path}: cannot load checkpoint: {e}") from None
    if isinstance(raw, dict):
        for key in WRAPPER_KEYS:
            if key in raw and isinstance(raw[key], dict):
                raw = raw[key]
                break
    if not isinstance(raw, dict) or not raw:
        raise ConversionError(f"{path}: no state dict found")

    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, value in raw.items():
        if not torch.is_tensor(value):
            raise ConversionError(f"{path}: entry {name!r} is not a tensor")
        for prefix in STRIP_PREFIXES:
            if name.startswith(prefix):
                name = name[len(prefix):]
        if value.dtype != torch.float32:
            raise ConversionError(
                f"{path}: tensor {name!r} has dtype {value.dtype}; only "
                f"float32 checkpoints convert losslessly"
            )
        out[name] = value.detach().numpy()
    return out


def pair_params(tensors: "OrderedDict[str, np.ndarray]"):
    """Group the flat tensor list into (weight, bias) pairs, in order."""
    pairs = []
    items = list(tensors.items())
    i = 0
    while i < len(items):
        wname, w = items[i]
        if w.ndim != 4:
            raise ConversionError(
                f"expected a 4-d conv weight, found {wname!r} with shape "
                f"{tuple(w.shape)}"
            )
        if i + 1 >= len(items):
            raise ConversionError(f"weight {wname!r} has no bias after it")
        bname, b = items[i + 1]
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ConversionError(
                f"tensor {bname!r} (shape {tuple(b.shape)}) is not a valid "
                f"bias for weight {wname!r} (shape {tuple(w.shape)})"
            )
        pairs.append((wname, w, bname, b))
        i += 2
    return pairs


def map_to_slots(pairs, slots, preset: str):
    """Assign source (weight, bias) pairs to engine slots.

    Head is the first pair, tail the last; the pairs between are chunked
    into per-block groups and matched within each group by weight shape.
    """
    per_block = 5 if PRESETS[preset]["use_ea"] else 4
    n_blocks = PRESETS[preset]["n_blocks"]
    want = 2 + n_blocks * per_block
    count_note = "" if len(pairs) == want else (
        f" (checkpoint has {len(pairs)} conv layers, preset {preset!r} "
        f"expects {want}: {n_blocks} blocks of {per_block} plus head and tail)"
    )
    if len(pairs) < 2:
        raise ConversionError(f"only {len(pairs)} conv layers found{count_note}")

    mapping: "OrderedDict[str, tuple]" = OrderedDict()

    def assign(slot, shape, pair):
        wname, w, bname, b = pair
        if tuple(w.shape) != shape:
            raise ConversionError(
                f"slot {slot}: expected weight shape {shape}, got "
                f"{tuple(w.shape)} from {wname!r}{count_note}"
            )
        mapping[slot] = pair

    assign(*slots[0], pairs[0])
    body_slots = slots[1:-1]
    body_pairs = pairs[1:-1]
    for blk in range(n_blocks):
        group_slots = body_slots[blk * per_block:(blk + 1) * per_block]
        group_pairs = list(body_pairs[blk * per_block:(blk + 1) * per_block])
        for slot, shape in group_slots:
            found = [p for p in group_pairs if tuple(p[1].shape) == shape]
            if not found:
                raise ConversionError(
                    f"slot {slot}: no tensor of shape {shape} in block {blk} "
                    f"(candidates: "
                    f"{[(p[0], tuple(p[1].shape)) for p in group_pairs]})"
                    f"{count_note}"
                )
            if len(found) > 1:
                raise ConversionError(
                    f"slot {slot}: shape {shape} is ambiguous in block {blk} "
                    f"({[p[0] for p in found]}){count_note}"
                )
            group_pairs.remove(found[0])
            mapping[slot] = found[0]
        if group_pairs:
            raise ConversionError(
                f"block {blk}: leftover tensors "
                f"{[p[0] for p in group_pairs]} not consumed by any slot"
            )
    leftover = body_pairs[n_blocks * per_block:]
    if leftover:
        raise ConversionError(
            f"leftover tensors not mapped to any slot: "
            f"{[p[0] for p in leftover]}{count_note}"
        )
    assign(*slots[-1], pairs[-1])
    return mapping


def write_plkw(path: str, preset: str, scale: int, mapping, slots) -> int:
    p = PRESETS[preset]
    header = HEADER.pack(
        MAGIC, 1, scale, p["n_blocks"], p["width"], p["split"], p["kernel"],
        MIXER_DCCM, FLAG_EA if p["use_ea"] else 0,
    )
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(header)
        for slot, _ in slots:
            _, w, _, b = mapping[slot]
            f.write(np.ascontiguousarray(w, "<f4").tobytes())
            f.write(np.ascontiguousarray(b, "<f4").tobytes())
    os.replace(tmp, path)
    return os.path.getsize(path)


def checksum(arr: np.ndarray) -> float:
    return float(np.sum(arr, dtype=np.float64))


def convert_checkpoint(src: str, preset: str, scale: int, out: str,
                       log=print) -> int:
    """Convert `src` to `out`; returns the total converted parameter count.

    Raises ConversionError on any validation failure; the output file is
    only written after every tensor has been mapped and checked.
    """
    if preset not in PRESETS:
        raise ConversionError(f"unknown preset {preset!r}")
    slots = expected_slots(preset, scale)
    tensors = load_source(src)
    log(f"source: {src} ({len(tensors)} tensors)")
    pairs = pair_params(tensors)

    tail_w = pairs[-1][1]
    log(f"tail conv found: {pairs[-1][0]!r} shape {tuple(tail_w.shape)}")
    out_ch = tail_w.shape[0]
    if out_ch % 3 == 0 and int(round((out_ch // 3) ** 0.5)) ** 2 == out_ch // 3:
        implied = int(round((out_ch // 3) ** 0.5))
        log(f"tail implies scale x{implied}")
        if implied != scale:
            raise ConversionError(
                f"tail conv has {out_ch} output channels (scale x{implied}) "
                f"but --scale is {scale}"
            )

    mapping = map_to_slots(pairs, slots, preset)
    total = 0
    for slot, shape in slots:
        wname, w, bname, b = mapping[slot]
        total += w.size + b.size
        log(f"  {slot} <- {wname} / {bname}  {tuple(w.shape)}  "
            f"checksum={checksum(w) + checksum(b):.9g}")
    inventory = sum(
        int(np.prod(shape)) + shape[0] for _, shape in slots
    )
    if total != inventory:
        raise ConversionError(
            f"mapped {total} parameters but the {preset!r} inventory "
            f"expects {inventory}"
        )
    size = write_plkw(out, preset, scale, mapping, slots)
    log(f"total params: {total}")
    log(f"wrote: {out} ({size} bytes)")
    return total


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Convert a released PLKSR PyTorch checkpoint to .plkw")
    parser.add_argument("--src", required=True, help="checkpoint path (.pth)")
    parser.add_argument("--preset", required=True, choices=sorted(PRESETS))
    parser.add_argument("--scale", required=True, type=int, choices=[1, 2, 3, 4])
    parser.add_argument("--out", required=True, help="output .plkw path")
    args = parser.parse_args(argv)
    try:
        convert_checkpoint(args.src, args.preset, args.scale, args.out)
    except ConversionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
