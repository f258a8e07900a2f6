"""Test-side helpers: generate synthetic checkpoints with the public
PLKSR layout, and read/export .plkw files, so round trips can be checked
without touching the inference engine's code."""
from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from convert import FLAG_EA, HEADER, MAGIC, PRESETS, expected_slots


def public_layer_names(preset: str, scale: int) -> list[tuple[str, str]]:
    """(weight key, bias key) per conv, using the released repo's naming."""
    p = PRESETS[preset]
    names = [("feats.0.weight", "feats.0.bias")]
    for i in range(p["n_blocks"]):
        m = f"feats.{i + 1}"
        names.append((f"{m}.channel_mixer.0.weight", f"{m}.channel_mixer.0.bias"))
        names.append((f"{m}.channel_mixer.2.weight", f"{m}.channel_mixer.2.bias"))
        names.append((f"{m}.lk.conv.weight", f"{m}.lk.conv.bias"))
        if p["use_ea"]:
            names.append((f"{m}.attn.f.weight", f"{m}.attn.f.bias"))
        names.append((f"{m}.refine.weight", f"{m}.refine.bias"))
    last = p["n_blocks"] + 1
    names.append((f"feats.{last}.weight", f"feats.{last}.bias"))
    return names


def synthetic_state_dict(preset: str, scale: int, seed: int = 0):
    """Random float32 state dict shaped like a released checkpoint."""
    import torch

    rng = np.random.default_rng(seed)
    sd = OrderedDict()
    slots = expected_slots(preset, scale)
    for (wkey, bkey), (_, shape) in zip(public_layer_names(preset, scale), slots):
        s = 1.0 / np.sqrt(np.prod(shape[1:]))
        w = rng.uniform(-s, s, shape).astype(np.float32)
        b = rng.uniform(-s, s, shape[0]).astype(np.float32)
        sd[wkey] = torch.from_numpy(w)
        sd[bkey] = torch.from_numpy(b)
    return sd


def save_checkpoint(sd, path: str, wrapper: str | None = "params") -> None:
    import torch

    torch.save(sd if wrapper is None else {wrapper: sd}, path)


def read_plkw(path: str):
    """Parse a .plkw file: (header dict, OrderedDict slot -> (weights, bias)).

    Independent reference reader used to verify converter output byte for
    byte; implements the published wire format directly.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    (_, version, scale, n_blocks, width, split, kernel, mixer,
     flags) = HEADER.unpack_from(blob)
    header = dict(version=version, scale=scale, n_blocks=n_blocks,
                  width=width, split=split, kernel=kernel, mixer=mixer,
                  use_ea=bool(flags & FLAG_EA))
    preset = None
    for name, p in PRESETS.items():
        if (p["n_blocks"], p["width"], p["split"], p["kernel"], p["use_ea"]) == \
                (n_blocks, width, split, kernel, header["use_ea"]):
            preset = name
    if preset is None:
        raise ValueError(f"{path}: header does not match a known preset")
    offset = HEADER.size
    tensors = OrderedDict()
    for slot, shape in expected_slots(preset, scale):
        nw = int(np.prod(shape))
        w = np.frombuffer(blob, "<f4", count=nw, offset=offset).reshape(shape)
        offset += nw * 4
        b = np.frombuffer(blob, "<f4", count=shape[0], offset=offset)
        offset += shape[0] * 4
        tensors[slot] = (w, b)
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return header, tensors


def state_dict_from_plkw(path: str, preset: str, scale: int):
    """Export .plkw weights back to a torch state dict with public names."""
    import torch

    _, tensors = read_plkw(path)
    sd = OrderedDict()
    names = public_layer_names(preset, scale)
    for (wkey, bkey), (w, b) in zip(names, tensors.values()):
        sd[wkey] = torch.from_numpy(w.copy())
        sd[bkey] = torch.from_numpy(b.copy())
    return sd
