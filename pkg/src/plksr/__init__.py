"""CPU inference engine and benchmark suite for partial large-kernel
super-resolution networks.

Submodules: tensor (feature maps + allocation arena), nnops (conv and
friends), model (architecture, presets, .plkw files), reparam (branch
merging), metrics (Y-channel PSNR/SSIM), bench (latency harness),
cli (command-line front end).

Submodules are imported lazily so the CLI can pin BLAS thread counts
before numpy loads.
"""
import importlib

__version__ = "0.1.0"

_SUBMODULES = ("tensor", "nnops", "model", "reparam", "metrics", "bench",
               "image_io", "cli")


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
