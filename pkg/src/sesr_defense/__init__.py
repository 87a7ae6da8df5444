"""Tiny super-resolution networks with collapsible linear blocks, a training-free
adversarial preprocessing defense, gradient attacks and cost accounting.

Submodules are imported lazily so that ``sesr_defense.cli`` can configure
BLAS threading before numpy loads.
"""
from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "attacks",
    "collapse",
    "costmodel",
    "data",
    "defense",
    "errors",
    "experiment",
    "io",
    "models",
    "network",
    "report",
    "tensor",
    "training",
)
__all__ = list(_SUBMODULES)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
