"""Kernel backend selection.

The compiled extension is used when it imports; set ``TUPLEWORKS_PURE_PYTHON=1``
to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
kernels = _fallback

if os.environ.get("TUPLEWORKS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"


def get_kernels(backend: str | None = None):
    """Kernel module for ``backend`` ('cython', 'python' or None for the active one)."""
    if backend is None:
        return kernels
    if backend == "python":
        return _fallback
    if backend == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {backend!r}")
