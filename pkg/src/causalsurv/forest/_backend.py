"""Kernel backend selection.

The compiled kernels are used when importable. Setting
``CAUSALSURV_BACKEND=python`` forces the numpy fallback, and
``CAUSALSURV_BACKEND=compiled`` makes a missing extension an error.
"""
from __future__ import annotations

import os

from . import _pykernels

_requested = os.environ.get("CAUSALSURV_BACKEND", "auto").strip().lower()

if _requested == "python":
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        kernels = _pykernels
        BACKEND = "python"


def get_kernels(name: str | None = None):
    """Return the kernel module ``name`` (``"python"``/``"compiled"``) or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "compiled":
        from . import _kernels  # type: ignore[attr-defined]
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
