"""Kernel backend selection.

The compiled extension (pfedsv._kernels) is preferred when it imported
cleanly; the pure-numpy module is the fallback. Set PFEDSV_BACKEND=python or
PFEDSV_BACKEND=cython to force one side (forcing cython raises if the
extension is unavailable).
"""

import os

from pfedsv import _kernels_py

try:
    from pfedsv import _kernels  # type: ignore[attr-defined]
except ImportError:
    _kernels = None


def available_backends():
    names = ["python"]
    if _kernels is not None:
        names.insert(0, "cython")
    return names


def get_backend(name=None):
    """Return the kernel module for `name` (default: env var, then best available)."""
    if name is None:
        name = os.environ.get("PFEDSV_BACKEND")
    if name is None:
        return _kernels if _kernels is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _kernels is None:
            raise ImportError("compiled kernels requested but pfedsv._kernels is not built")
        return _kernels
    raise ValueError(f"unknown backend {name!r} (expected 'python' or 'cython')")


kernels = get_backend()

BACKEND_NAME = kernels.BACKEND_NAME
