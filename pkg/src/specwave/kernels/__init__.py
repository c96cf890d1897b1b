"""Kernel backend selection.

The compiled Cython extension is used when it imported successfully;
otherwise the pure-numpy reference implementation takes over. Override with
the environment variable SPECWAVE_BACKEND=python|compiled|auto.
"""

import os

from . import numpy_ref

try:
    from . import _core

    HAS_COMPILED = True
except ImportError:
    _core = None
    HAS_COMPILED = False


class BackendError(RuntimeError):
    pass


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: env var, then auto)."""
    if name is None:
        name = os.environ.get("SPECWAVE_BACKEND", "auto")
    if name == "auto":
        return _core if HAS_COMPILED else numpy_ref
    if name == "python":
        return numpy_ref
    if name == "compiled":
        if not HAS_COMPILED:
            raise BackendError("compiled kernels are not available in this installation")
        return _core
    raise BackendError(f"unknown backend {name!r} (use auto, python or compiled)")


def backend_name(backend=None) -> str:
    return (backend or get_backend()).name
