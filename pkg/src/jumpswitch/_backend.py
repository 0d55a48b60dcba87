"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``JUMPSWITCH_BACKEND=python`` to force the fallback, or ``=cython`` to
fail loudly when the extension is missing.
"""
import os

from . import _kernel_py


def get_backend(name: str | None = None):
    name = (name or os.environ.get("JUMPSWITCH_BACKEND", "auto")).lower()
    if name == "python":
        return _kernel_py
    try:
        from . import _kernel
    except ImportError:
        if name == "cython":
            raise
        return _kernel_py
    return _kernel


kernel = get_backend()
