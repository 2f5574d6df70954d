"""Kernel backend selection.

The compiled extension is used when it imports; otherwise (or when the
environment variable ``HYHUP_BACKEND=python`` is set) the numpy fallback is
used. Both expose the same functions and status codes.
"""

import importlib
import os

from . import _pykernels

_ENV = os.environ.get("HYHUP_BACKEND", "auto").lower()


def load(name="auto"):
    """Return the kernel module for ``name`` in {"auto", "compiled", "python"}."""
    if name == "python":
        return _pykernels
    try:
        return importlib.import_module("hyhup._ckernels")
    except ImportError:
        if name == "compiled":
            raise
        return _pykernels


def available():
    """Names of the backends that can be loaded in this installation."""
    names = ["python"]
    try:
        importlib.import_module("hyhup._ckernels")
    except ImportError:
        pass
    else:
        names.insert(0, "compiled")
    return names


kernels = load(_ENV if _ENV in ("python", "compiled") else "auto")
NAME = kernels.BACKEND
