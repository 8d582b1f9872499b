"""Pick the compiled kernels when available; SAAK_PURE_PYTHON=1 forces numpy."""

import os

from . import _fallback

BACKEND = "python"
kernels = _fallback

if not os.environ.get("SAAK_PURE_PYTHON"):
    try:
        from . import _core
    except ImportError:
        pass
    else:
        kernels = _core
        BACKEND = "cython"


def get(name: str):
    """Return a backend by name ('cython' or 'python')."""
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
