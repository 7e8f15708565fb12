"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the NumPy
fallback in ``_pykernels`` is used.  Set ``ARSVHEDGE_BACKEND=python`` to force
the fallback (handy for comparing the two).
"""
import os

from . import _pykernels

if os.environ.get("ARSVHEDGE_BACKEND", "").lower() == "python":
    impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _core as impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        impl = _pykernels
        BACKEND = "python"

arsv_recursion = impl.arsv_recursion
hlik_solve = impl.hlik_solve
hlik_run = impl.hlik_run
kalman_run = impl.kalman_run


def available_backends():
    """Mapping of backend name to kernel module for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _core
    except ImportError:
        return out
    out["cython"] = _core
    return out
