"""Kernel backend selection.

``SORDOR_BACKEND=numpy`` forces the vectorised numpy kernels; the default is
the numba-compiled set, falling back to numpy when numba cannot be imported.
"""
import logging
import os

logger = logging.getLogger(__name__)

_requested = os.environ.get("SORDOR_BACKEND", "numba").strip().lower()

if _requested not in ("numba", "numpy"):
    raise ImportError(f"SORDOR_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _kernels_numba as kernels
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        logger.warning("numba unavailable, using numpy kernels")
        from . import _kernels_numpy as kernels
        BACKEND = "numpy"
else:
    from . import _kernels_numpy as kernels
    BACKEND = "numpy"


def get_kernels(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return kernels
    if name == "numba":
        from . import _kernels_numba
        return _kernels_numba
    if name == "numpy":
        from . import _kernels_numpy
        return _kernels_numpy
    raise ValueError(f"unknown backend {name!r}")
