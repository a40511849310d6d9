"""Kernel backend selection.

The compiled extension is preferred when importable; the NumPy module is a
drop-in replacement.  ``EIGFREE_BACKEND=python`` or ``=compiled`` forces a
choice (the latter raises if the extension is missing instead of silently
degrading).
"""

import os

from . import _kernels_py
from .errors import InvalidInput

try:
    from . import _kernels_cy
except ImportError:  # extension not built
    _kernels_cy = None

_choice = os.environ.get("EIGFREE_BACKEND", "auto").lower()
if _choice == "python":
    _impl = _kernels_py
elif _choice == "compiled":
    if _kernels_cy is None:
        raise ImportError(
            "EIGFREE_BACKEND=compiled but the eigfree._kernels_cy extension "
            "is not built; reinstall with a C compiler and Cython available"
        )
    _impl = _kernels_cy
elif _choice == "auto":
    _impl = _kernels_cy if _kernels_cy is not None else _kernels_py
else:
    raise ImportError(f"unknown EIGFREE_BACKEND value: {_choice!r}")

backend_name = _impl.BACKEND_NAME

jacobi_eigh = _impl.jacobi_eigh
jacobi_svd = _impl.jacobi_svd
weighted_terms = _impl.weighted_terms


def available_backends():
    """Names of the kernel backends importable in this environment."""
    names = ["python"]
    if _kernels_cy is not None:
        names.append("compiled")
    return names


def get_kernels(name):
    """Return the kernel module for ``name`` (for benchmarks and tests)."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _kernels_cy is None:
            raise InvalidInput("compiled kernel backend is not available")
        return _kernels_cy
    raise InvalidInput(f"unknown backend {name!r}")
