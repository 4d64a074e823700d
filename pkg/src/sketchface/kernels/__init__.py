"""Hot numeric kernels with two interchangeable backends.

The numba backend is the default; set SKETCHFACE_DISABLE_NUMBA=1 before
import to force the pure-numpy fallback (also used automatically when numba
cannot be imported). `get_backend()` exposes both for tests and benchmarks.
"""
import os

from . import _numpy

_FLAG = os.environ.get("SKETCHFACE_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG in ("1", "true", "yes")

if not _DISABLED:
    try:
        from . import _numba as _active
        BACKEND = "numba"
    except ImportError:
        _active = _numpy
        BACKEND = "numpy"
else:
    _active = _numpy
    BACKEND = "numpy"


def get_backend(name):
    """Return the kernel module for 'numba' or 'numpy' (tests, benchmarks)."""
    if name == "numpy":
        return _numpy
    if name == "numba":
        from . import _numba
        return _numba
    raise ValueError(f"unknown kernel backend: {name!r}")


rasterize_triangles = _active.rasterize_triangles
mls_affine_points = _active.mls_affine_points
median3x3_band = _active.median3x3_band
