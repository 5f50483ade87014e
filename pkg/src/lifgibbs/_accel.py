"""Backend selection for the numeric kernels.

Every hot loop in the package exists twice: a numba ``@njit`` kernel and a
pure-numpy path.  Both produce the same numbers; the numba kernels are simply
faster on long rasters and large chains.  The backend is chosen once, at import
time, from the ``LIFGIBBS_BACKEND`` environment variable:

``numba`` (default)
    use the compiled kernels when numba imports cleanly, else fall back.
``numpy``
    never touch numba.

Kernels are registered with :func:`dispatch`, which returns the active
implementation; tests and the benchmark reach both through :data:`KERNELS`.
"""

import os
import warnings

BACKEND_ENV = "LIFGIBBS_BACKEND"

_requested = os.environ.get(BACKEND_ENV, "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {_requested!r}")

try:
    if _requested == "numpy":
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False
    if _requested == "numba":
        warnings.warn("numba not importable; using the numpy kernels", RuntimeWarning)

BACKEND = "numba" if HAVE_NUMBA else "numpy"

# name -> {"numba": fn or None, "numpy": fn}
KERNELS = {}


def njit(fn):
    """Compile ``fn`` with numba when available; return it unchanged otherwise."""
    if _njit is None:
        return fn
    return _njit(cache=True, nogil=True)(fn)


def dispatch(name, numba_impl, numpy_impl):
    """Register both implementations of a kernel and return the active one."""
    KERNELS[name] = {"numba": numba_impl if HAVE_NUMBA else None, "numpy": numpy_impl}
    return numba_impl if HAVE_NUMBA else numpy_impl


def available_backends():
    return ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
