"""Backend selection for the hot kernels.

The numba path is used when numba imports cleanly and ``OMNIGYRO_BACKEND`` is
unset or ``numba``.  Setting ``OMNIGYRO_BACKEND=numpy`` forces the vectorised
numpy fallback, which is also what runs when numba is missing.
"""
import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAS_NUMBA = False

_requested = os.environ.get("OMNIGYRO_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"OMNIGYRO_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

BACKEND = "numba" if (_requested == "numba" and HAS_NUMBA) else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return numba.njit(*args, cache=True, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap
