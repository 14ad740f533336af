"""Backend switch for the compiled kernels.

Set ``UQAUDIT_NUMBA=0`` in the environment to force the pure-numpy paths.
The flag is read once, at import time.
"""

import os

_OFF = {"0", "false", "no", "off"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is an optional extra
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("UQAUDIT_NUMBA", "1").strip().lower() not in _OFF


def njit(func):
    """Compile ``func`` with numba when it is installed, else return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return _numba.njit(cache=True, fastmath=False)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
