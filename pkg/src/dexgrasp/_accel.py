"""Backend selection for the hot geometry kernels.

Set ``DEXGRASP_NUMBA=0`` in the environment before import to force the
pure-numpy path. If numba is not importable the numpy path is used silently.
"""
import os

_FLAG = os.environ.get("DEXGRASP_NUMBA", "1").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")

BACKEND = "numba" if USE_NUMBA else "numpy"
