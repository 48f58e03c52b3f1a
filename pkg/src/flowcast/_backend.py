"""Kernel backend selection.

The compiled extension is preferred. Set ``FLOWCAST_BACKEND=python`` to force
the numpy fallback, or ``FLOWCAST_BACKEND=compiled`` to fail loudly when the
extension is missing.
"""

import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

_requested = os.environ.get("FLOWCAST_BACKEND", "auto").lower()
if _requested not in ("auto", "python", "compiled"):
    raise ImportError(f"FLOWCAST_BACKEND must be auto, python or compiled, got {_requested!r}")

kernels = _kernels_py
BACKEND = "python"

if _requested != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _requested == "compiled":
            raise
        logger.debug("compiled kernels unavailable, using numpy fallback")
    else:
        kernels = _compiled
        BACKEND = "compiled"


def available_backends():
    """Map of backend name to kernel module for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        found["compiled"] = _compiled
    return found
