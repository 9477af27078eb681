"""Kernel backend selection.

Set ``DEGREE_SR_BACKEND=numpy`` to force the pure-numpy kernels, or
``DEGREE_SR_BACKEND=numba`` to require numba. The default ("auto") uses numba
when it imports and the numpy kernels otherwise. Both kernel families are
always built when numba is importable so they can be compared side by side.
"""
import logging
import os

log = logging.getLogger(__name__)

try:
    import numba  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False


def _select(requested: str) -> str:
    requested = requested.strip().lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(f"DEGREE_SR_BACKEND must be auto, numba or numpy, got {requested!r}")
    if requested == "numba" and not NUMBA_AVAILABLE:
        raise ImportError("DEGREE_SR_BACKEND=numba but numba is not installed")
    if requested == "auto":
        return "numba" if NUMBA_AVAILABLE else "numpy"
    return requested


BACKEND = _select(os.environ.get("DEGREE_SR_BACKEND", "auto"))
log.debug("degree_sr kernel backend: %s", BACKEND)
