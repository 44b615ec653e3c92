"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback. Set ``KSVRG_BACKEND=python`` to force the fallback or
``KSVRG_BACKEND=cython`` to fail loudly when the extension is missing.
"""
import os

from . import _pykernels

_requested = os.environ.get("KSVRG_BACKEND", "auto").lower()
if _requested not in ("auto", "cython", "python"):
    raise ImportError(f"unknown KSVRG_BACKEND={_requested!r}")

_impl = _pykernels
BACKEND = "python"
if _requested != "python":
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise

inner_loop = _impl.inner_loop
saga_loop = _impl.saga_loop
sgd_loop = _impl.sgd_loop


def available_backends():
    """Map backend name to kernel module for every backend importable here."""
    out = {"python": _pykernels}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out
