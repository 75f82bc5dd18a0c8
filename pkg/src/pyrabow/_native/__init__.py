"""Hot kernels: compiled extension when available, numpy otherwise.

Set ``PYRABOW_PURE_PYTHON=1`` to force the numpy implementations.
"""
import os

from . import _fallback

_forced_pure = os.environ.get("PYRABOW_PURE_PYTHON", "").strip() not in ("", "0")

if _forced_pure:
    _impl = _fallback
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _fallback

BACKEND = "cython" if _impl is not _fallback else "numpy"

sift_descriptors = _impl.sift_descriptors
hist_intersection_gram = _impl.hist_intersection_gram
smo_solve = _impl.smo_solve

__all__ = ["BACKEND", "sift_descriptors", "hist_intersection_gram", "smo_solve"]
