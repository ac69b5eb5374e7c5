"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``HOPFCOLE_PURE_PYTHON=1`` to force the numpy fallback (used by the test
suite to cross-check both paths and by the benchmark).
"""

import os

from . import _fallback

BACKEND = "python"

if os.environ.get("HOPFCOLE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

hc_batch = _impl.hc_batch
lse_affine_batch = _impl.lse_affine_batch
entropy_batch = _impl.entropy_batch

__all__ = ["BACKEND", "hc_batch", "lse_affine_batch", "entropy_batch"]
