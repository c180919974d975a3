"""Kernel selection.

The compiled extension is used when it imports; set ``MQTM_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _fallback

BACKEND = "python"

if os.environ.get("MQTM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

apply_local = _impl.apply_local
norm_sq = _impl.norm_sq

__all__ = ["BACKEND", "apply_local", "norm_sq"]
