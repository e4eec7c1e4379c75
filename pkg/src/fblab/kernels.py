"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported. Set ``FBLAB_PURE=1`` to force the fallback.
"""
import os

from fblab import _purepy

BACKEND = "python"
if os.environ.get("FBLAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from fblab import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _purepy
else:
    _impl = _purepy

philox4x32 = _impl.philox4x32
viterbi_tailbiting = _impl.viterbi_tailbiting

__all__ = ["BACKEND", "philox4x32", "viterbi_tailbiting"]
