"""Kernel backend selection.

The compiled Cython kernels are preferred when the extension built; the
numpy implementations in ``_npcore`` are the fallback.  Set
``CIT_PURE_PYTHON=1`` to force the fallback (used by the benchmark and by
tests that compare the two backends).
"""

import os

import numpy as np

from . import _npcore

_force_py = os.environ.get("CIT_PURE_PYTHON", "").strip().lower() in {"1", "true", "yes"}

if not _force_py:
    try:
        from . import _fastcore as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _npcore
        BACKEND = "numpy"
else:
    _impl = _npcore
    BACKEND = "numpy"


def backend_name():
    return BACKEND


def _as_c(a):
    return np.ascontiguousarray(a)


def conv2d_forward(x, w, stride=1, pad=0):
    return _impl.conv2d_forward(_as_c(x), _as_c(w), stride, pad)


def conv2d_backward(x, w, gy, stride=1, pad=0):
    return _impl.conv2d_backward(_as_c(x), _as_c(w), _as_c(gy), stride, pad)


def bilinear_forward(img, grid):
    return _impl.bilinear_forward(_as_c(img), _as_c(grid))


def bilinear_backward(img, grid, gout):
    return _impl.bilinear_backward(_as_c(img), _as_c(grid), _as_c(gout))
