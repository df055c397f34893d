"""Two-stage virtual try-on: spline warp matching plus guided rendering."""

import os as _os

# CIT_THREADS caps BLAS/worker parallelism; 1 means fully deterministic
# single-thread mode.  Must run before numpy is imported anywhere below.
_n = _os.environ.get("CIT_THREADS", "").strip()
if _n.isdigit() and int(_n) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        _os.environ.setdefault(_var, _n)
del _os, _n

__version__ = "0.1.0"

from . import kernels  # noqa: E402  (selects the compiled or numpy backend)
from .autodiff import Parameter, Tensor, no_grad  # noqa: E402

__all__ = ["Parameter", "Tensor", "no_grad", "kernels", "__version__"]
