"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``SINKFLOW_PURE_PYTHON`` is set to a non-empty value,
the numpy fallback is used. Both expose the same functions.
"""
import os

from . import _fallback as fallback

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and not os.environ.get("SINKFLOW_PURE_PYTHON"):
    backend = compiled
    BACKEND = "cython"
else:
    backend = fallback
    BACKEND = "python"

dual_recursion = backend.dual_recursion
interp_bilinear = backend.interp_bilinear
mixture_logpdf = backend.mixture_logpdf
log_y_marginal = backend.log_y_marginal
