"""Select the kernel implementation at import time.

The compiled extension is preferred; set ``GDREC_PURE_PYTHON=1`` to force
the numpy fallback (useful for debugging and for the backend benchmark).
"""
import os

from . import _pykernels

BACKEND = "python"
kernels = _pykernels

if os.environ.get("GDREC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as kernels  # noqa: F811

        BACKEND = "compiled"
    except ImportError:  # extension not built
        pass

pair_counts_all = kernels.pair_counts_all
nj_joins = kernels.nj_joins
