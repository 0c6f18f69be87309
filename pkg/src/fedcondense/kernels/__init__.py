"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is picked once at import time from the FEDCONDENSE_BACKEND
environment variable: "numba", "numpy", or "auto" (default: numba when it
imports cleanly, numpy otherwise). ``benchmarks/bench_kernels.py`` compares
the two.
"""

from __future__ import annotations

import os

from . import numpy_backend

_choice = os.environ.get("FEDCONDENSE_BACKEND", "auto").strip().lower()

if _choice in ("auto", ""):
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        _impl = numpy_backend
        BACKEND = "numpy"
elif _choice == "numba":
    from . import numba_backend as _impl

    BACKEND = "numba"
elif _choice == "numpy":
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    raise RuntimeError(
        f"FEDCONDENSE_BACKEND={_choice!r} is not one of 'numba', 'numpy', 'auto'"
    )

sparsemax = _impl.sparsemax
entmax15 = _impl.entmax15
top_b_renormalize = _impl.top_b_renormalize
ista_solve = _impl.ista_solve


def get_backend() -> str:
    return BACKEND
