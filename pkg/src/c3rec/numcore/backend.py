"""Kernel backend selection.

Prefers the compiled extension when it imported cleanly; falls back to the
NumPy implementations otherwise. Set C3REC_PURE_PYTHON=1 to force the
fallback (used by the benchmark and the cross-backend tests).
"""

import os

from . import kernels_np

if os.environ.get("C3REC_PURE_PYTHON"):
    kernels = kernels_np
else:
    try:
        from . import _fastkernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = kernels_np


def backend_name() -> str:
    return kernels.BACKEND_NAME
