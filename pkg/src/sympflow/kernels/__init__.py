"""Kernel backend selection.

The compiled Cython kernels are used when the extension was built; otherwise
the pure-NumPy reference implementation is selected. Set SYMPFLOW_PURE_PYTHON=1
to force the fallback regardless of what is installed.
"""

import os

from . import _numpy_backend

_impl = _numpy_backend
if not os.environ.get("SYMPFLOW_PURE_PYTHON"):
    try:
        from . import _cykernels as _impl  # type: ignore[no-redef]
    except ImportError:
        pass

IMPLEMENTATION = _impl.NAME

ACT_TANH = _numpy_backend.ACT_TANH
ACT_SIN = _numpy_backend.ACT_SIN
ACTIVATION_CODES = {"tanh": ACT_TANH, "sin": ACT_SIN}

mlp_forward = _impl.mlp_forward
potential_fused = _impl.potential_fused
potential_fused_backward = _impl.potential_fused_backward
mlp_jvp = _impl.mlp_jvp
mlp_jvp_backward = _impl.mlp_jvp_backward


def available_backends():
    """Name -> module for every importable backend (for tests/benchmarks)."""
    out = {"numpy": _numpy_backend}
    try:
        from . import _cykernels

        out["cython"] = _cykernels
    except ImportError:
        pass
    return out
