"""Backend selection for the per-batch kernels.

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy implementation in ``_kernels_py`` is used. Setting the environment
variable ``UNIDEAL_PURE_PYTHON=1`` forces the numpy backend.
"""

from __future__ import annotations

import os

from . import _kernels_py

_force_python = os.environ.get("UNIDEAL_PURE_PYTHON", "").strip().lower() in {"1", "true", "yes"}

if _force_python:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

COSINE = _kernels_py.COSINE
INV_L1 = _kernels_py.INV_L1
INV_L2 = _kernels_py.INV_L2
KL_FLOOR = _kernels_py.KL_FLOOR

softmax_rows = _impl.softmax_rows
row_kl = _impl.row_kl
cross_entropy = _impl.cross_entropy
mutual_scores = _impl.mutual_scores
masked_kl = _impl.masked_kl


def compiled_available() -> bool:
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True


def backend_module(name: str):
    """Return the kernel module for ``name`` ("cython" or "python")."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
