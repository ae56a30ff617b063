"""Selects the kernel backend at import time.

The compiled extension is preferred when it imported cleanly; the
pure-Python module is the fallback.  Set ``DEPAUDIT_PURE=1`` to force the
pure lane (used by the cross-check tests and the benchmark).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("DEPAUDIT_PURE"):
    _backend = _kernels_py
else:
    try:
        from . import _speedups as _backend  # type: ignore[no-redef]
    except ImportError:
        _backend = _kernels_py

segment_version = _backend.segment_version
bfs_depths = _backend.bfs_depths


def backend_name() -> str:
    """'compiled' when the Cython kernels are active, else 'pure'."""
    return "pure" if _backend is _kernels_py else "compiled"
