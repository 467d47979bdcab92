"""Hot-loop kernels with a compiled core and a pure numpy fallback.

The Cython extension ``_native`` is tried first; if it is missing (no
compiler at install time) or the environment variable ``WARMFLOW_PURE`` is
set to a non-empty value, the numpy implementations in ``_pure`` are used.
Both expose the same functions with identical semantics.

``benchmarks/kernel_bench.py`` at the repository root compares the two.
"""

from __future__ import annotations

import os

from . import _pure

if os.environ.get("WARMFLOW_PURE"):
    _impl = _pure
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND
KIND_PQ = _pure.KIND_PQ
KIND_PV = _pure.KIND_PV
KIND_SLACK = _pure.KIND_SLACK

newton_fill = _impl.newton_fill
scatter_system = _impl.scatter_system
gather_grads = _impl.gather_grads


def backend_name() -> str:
    """Name of the selected implementation: "native" or "pure"."""
    return BACKEND
