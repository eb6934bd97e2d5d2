"""Hot point-cloud kernels with a numba fast path and a NumPy fallback.

Set ``SCENEALIGN_NUMBA=0`` to force the pure-NumPy implementations (useful
for debugging and as the baseline in ``benchmarks/bench_kernels.py``). Both
paths produce identical results; see tests/test_kernels.py.
"""

import os

from . import _numpy_impl

_flag = os.environ.get("SCENEALIGN_NUMBA", "1") != "0"
if _flag:
    try:
        from . import _numba_impl as _impl

        NUMBA_ENABLED = True
    except ImportError:  # numba missing or broken: degrade silently
        _impl = _numpy_impl
        NUMBA_ENABLED = False
else:
    _impl = _numpy_impl
    NUMBA_ENABLED = False

farthest_point_indices = _impl.farthest_point_indices
ball_knn = _impl.ball_knn
splat_zbuffer = _impl.splat_zbuffer


def numba_enabled() -> bool:
    """True when the numba fast path is active."""
    return NUMBA_ENABLED
