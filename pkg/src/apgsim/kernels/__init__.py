"""Hot evaluation kernels with a numba fast path and a numpy fallback.

Set APGSIM_DISABLE_NUMBA=1 to force the pure-numpy implementations (also
used automatically when numba is not importable). The active choice is
exposed as BACKEND; both backends share signatures and semantics, see
benchmarks/bench_kernels.py for a side-by-side timing.
"""

import os

from . import backend_numpy

_disabled = os.environ.get("APGSIM_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

if not _disabled:
    try:
        from . import backend_numba as _impl
        BACKEND = "numba"
    except ImportError:
        _impl = backend_numpy
        BACKEND = "numpy"
else:
    _impl = backend_numpy
    BACKEND = "numpy"

rollout_batch = _impl.rollout_batch
potential_batch = _impl.potential_batch
utility_batch = _impl.utility_batch
collision_penalty_batch = _impl.collision_penalty_batch
penalized_batch = _impl.penalized_batch
dynamics_penalty_batch = _impl.dynamics_penalty_batch

__all__ = [
    "BACKEND",
    "rollout_batch",
    "potential_batch",
    "utility_batch",
    "collision_penalty_batch",
    "penalized_batch",
    "dynamics_penalty_batch",
]
