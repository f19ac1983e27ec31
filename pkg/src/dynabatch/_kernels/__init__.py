"""Kernel backend selection: compiled Cython core with pure-Python fallback.

Set DYNABATCH_NO_EXT=1 to force the pure-Python backend.
"""

from __future__ import annotations

import os

if os.environ.get("DYNABATCH_NO_EXT"):
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pykernels as _impl

BACKEND: str = _impl.BACKEND

# Discard codes shared by both backends.
CODE_EXCEEDS_MAX_DURATION = -1
CODE_EXCEEDS_TOKEN_BOUND_STRICT = -2
CODE_EXCEEDS_ALL_BUCKETS_FLEXIBLE = -3
CODE_TPS_FILTERED = -4

splitmix64 = _impl.splitmix64
mix2 = _impl.mix2
uniform_below = _impl.uniform_below
allocate_chunk = _impl.allocate_chunk
padding_cells = _impl.padding_cells
sum_range = _impl.sum_range
prefix_duration = _impl.prefix_duration
greedy_bounds = _impl.greedy_bounds
