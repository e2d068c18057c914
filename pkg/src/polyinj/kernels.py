"""Backend selection for the hot loops.

The compiled extension is used when it imports; ``POLYINJ_PURE=1`` forces the
numpy fallback.  Both backends expose the same functions.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "numpy"
_impl = _fallback
if os.environ.get("POLYINJ_PURE") != "1":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

winding_angle_sums = _impl.winding_angle_sums
polyline_distance = _impl.polyline_distance
bin_weighted = _impl.bin_weighted
assemble_standard_p1 = _impl.assemble_standard_p1

__all__ = ["BACKEND", "winding_angle_sums", "polyline_distance", "bin_weighted", "assemble_standard_p1"]
