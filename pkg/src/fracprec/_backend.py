"""Backend selection for the assembly hot kernels.

Prefers the compiled extension; falls back to the pure numpy reference
implementation when the extension is unavailable.  Setting the
environment variable FRACPREC_BACKEND=reference forces the fallback,
which is useful for benchmarking and debugging.
"""

import os

from . import _ref

__all__ = ["BACKEND", "green_batch", "green_remainder"]

if os.environ.get("FRACPREC_BACKEND", "").lower() == "reference":
    _impl = _ref
    BACKEND = "reference"
else:
    try:
        from . import _core as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _ref
        BACKEND = "reference"

green_batch = _impl.green_batch
green_remainder = _impl.green_remainder
