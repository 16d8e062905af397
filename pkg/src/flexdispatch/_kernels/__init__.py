"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy reference
implementation is the fallback. ``FLEXDISPATCH_BACKEND=python`` forces the
fallback, ``FLEXDISPATCH_BACKEND=compiled`` makes a missing extension a
hard error (useful in CI).
"""

import os

_requested = os.environ.get("FLEXDISPATCH_BACKEND", "").strip().lower()
if _requested not in ("", "compiled", "python"):
    raise RuntimeError(f"FLEXDISPATCH_BACKEND must be 'compiled' or 'python', got {_requested!r}")

if _requested == "python":
    from . import pure as _impl

    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        from . import pure as _impl

        BACKEND = "python"

backward_column = _impl.backward_column
kl_backward = _impl.kl_backward
boxqp_pen = _impl.boxqp_pen

__all__ = ["BACKEND", "backward_column", "kl_backward", "boxqp_pen"]
