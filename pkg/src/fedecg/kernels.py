"""Kernel backend selection.

The compiled Cython module is used when it imports; otherwise (or when
``FEDECG_PURE_PYTHON=1`` is set) the numpy fallback is used.  ``BACKEND``
names the active choice.
"""

from __future__ import annotations

import os

from . import _kernels_py as pure

compiled = None
if os.environ.get("FEDECG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled  # type: ignore[no-redef]
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else pure
BACKEND = "cython" if compiled is not None else "python"

pan_tompkins_pick = _impl.pan_tompkins_pick
best_splits = _impl.best_splits
