"""Hot kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it was built; set ``DBTUNE_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active implementation.
"""

import os

from . import _split_py

if os.environ.get("DBTUNE_PURE_PYTHON", "") not in ("", "0"):
    best_split = _split_py.best_split
    BACKEND = "python"
else:
    try:
        from ._split import best_split
        BACKEND = "cython"
    except ImportError:
        best_split = _split_py.best_split
        BACKEND = "python"

__all__ = ["best_split", "BACKEND"]
