"""Hot-loop kernels, compiled when available.

The Cython extension ``_ckernels`` is used if it was built; otherwise the
pure-Python ``_pykernels`` twin is used. Set ``BINSIM_PURE_PYTHON=1`` to
force the fallback. Both produce bit-identical results.
"""

import os

from . import _pykernels as python

compiled = None
if os.environ.get("BINSIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

active = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

sgns_epoch = active.sgns_epoch
brandes = active.brandes

__all__ = ["BACKEND", "brandes", "compiled", "python", "sgns_epoch"]
