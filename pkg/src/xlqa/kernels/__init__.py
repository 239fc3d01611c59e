"""Hot inner loops, compiled when the Cython extension is built.

Set ``XLQA_PURE_PYTHON=1`` to force the pure-Python implementations.
"""
import os

from . import _pykernels as python

compiled = None
if os.environ.get("XLQA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

ibm1_estep = _impl.ibm1_estep
best_span = _impl.best_span

__all__ = ["BACKEND", "best_span", "compiled", "ibm1_estep", "python"]
