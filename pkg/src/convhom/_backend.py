"""Select the compiled kernels when available, else the numpy fallback.

Set ``CONVHOM_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _fallback

if os.environ.get("CONVHOM_PURE_PYTHON") == "1":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"


def _resolve(impl):
    """``None`` (active backend), a module, or one of ``"python"``, ``"cython"``."""
    if impl is None:
        return _impl
    if impl == "python":
        return _fallback
    if impl == "cython":
        from . import _core

        return _core
    return impl


def _idx(a):
    return np.ascontiguousarray(a, dtype=np.intc)


def _dbl(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pair_energy(i, j, w, u, impl=None):
    impl = _resolve(impl)
    return float(impl.pair_energy(_idx(i), _idx(j), _dbl(w), _dbl(u)))


def pcg(op, b, x, inv_diag, tol, max_iter, impl=None):
    """Run PCG on a :class:`~convhom.solver.PairOperator`; ``x`` is updated in place."""
    impl = _resolve(impl)
    it, rnorm = impl.pcg(
        _idx(op.i), _idx(op.j), _dbl(op.w), _dbl(op.diag),
        _dbl(b), x, _dbl(inv_diag), float(tol), int(max_iter),
    )
    return int(it), float(rnorm)
