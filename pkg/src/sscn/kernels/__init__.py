"""Hot inner loops with a compiled backend and a pure-Python fallback.

The Cython extension ``_ckernels`` is used when it was built at install
time. Setting ``SSCN_PURE_PYTHON=1`` before import forces the fallback.
Both backends take C-contiguous float64/int64 arrays; the wrappers below
normalize inputs so callers can pass any array-like.
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("SSCN_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure Python kernels requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

BACKENDS = {"python": _pykernels}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def block_energies(h, k, q, impl=None):
    return (impl or _impl).block_energies(_f64(h), int(k), int(q))


def projection_distances(h, k, q, impl=None):
    return (impl or _impl).projection_distances(_f64(h), int(k), int(q))


def softmin_xent(h, targets, k, q, impl=None):
    return (impl or _impl).softmin_xent(_f64(h), _i64(targets), int(k), int(q))


def lloyd_assign(points, centers, impl=None):
    return (impl or _impl).lloyd_assign(_f64(points), _f64(centers))


def hungarian(cost, impl=None):
    return (impl or _impl).hungarian(_f64(cost))


def contingency(a, b, ka, kb, impl=None):
    return (impl or _impl).contingency(_i64(a), _i64(b), int(ka), int(kb))
