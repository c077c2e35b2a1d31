"""Hot covariance-assembly kernels.

The compiled Cython module ``_ckernels`` is used when it was built at install
time; otherwise the numpy implementation in ``_pykernels`` is loaded.  Set
``MOGP_LONGEVITY_PURE_PYTHON=1`` to force the fallback.

Both expose the same two functions:

``cov_cross(a1, t1, p1, a2, t2, p2, inv_la, inv_lt, P)``
    ``P[p1[i], p2[j]] * exp(-0.5 * ((a1[i]-a2[j])**2 * inv_la + (t1[i]-t2[j])**2 * inv_lt))``
``cov_sym(a, t, p, inv_la, inv_lt, P)``
    same with both argument sets equal; the result is exactly symmetric.
"""
import os

from . import _pykernels

BACKEND = "numpy"
if os.environ.get("MOGP_LONGEVITY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

cov_cross = _impl.cov_cross
cov_sym = _impl.cov_sym

__all__ = ["BACKEND", "cov_cross", "cov_sym"]
