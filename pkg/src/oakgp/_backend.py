"""Select the compiled kernel core if it was built, else the numpy fallback.

Set ``OAKGP_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("OAKGP_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _core as _compiled
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _fallback
BACKEND = _impl.NAME
HAS_COMPILED = _compiled is not None


def get(name=None):
    """Return the backend module by name (``"cython"``/``"numpy"``), default active."""
    if name is None:
        return _impl
    if name == "numpy":
        return _fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled core oakgp._core is not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _vec(a):
    return np.ascontiguousarray(a, dtype=np.float64).ravel()


def constrained_se_gaussian(x, x2, lengthscale, mu, delta_sq, grad=False):
    return _impl.constrained_se_gaussian(
        _vec(x), _vec(x2), float(lengthscale), float(mu), float(delta_sq), bool(grad))


def elementary_symmetric(grams, order):
    """Elementary symmetric polynomials over the leading axis of ``grams``."""
    grams = np.asarray(grams, dtype=np.float64)
    tail = grams.shape[1:]
    flat = np.ascontiguousarray(grams.reshape(grams.shape[0], -1))
    return _impl.elementary_symmetric(flat, int(order)).reshape((order + 1,) + tail)


def loo_weights(gram_d, E, variances):
    gram_d = np.asarray(gram_d, dtype=np.float64)
    flatE = np.ascontiguousarray(np.asarray(E, dtype=np.float64).reshape(E.shape[0], -1))
    out = _impl.loo_weights(_vec(gram_d), flatE, _vec(variances))
    return out.reshape(gram_d.shape)


def sobol_cross_gaussian(x, lengthscale, mu, delta_sq):
    return _impl.sobol_cross_gaussian(_vec(x), float(lengthscale), float(mu), float(delta_sq))
