"""Independent reference computations shared by the test modules.

Nothing here calls into oakgp; every function re-derives its quantity from
first principles (quadrature, enumeration, or a direct formula).
"""

from itertools import combinations

import numpy as np
from numpy.polynomial.hermite_e import hermegauss


def gauss_expect(f, mu, var, nodes=64):
    """E[f(X)] for X ~ N(mu, var) by probabilists' Gauss-Hermite quadrature."""
    t, w = hermegauss(nodes)
    x = mu + np.sqrt(var) * t
    return np.tensordot(w / np.sqrt(2.0 * np.pi), f(x), axes=(0, 0))


def mixture_expect(f, weights, means, variances, nodes=64):
    return sum(w * gauss_expect(f, m, v, nodes) for w, m, v in zip(weights, means, variances))


def se(x, y, l):
    return np.exp(-0.5 * (np.subtract.outer(x, y) / l) ** 2)


def brute_force_additive(grams, variances):
    """sum over subsets |u| <= len(variances) - 1 of sigma_|u|^2 prod_{i in u} K_i."""
    grams = np.asarray(grams)
    out = variances[0] * np.ones(grams.shape[1:])
    for d in range(1, len(variances)):
        for u in combinations(range(grams.shape[0]), d):
            out = out + variances[d] * np.prod(grams[list(u)], axis=0)
    return out


def random_psd(rng, n, rank=None):
    rank = rank or n
    A = rng.standard_normal((n, rank))
    return A @ A.T / rank
