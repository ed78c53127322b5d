"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_core.pyx``.
Inputs are float64 and C-contiguous; ``_backend`` takes care of that.
"""

import numpy as np

NAME = "numpy"


def constrained_se_gaussian(x, x2, lengthscale, mu, delta_sq, grad=False):
    """Constrained SE gram under N(mu, delta_sq) and its d/dlog(lengthscale)."""
    l2 = lengthscale * lengthscale
    v = l2 + delta_sq
    diff2 = (x[:, None] - x2[None, :]) ** 2
    k = np.exp(-0.5 * diff2 / l2)
    scale = lengthscale * np.sqrt(l2 + 2.0 * delta_sq) / v
    a2 = (x - mu) ** 2
    b2 = (x2 - mu) ** 2
    corr = scale * np.outer(np.exp(-0.5 * a2 / v), np.exp(-0.5 * b2 / v))
    gram = k - corr
    if not grad:
        return gram, None
    dlog_scale = 1.0 + l2 / (l2 + 2.0 * delta_sq) - 2.0 * l2 / v
    dk = k * diff2 / l2
    dcorr = corr * (dlog_scale + (a2[:, None] + b2[None, :]) * (l2 / (v * v)))
    return gram, dk - dcorr


def elementary_symmetric(grams, order):
    """E[l] = e_l(grams[0], ..., grams[D-1]) elementwise, l = 0..order.

    ``grams`` has shape (D, P); the result has shape (order + 1, P).
    """
    power = grams.copy()
    sums = [None]
    for k in range(1, order + 1):
        sums.append(power.sum(axis=0))
        if k < order:
            power *= grams
    E = np.empty((order + 1, grams.shape[1]))
    E[0] = 1.0
    for ell in range(1, order + 1):
        acc = np.zeros(grams.shape[1])
        for k in range(1, ell + 1):
            term = E[ell - k] * sums[k]
            if k % 2:
                acc += term
            else:
                acc -= term
        E[ell] = acc / ell
    return E


def loo_weights(gram_d, E, variances):
    """sum_{l>=1} variances[l] * e_{l-1}(all grams except feature d).

    This is d(sum_l variances[l] E[l]) / d(gram_d), elementwise.
    """
    order = E.shape[0] - 1
    prev = np.ones_like(gram_d)
    out = variances[1] * prev
    for ell in range(1, order):
        prev = E[ell] - gram_d * prev
        out = out + variances[ell + 1] * prev
    return out


def sobol_cross_gaussian(x, lengthscale, mu, delta_sq):
    """int k~(t, x_p) k~(t, x_q) N(t; mu, delta_sq) dt for all pairs (p, q)."""
    l2 = lengthscale * lengthscale
    v = l2 + delta_sq
    a = x[:, None]
    b = x[None, :]
    t1 = (lengthscale / np.sqrt(2.0 * delta_sq + l2)
          * np.exp(-(a - b) ** 2 / (4.0 * l2))
          * np.exp(-((mu - 0.5 * (a + b)) ** 2) / (2.0 * delta_sq + l2)))
    prec = 1.0 / l2 + 1.0 / v
    centre = (mu / v + x / l2) / prec
    offset = (x - mu) ** 2 / (l2 + v)
    left = (lengthscale * np.sqrt(l2 + 2.0 * delta_sq) * np.exp(-0.5 * offset)
            / (v * np.sqrt(delta_sq * prec + 1.0))
            * np.exp(-((centre - mu) ** 2) / (2.0 * (delta_sq + 1.0 / prec))))
    right = np.exp(-((x - mu) ** 2) / (2.0 * v))
    t2 = np.outer(left, right)
    c4 = (l2 * (l2 + 2.0 * delta_sq) * np.sqrt(v)
          / (v * v * np.sqrt(l2 + 3.0 * delta_sq)))
    t4 = c4 * np.outer(right, right)
    return t1 - t2 - t2.T + t4
