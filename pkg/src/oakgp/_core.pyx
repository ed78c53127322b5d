# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.  Signatures mirror ``oakgp._fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

NAME = "cython"


def constrained_se_gaussian(const double[::1] x, const double[::1] x2,
                            double lengthscale, double mu, double delta_sq,
                            bint grad=False):
    cdef Py_ssize_t n = x.shape[0], m = x2.shape[0], i, j
    cdef double l2 = lengthscale * lengthscale
    cdef double v = l2 + delta_sq
    cdef double scale = lengthscale * sqrt(l2 + 2.0 * delta_sq) / v
    cdef double dlog_scale = 1.0 + l2 / (l2 + 2.0 * delta_sq) - 2.0 * l2 / v
    cdef double w = l2 / (v * v)
    cdef double d, d2, k, corr, ai
    cdef double[::1] ea = np.empty(n), eb = np.empty(m)
    cdef double[::1] a2 = np.empty(n), b2 = np.empty(m)
    out = np.empty((n, m))
    cdef double[:, ::1] K = out
    cdef double[:, ::1] dK
    for i in range(n):
        a2[i] = (x[i] - mu) * (x[i] - mu)
        ea[i] = exp(-0.5 * a2[i] / v)
    for j in range(m):
        b2[j] = (x2[j] - mu) * (x2[j] - mu)
        eb[j] = exp(-0.5 * b2[j] / v)
    if not grad:
        for i in range(n):
            ai = scale * ea[i]
            for j in range(m):
                d = x[i] - x2[j]
                K[i, j] = exp(-0.5 * d * d / l2) - ai * eb[j]
        return out, None
    dout = np.empty((n, m))
    dK = dout
    for i in range(n):
        ai = scale * ea[i]
        for j in range(m):
            d = x[i] - x2[j]
            d2 = d * d
            k = exp(-0.5 * d2 / l2)
            corr = ai * eb[j]
            K[i, j] = k - corr
            dK[i, j] = k * d2 / l2 - corr * (dlog_scale + (a2[i] + b2[j]) * w)
    return out, dout


def elementary_symmetric(const double[:, ::1] grams, int order):
    cdef Py_ssize_t D = grams.shape[0], P = grams.shape[1], p, d
    cdef int ell, k
    cdef double acc, g, pw
    out = np.empty((order + 1, P))
    cdef double[:, ::1] E = out
    cdef double[::1] sums = np.empty(order + 1)
    for p in range(P):
        for k in range(1, order + 1):
            sums[k] = 0.0
        for d in range(D):
            g = grams[d, p]
            pw = g
            for k in range(1, order + 1):
                sums[k] += pw
                pw *= g
        E[0, p] = 1.0
        for ell in range(1, order + 1):
            acc = 0.0
            for k in range(1, ell + 1):
                if k % 2:
                    acc += E[ell - k, p] * sums[k]
                else:
                    acc -= E[ell - k, p] * sums[k]
            E[ell, p] = acc / ell
    return out


def loo_weights(const double[::1] gram_d, const double[:, ::1] E,
                const double[::1] variances):
    cdef Py_ssize_t P = gram_d.shape[0], p
    cdef int order = E.shape[0] - 1, ell
    cdef double prev, acc
    out = np.empty(P)
    cdef double[::1] o = out
    for p in range(P):
        prev = 1.0
        acc = variances[1]
        for ell in range(1, order):
            prev = E[ell, p] - gram_d[p] * prev
            acc += variances[ell + 1] * prev
        o[p] = acc
    return out


def sobol_cross_gaussian(const double[::1] x, double lengthscale, double mu,
                         double delta_sq):
    cdef Py_ssize_t n = x.shape[0], p, q
    cdef double l2 = lengthscale * lengthscale
    cdef double v = l2 + delta_sq
    cdef double c1 = lengthscale / sqrt(2.0 * delta_sq + l2)
    cdef double den1 = 2.0 * delta_sq + l2
    cdef double prec = 1.0 / l2 + 1.0 / v
    cdef double c2 = (lengthscale * sqrt(l2 + 2.0 * delta_sq)
                      / (v * sqrt(delta_sq * prec + 1.0)))
    cdef double c4 = (l2 * (l2 + 2.0 * delta_sq) * sqrt(v)
                      / (v * v * sqrt(l2 + 3.0 * delta_sq)))
    cdef double centre, d, mid
    cdef double[::1] left = np.empty(n), right = np.empty(n)
    out = np.empty((n, n))
    cdef double[:, ::1] C = out
    for p in range(n):
        centre = (mu / v + x[p] / l2) / prec
        left[p] = (c2 * exp(-0.5 * (x[p] - mu) * (x[p] - mu) / (l2 + v))
                   * exp(-(centre - mu) * (centre - mu)
                         / (2.0 * (delta_sq + 1.0 / prec))))
        right[p] = exp(-(x[p] - mu) * (x[p] - mu) / (2.0 * v))
    for p in range(n):
        for q in range(p, n):
            d = x[p] - x[q]
            mid = mu - 0.5 * (x[p] + x[q])
            C[p, q] = (c1 * exp(-d * d / (4.0 * l2)) * exp(-mid * mid / den1)
                       - left[p] * right[q] - left[q] * right[p]
                       + c4 * right[p] * right[q])
            C[q, p] = C[p, q]
    return out
