"""Base kernels, their measure-constrained variants, and OAK composition.

A constrained kernel k~ is the covariance of a GP conditioned on integrating
to zero against the feature's input measure.  Per-feature constrained grams
are combined over all interaction orders with Newton-Girard recursions.

Every feature kernel exposes the same small surface used by the GP layer:

``params`` / ``with_params(theta)``
    unconstrained parameter vector (log lengthscale, ...)
``gram(x, x2)`` / ``diag(x)``
    constrained gram and its diagonal
``gram_and_jac(x)``
    training gram plus an object whose ``contract(G)`` returns
    ``sum(G * dK/dtheta_j)`` for every parameter j
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _backend
from .errors import ConfigError, NumericalError
from .measures import (
    CategoricalMeasure,
    EmpiricalMeasure,
    GaussianMeasure,
    MixtureMeasure,
)

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class SeKernel:
    lengthscale: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ConfigError("SeKernel: lengthscale must be positive")

    def __call__(self, x, y):
        return se_eval(self, x, y)


def se_eval(k: SeKernel, x, y):
    """Unit-variance squared exponential exp(-(x-y)^2 / 2l^2), elementwise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ConfigError("se_eval: non-finite input")
    out = np.exp(-0.5 * (x - y) ** 2 / k.lengthscale ** 2)
    return out if out.ndim else float(out)


def _se_matrix(x, x2, lengthscale):
    return np.exp(-0.5 * (np.subtract.outer(x, x2) / lengthscale) ** 2)


# -- scalar / elementwise constrained kernels ------------------------------

def constrained_se_gaussian(lengthscale, m: GaussianMeasure, x, y):
    """Constrained SE under a Gaussian input measure (closed form)."""
    l2 = lengthscale ** 2
    v = l2 + m.delta_sq
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = (np.exp(-0.5 * (x - y) ** 2 / l2)
           - lengthscale * np.sqrt(l2 + 2.0 * m.delta_sq) / v
           * np.exp(-((x - m.mu) ** 2 + (y - m.mu) ** 2) / (2.0 * v)))
    return out if out.ndim else float(out)


def _mixture_mean_embedding(lengthscale, m: MixtureMeasure, x):
    """E[S f(x)] = sum_k w_k l N(x | mu_k, delta_k + l^2) sqrt(2 pi)."""
    x = np.asarray(x, dtype=float)
    w, mu, dv = (np.asarray(a) for a in (m.weights, m.means, m.variances))
    v = dv + lengthscale ** 2
    dens = np.exp(-0.5 * (x[..., None] - mu) ** 2 / v) / np.sqrt(2.0 * np.pi * v)
    return (lengthscale * _SQRT_2PI * dens) @ w


def _mixture_total_variance(lengthscale, m: MixtureMeasure):
    """E[S^2] = sum_ij w_i w_j l N(mu_i | mu_j, l^2 + delta_i + delta_j) sqrt(2 pi)."""
    w, mu, dv = (np.asarray(a) for a in (m.weights, m.means, m.variances))
    V = lengthscale ** 2 + dv[:, None] + dv[None, :]
    dens = np.exp(-0.5 * (mu[:, None] - mu[None, :]) ** 2 / V) / np.sqrt(2.0 * np.pi * V)
    s = float(w @ (lengthscale * _SQRT_2PI * dens) @ w)
    if not s > 0:
        raise NumericalError(f"mixture constrained kernel: E[S^2] = {s!r} is not positive")
    return s


def constrained_se_mixture(lengthscale, m: MixtureMeasure, x, y):
    """Constrained SE under a mixture-of-Gaussians input measure."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = _mixture_total_variance(lengthscale, m)
    out = (np.exp(-0.5 * (x - y) ** 2 / lengthscale ** 2)
           - _mixture_mean_embedding(lengthscale, m, x)
           * _mixture_mean_embedding(lengthscale, m, y) / s)
    return out if out.ndim else float(out)


def constrained_empirical(base_eval: Callable, m: EmpiricalMeasure, x, y):
    """Constrained version of ``base_eval`` under a discrete (empirical) measure.

    ``base_eval(a, b)`` must broadcast elementwise.
    """
    loc = np.asarray(m.locations)
    w = np.asarray(m.weights)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = float(w @ base_eval(loc[:, None], loc[None, :]) @ w)
    if not s > 0:
        raise NumericalError(
            f"empirical constrained kernel: sum_ij w_i w_j k(x_i, x_j) = {s!r} is not positive")
    hx = base_eval(x[..., None], loc) @ w
    hy = base_eval(y[..., None], loc) @ w
    out = base_eval(x, y) - hx * hy / s
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class CategoricalKernel:
    """k(i, j) = A[i, j] with A = W W^T + diag(kappa)."""

    W: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        kappa = np.asarray(self.kappa, dtype=float).ravel()
        if W.shape[0] != kappa.size:
            raise ConfigError("CategoricalKernel: W rows must match len(kappa)")
        if np.any(kappa < 0) or not np.all(np.isfinite(W)) or not np.all(np.isfinite(kappa)):
            raise ConfigError("CategoricalKernel: kappa must be nonnegative and W finite")
        W.setflags(write=False)
        kappa.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "kappa", kappa)

    @property
    def A(self):
        return self.W @ self.W.T + np.diag(self.kappa)


def constrained_categorical(k: CategoricalKernel, m: CategoricalMeasure):
    """B = A - (A w)(A w)^T / (w^T A w); satisfies B w = 0."""
    A = k.A
    w = np.asarray(m.probabilities)
    if A.shape[0] != w.size:
        raise ConfigError("constrained_categorical: kernel and measure level counts differ")
    Aw = A @ w
    s = float(w @ Aw)
    if not s > 0:
        raise NumericalError(f"constrained categorical kernel: w^T A w = {s!r} is not positive")
    B = A - np.outer(Aw, Aw) / s
    return 0.5 * (B + B.T)


# -- feature kernels used by the GP ----------------------------------------

class _DenseJac:
    def __init__(self, mats):
        self.mats = mats

    def contract(self, G):
        return np.array([np.sum(G * M) for M in self.mats])


def _correction_grad(k, dk, h1, dh1, h2, dh2, s, ds):
    """d/dtheta of k - h1 h2^T / s given the pieces and their derivatives."""
    return (dk - (np.outer(dh1, h2) + np.outer(h1, dh2)) / s
            + np.outer(h1, h2) * (ds / (s * s)))


@dataclass(frozen=True)
class ConstrainedSE:
    """Constrained squared exponential for one continuous feature.

    ``measure`` is a GaussianMeasure, MixtureMeasure or EmpiricalMeasure over
    the (flow-transformed) feature.
    """

    lengthscale: float
    measure: object = field(default_factory=GaussianMeasure)

    def __post_init__(self):
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ConfigError("ConstrainedSE: lengthscale must be positive")
        if not isinstance(self.measure, (GaussianMeasure, MixtureMeasure, EmpiricalMeasure)):
            raise ConfigError(f"ConstrainedSE: unsupported measure {type(self.measure).__name__}")

    kind = "continuous"

    @property
    def params(self):
        return np.array([np.log(self.lengthscale)])

    def with_params(self, theta):
        return ConstrainedSE(float(np.exp(theta[0])), self.measure)

    def pointwise(self, x, y):
        m = self.measure
        if isinstance(m, GaussianMeasure):
            return constrained_se_gaussian(self.lengthscale, m, x, y)
        if isinstance(m, MixtureMeasure):
            return constrained_se_mixture(self.lengthscale, m, x, y)
        return constrained_empirical(SeKernel(self.lengthscale), m, x, y)

    # pieces of the rank-one correction h(x) h(y)^T / s and their d/dlog l
    def _correction(self, x, grad):
        l = self.lengthscale
        m = self.measure
        if isinstance(m, MixtureMeasure):
            mu = np.asarray(m.means)
            w = np.asarray(m.weights)
            v = np.asarray(m.variances) + l * l
            terms = w * l / np.sqrt(v) * np.exp(-0.5 * (x[:, None] - mu) ** 2 / v)
            h = terms.sum(axis=1)
            s = _mixture_total_variance(l, m)
            if not grad:
                return h, None, s, None
            dh = (terms * (1.0 - l * l / v + (x[:, None] - mu) ** 2 * l * l / v ** 2)).sum(axis=1)
            dv = np.asarray(m.variances)
            V = l * l + dv[:, None] + dv[None, :]
            d2 = (mu[:, None] - mu[None, :]) ** 2
            S = np.outer(w, w) * l / np.sqrt(V) * np.exp(-0.5 * d2 / V)
            ds = float(np.sum(S * (1.0 - l * l / V + d2 * l * l / V ** 2)))
            return h, dh, s, ds
        loc = np.asarray(m.locations)
        w = np.asarray(m.weights)
        kx = _se_matrix(x, loc, l)
        h = kx @ w
        kll = _se_matrix(loc, loc, l)
        s = float(w @ kll @ w)
        if not s > 0:
            raise NumericalError(f"empirical constrained kernel: w^T K w = {s!r} is not positive")
        if not grad:
            return h, None, s, None
        dh = (kx * (np.subtract.outer(x, loc) / l) ** 2) @ w
        ds = float(w @ (kll * (np.subtract.outer(loc, loc) / l) ** 2) @ w)
        return h, dh, s, ds

    def gram(self, x, x2=None):
        x = np.asarray(x, dtype=float)
        x2 = x if x2 is None else np.asarray(x2, dtype=float)
        m = self.measure
        if isinstance(m, GaussianMeasure):
            return _backend.constrained_se_gaussian(x, x2, self.lengthscale, m.mu, m.delta_sq)[0]
        h1, _, s, _ = self._correction(x, False)
        h2 = h1 if x2 is x else self._correction(x2, False)[0]
        return _se_matrix(x, x2, self.lengthscale) - np.outer(h1, h2) / s

    def diag(self, x):
        x = np.asarray(x, dtype=float)
        m = self.measure
        if isinstance(m, GaussianMeasure):
            return np.asarray(self.pointwise(x, x), dtype=float)
        h, _, s, _ = self._correction(x, False)
        return 1.0 - h * h / s

    def gram_and_jac(self, x):
        x = np.asarray(x, dtype=float)
        m = self.measure
        if isinstance(m, GaussianMeasure):
            K, dK = _backend.constrained_se_gaussian(x, x, self.lengthscale, m.mu, m.delta_sq,
                                                     grad=True)
            return K, _DenseJac([dK])
        l = self.lengthscale
        k = _se_matrix(x, x, l)
        dk = k * (np.subtract.outer(x, x) / l) ** 2
        h, dh, s, ds = self._correction(x, True)
        K = k - np.outer(h, h) / s
        return K, _DenseJac([_correction_grad(k, dk, h, dh, h, dh, s, ds)])

    def to_dict(self):
        return {"kind": "se", "lengthscale": float(self.lengthscale),
                "measure": self.measure.to_dict()}


class _CategoricalJac:
    def __init__(self, codes, n_levels, dBs):
        self.codes = codes
        self.n_levels = n_levels
        self.dBs = dBs

    def contract(self, G):
        onehot = np.zeros((self.codes.size, self.n_levels))
        onehot[np.arange(self.codes.size), self.codes] = 1.0
        agg = onehot.T @ G @ onehot
        return np.array([np.sum(agg * dB) for dB in self.dBs])


def _as_codes(x, n_levels):
    x = np.asarray(x, dtype=float)
    codes = np.rint(x).astype(int)
    if np.any(np.abs(x - codes) > 0) or np.any(codes < 0) or np.any(codes >= n_levels):
        bad = x[(np.abs(x - codes) > 0) | (codes < 0) | (codes >= n_levels)]
        raise ConfigError(f"categorical level index out of range [0, {n_levels}): {bad[:5]}")
    return codes


@dataclass(frozen=True)
class ConstrainedCategorical:
    """Constrained categorical kernel for one feature with integer level codes."""

    kernel: CategoricalKernel
    measure: CategoricalMeasure

    kind = "categorical"

    def __post_init__(self):
        if self.kernel.A.shape[0] != self.measure.n_levels:
            raise ConfigError("ConstrainedCategorical: kernel and measure level counts differ")

    @property
    def n_levels(self):
        return self.measure.n_levels

    @property
    def B(self):
        return constrained_categorical(self.kernel, self.measure)

    @property
    def params(self):
        return np.concatenate([self.kernel.W.ravel(), np.log(self.kernel.kappa)])

    def with_params(self, theta):
        M, R = self.kernel.W.shape
        W = np.asarray(theta[: M * R]).reshape(M, R)
        kappa = np.exp(np.asarray(theta[M * R:]))
        return ConstrainedCategorical(CategoricalKernel(W, kappa), self.measure)

    def pointwise(self, x, y):
        B = self.B
        out = B[_as_codes(x, self.n_levels), _as_codes(y, self.n_levels)]
        return out if np.ndim(out) else float(out)

    def gram(self, x, x2=None):
        B = self.B
        c1 = _as_codes(x, self.n_levels)
        c2 = c1 if x2 is None else _as_codes(x2, self.n_levels)
        return B[np.ix_(c1, c2)]

    def diag(self, x):
        return np.diag(self.B)[_as_codes(x, self.n_levels)]

    def level_jacobians(self):
        """dB/dtheta for every parameter (W entries, then log kappa)."""
        W, kappa = self.kernel.W, self.kernel.kappa
        M, R = W.shape
        A = self.kernel.A
        w = np.asarray(self.measure.probabilities)
        v = A @ w
        s = float(w @ v)
        out = []

        def dB(dA):
            dv = dA @ w
            ds = float(w @ dv)
            return dA - (np.outer(dv, v) + np.outer(v, dv)) / s + np.outer(v, v) * ds / s ** 2

        for a in range(M):
            for r in range(R):
                dA = np.zeros((M, M))
                dA[a, :] += W[:, r]
                dA[:, a] += W[:, r]
                out.append(dB(dA))
        for a in range(M):
            dA = np.zeros((M, M))
            dA[a, a] = kappa[a]
            out.append(dB(dA))
        return out

    def gram_and_jac(self, x):
        codes = _as_codes(x, self.n_levels)
        return self.gram(x), _CategoricalJac(codes, self.n_levels, self.level_jacobians())

    def to_dict(self):
        return {"kind": "categorical", "W": self.kernel.W.tolist(),
                "kappa": self.kernel.kappa.tolist(), "measure": self.measure.to_dict()}


def feature_kernel_from_dict(d):
    from .measures import measure_from_dict

    if d["kind"] == "se":
        return ConstrainedSE(float(d["lengthscale"]), measure_from_dict(d["measure"]))
    if d["kind"] == "categorical":
        return ConstrainedCategorical(CategoricalKernel(np.array(d["W"], dtype=float),
                                                        np.array(d["kappa"], dtype=float)),
                                      measure_from_dict(d["measure"]))
    raise ConfigError(f"unknown feature kernel kind {d['kind']!r}")


# -- composition -----------------------------------------------------------

@dataclass(frozen=True)
class OakHyperparams:
    """Per-feature kernels plus order variances sigma_0^2..sigma_Dt^2 and noise."""

    kernels: tuple
    order_variances: tuple
    noise_variance: float
    max_order: int

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        ov = tuple(float(v) for v in self.order_variances)
        object.__setattr__(self, "order_variances", ov)
        D = len(self.kernels)
        if D < 1:
            raise ConfigError("OakHyperparams: need at least one feature")
        if not 1 <= self.max_order <= D:
            raise ConfigError(f"truncation order {self.max_order} must lie in [1, {D}]")
        if len(ov) != self.max_order + 1:
            raise ConfigError("OakHyperparams: need one variance per order 0..max_order")
        if any(not (np.isfinite(v) and v >= 0) for v in ov):
            raise ConfigError("OakHyperparams: order variances must be finite and >= 0")
        if not (np.isfinite(self.noise_variance) and self.noise_variance > 0):
            raise ConfigError("OakHyperparams: noise variance must be positive")

    @property
    def n_features(self):
        return len(self.kernels)


def _check_grams(grams):
    grams = [np.asarray(g, dtype=float) for g in grams]
    if not grams:
        raise ConfigError("need at least one per-feature gram")
    shape = grams[0].shape
    for g in grams[1:]:
        if g.shape != shape:
            raise ConfigError(f"per-feature grams differ in shape: {shape} vs {g.shape}")
    return np.stack(grams)


def newton_girard_gram(per_feature_grams, order_variances):
    """sum_l sigma_l^2 e_l(K_1, ..., K_D) with elementwise products.

    ``order_variances`` has length Dt + 1; e_l is built from power sums by
    the Newton-Girard recursion.
    """
    grams = _check_grams(per_feature_grams)
    order = len(order_variances) - 1
    if not 0 <= order <= grams.shape[0]:
        raise ConfigError(f"truncation order {order} exceeds feature count {grams.shape[0]}")
    E = _backend.elementary_symmetric(grams, order)
    return np.tensordot(np.asarray(order_variances, dtype=float), E, axes=1)


def product_form_gram(per_feature_grams, variance):
    """variance * prod_d (1 + K_d); equals the full-order additive kernel."""
    grams = _check_grams(per_feature_grams)
    return variance * np.prod(1.0 + grams, axis=0)


def _check_X(X, D):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if D == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != D:
        raise ConfigError(f"expected {D} feature columns, got array of shape {X.shape}")
    return X


def feature_grams(kernels, X, X2=None):
    D = len(kernels)
    X = _check_X(X, D)
    if X2 is None:
        return np.stack([k.gram(X[:, d]) for d, k in enumerate(kernels)])
    X2 = _check_X(X2, D)
    return np.stack([k.gram(X[:, d], X2[:, d]) for d, k in enumerate(kernels)])


def oak_gram(X, X2, hp: OakHyperparams):
    """Full OAK covariance between (transformed) inputs X and X2."""
    return newton_girard_gram(feature_grams(hp.kernels, X, X2), hp.order_variances)


def oak_diag(X, hp: OakHyperparams):
    X = _check_X(X, hp.n_features)
    diags = np.stack([k.diag(X[:, d]) for d, k in enumerate(hp.kernels)])
    return newton_girard_gram(diags, hp.order_variances)
