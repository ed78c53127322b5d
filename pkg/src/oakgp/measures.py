"""Input measures and the per-feature sinh-arcsinh normalizing flow.

Continuous features are pushed through a monotone flow toward N(0, 1) before
any kernel is built; the constrained kernels then integrate against the
measure of the transformed feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import ConfigError, DataError

_WEIGHT_TOL = 1e-12


def _check_weights(w, what):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ConfigError(f"{what}: need a non-empty 1-d weight vector")
    if np.any(~np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
        raise ConfigError(f"{what}: weights must lie in [0, 1]")
    if abs(w.sum() - 1.0) > _WEIGHT_TOL:
        raise ConfigError(f"{what}: weights sum to {w.sum()!r}, not 1")
    return w


@dataclass(frozen=True)
class GaussianMeasure:
    mu: float = 0.0
    delta_sq: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise ConfigError("GaussianMeasure: mu must be finite")
        if not (np.isfinite(self.delta_sq) and self.delta_sq > 0):
            raise ConfigError("GaussianMeasure: delta_sq must be positive")

    def sample(self, rng, size):
        return self.mu + np.sqrt(self.delta_sq) * rng.standard_normal(size)

    def to_dict(self):
        return {"type": "gaussian", "mu": float(self.mu), "delta_sq": float(self.delta_sq)}


@dataclass(frozen=True)
class MixtureMeasure:
    """Mixture of Gaussians; ``variances`` are per-component variances."""

    weights: tuple
    means: tuple
    variances: tuple

    def __post_init__(self):
        w = _check_weights(self.weights, "MixtureMeasure")
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if m.shape != w.shape or v.shape != w.shape:
            raise ConfigError("MixtureMeasure: weights, means and variances differ in length")
        if np.any(~np.isfinite(m)) or np.any(~(v > 0)) or np.any(~np.isfinite(v)):
            raise ConfigError("MixtureMeasure: means must be finite and variances positive")
        object.__setattr__(self, "weights", tuple(float(a) for a in w))
        object.__setattr__(self, "means", tuple(float(a) for a in m))
        object.__setattr__(self, "variances", tuple(float(a) for a in v))

    def sample(self, rng, size):
        comp = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
        return (np.asarray(self.means)[comp]
                + np.sqrt(np.asarray(self.variances))[comp] * rng.standard_normal(size))

    def to_dict(self):
        return {"type": "mixture", "weights": list(self.weights),
                "means": list(self.means), "variances": list(self.variances)}


@dataclass(frozen=True)
class EmpiricalMeasure:
    locations: tuple
    weights: tuple

    def __post_init__(self):
        w = _check_weights(self.weights, "EmpiricalMeasure")
        x = np.asarray(self.locations, dtype=float)
        if x.shape != w.shape:
            raise ConfigError("EmpiricalMeasure: locations and weights differ in length")
        if np.any(~np.isfinite(x)):
            raise ConfigError("EmpiricalMeasure: locations must be finite")
        object.__setattr__(self, "locations", tuple(float(a) for a in x))
        object.__setattr__(self, "weights", tuple(float(a) for a in w))

    @classmethod
    def from_sample(cls, values):
        """Atoms at the distinct sample values, weighted by frequency."""
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            raise DataError("cannot build an empirical measure from an empty sample")
        locs, counts = np.unique(values, return_counts=True)
        w = counts / counts.sum()
        w = w / w.sum()
        return cls(tuple(locs), tuple(w))

    def sample(self, rng, size):
        idx = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
        return np.asarray(self.locations)[idx]

    def to_dict(self):
        return {"type": "empirical", "locations": list(self.locations),
                "weights": list(self.weights)}


@dataclass(frozen=True)
class CategoricalMeasure:
    probabilities: tuple

    def __post_init__(self):
        w = _check_weights(self.probabilities, "CategoricalMeasure")
        object.__setattr__(self, "probabilities", tuple(float(a) for a in w))

    @property
    def n_levels(self):
        return len(self.probabilities)

    @classmethod
    def from_codes(cls, codes, n_levels):
        codes = np.asarray(codes).astype(int)
        counts = np.bincount(codes, minlength=n_levels).astype(float)
        w = counts / counts.sum()
        return cls(tuple(w / w.sum()))

    def sample(self, rng, size):
        return rng.choice(self.n_levels, size=size, p=np.asarray(self.probabilities)).astype(float)

    def to_dict(self):
        return {"type": "categorical", "probabilities": list(self.probabilities)}


def measure_from_dict(d):
    kind = d.get("type")
    if kind == "gaussian":
        return GaussianMeasure(d["mu"], d["delta_sq"])
    if kind == "mixture":
        return MixtureMeasure(tuple(d["weights"]), tuple(d["means"]), tuple(d["variances"]))
    if kind == "empirical":
        return EmpiricalMeasure(tuple(d["locations"]), tuple(d["weights"]))
    if kind == "categorical":
        return CategoricalMeasure(tuple(d["probabilities"]))
    raise ConfigError(f"unknown measure type {kind!r}")


# -- normalizing flow -------------------------------------------------------
#
# One layer maps x -> sinh(tail * asinh(scale * (x - shift)) + skew).
# Layers compose left to right: the first layer sees the raw feature.


@dataclass(frozen=True)
class FlowLayer:
    shift: float = 0.0
    scale: float = 1.0
    skew: float = 0.0
    tail: float = 1.0

    def __post_init__(self):
        vals = (self.shift, self.scale, self.skew, self.tail)
        if not all(np.isfinite(v) for v in vals):
            raise ConfigError("FlowLayer: parameters must be finite")
        if self.scale <= 0 or self.tail <= 0:
            raise ConfigError("FlowLayer: scale and tail must be positive")


@dataclass(frozen=True)
class FlowParams:
    layers: tuple = (FlowLayer(),)

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ConfigError("FlowParams: need at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))

    @classmethod
    def identity(cls, n_layers=1):
        return cls(tuple(FlowLayer() for _ in range(n_layers)))

    @classmethod
    def standardizing(cls, values):
        """Affine flow (x - mean) / std; used when a feature skips the learned flow."""
        values = np.asarray(values, dtype=float)
        std = values.std()
        if not std > 0:
            raise DataError("cannot standardize a constant feature")
        return cls((FlowLayer(shift=float(values.mean()), scale=float(1.0 / std)),))

    def to_vector(self):
        return np.array([[ly.shift, np.log(ly.scale), ly.skew, np.log(ly.tail)]
                         for ly in self.layers]).ravel()

    @classmethod
    def from_vector(cls, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1, 4)
        return cls(tuple(FlowLayer(float(a), float(np.exp(lb)), float(s), float(np.exp(lt)))
                         for a, lb, s, lt in theta))

    def to_dict(self):
        return {"layers": [{"shift": ly.shift, "scale": ly.scale, "skew": ly.skew,
                            "tail": ly.tail} for ly in self.layers]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(FlowLayer(float(ly["shift"]), float(ly["scale"]),
                                   float(ly["skew"]), float(ly["tail"])) for ly in d["layers"]))


def _finite(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError("flow input contains non-finite values")
    return x


def _log_cosh(w):
    a = np.abs(w)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


def flow_forward(params: FlowParams, x):
    """z = g(x); works elementwise on scalars or arrays."""
    z = _finite(x)
    for ly in params.layers:
        z = np.sinh(ly.tail * np.arcsinh(ly.scale * (z - ly.shift)) + ly.skew)
    return z if z.ndim else float(z)


def flow_inverse(params: FlowParams, z):
    x = _finite(z)
    for ly in reversed(params.layers):
        x = ly.shift + np.sinh((np.arcsinh(x) - ly.skew) / ly.tail) / ly.scale
    return x if x.ndim else float(x)


def flow_log_deriv(params: FlowParams, x):
    """log g'(x), summed over layers by the chain rule."""
    z = _finite(x)
    total = np.zeros_like(z)
    for ly in params.layers:
        u = ly.scale * (z - ly.shift)
        w = ly.tail * np.arcsinh(u) + ly.skew
        total = total + _log_cosh(w) + np.log(ly.tail) - 0.5 * np.log1p(u * u) + np.log(ly.scale)
        z = np.sinh(w)
    return total if total.ndim else float(total)


def flow_kl_objective(theta, x):
    """Empirical KL to N(0, 1) up to a constant, with its gradient in ``theta``.

    ``theta`` packs (shift, log scale, skew, log tail) per layer.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1, 4)
    n = x.size
    cache = []
    z = x
    logdet = 0.0
    for a, lb, s, lt in theta:
        b, t = np.exp(lb), np.exp(lt)
        u = b * (z - a)
        r = np.arcsinh(u)
        w = t * r + s
        logdet += np.sum(_log_cosh(w) - 0.5 * np.log1p(u * u)) + n * (lt + lb)
        cache.append((b, t, u, r, w))
        z = np.sinh(w)
    value = (0.5 * np.sum(z * z) - logdet) / n

    grad = np.empty_like(theta)
    gz = z / n
    for k in range(len(theta) - 1, -1, -1):
        b, t, u, r, w = cache[k]
        gw = gz * np.cosh(w) - np.tanh(w) / n
        gu = gw * t / np.sqrt(1.0 + u * u) + u / ((1.0 + u * u) * n)
        grad[k] = (-b * gu.sum(), np.dot(gu, u) - 1.0, gw.sum(), t * np.dot(gw, r) - 1.0)
        gz = gu * b
    return value, grad.ravel()


# bounds on (shift, log scale, skew, log tail) keep sinh from overflowing
_LAYER_BOUNDS = [(None, None), (-25.0, 25.0), (-10.0, 10.0), (np.log(0.05), np.log(20.0))]


def fit_flow(values, layers=1, maxiter=500, gtol=1e-6):
    """Fit a ``layers``-layer flow pushing ``values`` toward N(0, 1).

    Starts from the better of identity and a standardizing first layer and
    never returns parameters worse than the identity flow.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 8:
        raise DataError(f"fit_flow needs at least 8 values, got {x.size}")
    _finite(x)
    if layers < 1:
        raise ConfigError("fit_flow: layers must be >= 1")
    if np.ptp(x) == 0:
        raise DataError(f"cannot fit a flow to a constant feature (all values = {x[0]!r})")

    ident = FlowParams.identity(layers).to_vector()
    std = FlowParams.identity(layers).to_vector().reshape(-1, 4)
    std[0, 0] = x.mean()
    std[0, 1] = -np.log(x.std())
    std = std.ravel()
    f_ident = flow_kl_objective(ident, x)[0]
    f_std = flow_kl_objective(std, x)[0]
    start = std if f_std < f_ident else ident

    res = optimize.minimize(flow_kl_objective, start, args=(x,), jac=True, method="L-BFGS-B",
                            bounds=_LAYER_BOUNDS * layers,
                            options={"maxiter": maxiter, "gtol": gtol})
    best = res.x if np.isfinite(res.fun) and res.fun <= min(f_ident, f_std) else start
    if flow_kl_objective(best, x)[0] > f_ident:
        best = ident
    return FlowParams.from_vector(best)


def measure_of_transformed(values_after_flow=None, *, flow_used=True):
    """Measure for a transformed continuous feature.

    With a learned flow this is N(0, 1) by construction; without one it is the
    Gaussian matching the sample moments.
    """
    if values_after_flow is not None:
        values_after_flow = np.asarray(values_after_flow, dtype=float).ravel()
        if values_after_flow.size == 0:
            raise DataError("measure_of_transformed: empty input")
    if flow_used:
        return GaussianMeasure(0.0, 1.0)
    if values_after_flow is None:
        raise DataError("measure_of_transformed: sample required when no flow is used")
    var = float(values_after_flow.var())
    if not var > 0:
        raise DataError("measure_of_transformed: constant sample has no Gaussian fit")
    return GaussianMeasure(float(values_after_flow.mean()), var)
