"""Exact GP regression with the OAK kernel.

The marginal likelihood gradient uses the trace identity
d log p / dtheta = sum(W * dK/dtheta) with W = (alpha alpha^T - Ky^-1) / 2,
pushed through the Newton-Girard composition with leave-one-out elementary
symmetric polynomials.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from . import _backend
from .config import FeatureSpec, RunConfig, default_schema
from .errors import ConfigError, DataError, NumericalError
from .kernels import (
    CategoricalKernel,
    ConstrainedCategorical,
    ConstrainedSE,
    OakHyperparams,
    feature_grams,
    oak_diag,
)
from .measures import (
    CategoricalMeasure,
    EmpiricalMeasure,
    FlowParams,
    fit_flow,
    flow_forward,
    measure_of_transformed,
)

log = logging.getLogger(__name__)

_JITTER_ESCALATION = (1.0, 10.0, 100.0, 1000.0)
_LOG_VAR_BOUNDS = (np.log(1e-10), np.log(1e5))
_LOG_NOISE_BOUNDS = (np.log(1e-8), np.log(1e5))
_LOG_LENGTH_BOUNDS = (np.log(1e-3), np.log(1e3))


@dataclass(frozen=True)
class GammaPrior:
    shape: float = 1.0
    rate: float = 0.2

    def __post_init__(self):
        if not (self.shape > 0 and self.rate >= 0):
            raise ConfigError("GammaPrior: shape must be > 0 and rate >= 0")


# -- parameter packing -----------------------------------------------------

def pack(hp: OakHyperparams):
    """Unconstrained vector: kernel params, log order variances, log noise."""
    with np.errstate(divide="ignore"):
        parts = [k.params for k in hp.kernels]
        parts.append(np.log(np.asarray(hp.order_variances)))
        parts.append([np.log(hp.noise_variance)])
    return np.concatenate(parts)


def unpack(theta, template: OakHyperparams):
    theta = np.asarray(theta, dtype=float)
    kernels = []
    i = 0
    for k in template.kernels:
        n = k.params.size
        kernels.append(k.with_params(theta[i:i + n]))
        i += n
    nv = template.max_order + 1
    ov = np.exp(theta[i:i + nv])
    noise = float(np.exp(theta[i + nv]))
    return OakHyperparams(tuple(kernels), tuple(ov), noise, template.max_order)


def _bounds(hp: OakHyperparams):
    b = []
    for k in hp.kernels:
        if isinstance(k, ConstrainedCategorical):
            M, R = k.kernel.W.shape
            b += [(-100.0, 100.0)] * (M * R) + [_LOG_VAR_BOUNDS] * M
        else:
            b += [_LOG_LENGTH_BOUNDS]
    b += [_LOG_VAR_BOUNDS] * (hp.max_order + 1)
    b.append(_LOG_NOISE_BOUNDS)
    return b


# -- objective -------------------------------------------------------------

def _factor(Ks, noise, jitter):
    """Cholesky of Ks + (jitter * mean diag + noise) I, escalating the jitter."""
    n = Ks.shape[0]
    base = float(np.mean(np.diag(Ks))) if n else 0.0
    for mult in _JITTER_ESCALATION:
        factor = jitter * mult
        Ky = Ks + (factor * base + noise) * np.eye(n)
        try:
            L = linalg.cholesky(Ky, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        return L, factor, factor * base
    raise NumericalError("Cholesky of K + noise I failed after jitter escalation")


def _objective(hp: OakHyperparams, X, y, prior: GammaPrior | None, jitter, want_grad):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    sig = np.asarray(hp.order_variances)
    order = hp.max_order
    grams, jacs = [], []
    for d, k in enumerate(hp.kernels):
        if want_grad:
            K, jac = k.gram_and_jac(X[:, d])
            jacs.append(jac)
        else:
            K = k.gram(X[:, d])
        grams.append(K)
    grams = np.stack(grams)
    E = _backend.elementary_symmetric(grams, order)
    Ks = np.tensordot(sig, E, axes=1)
    try:
        L, factor, _ = _factor(Ks, hp.noise_variance, jitter)
    except NumericalError:
        raise NumericalError(
            "Cholesky failed for hyperparameters: order variances "
            f"{list(hp.order_variances)}, noise {hp.noise_variance}, lengthscales "
            f"{[getattr(k, 'lengthscale', None) for k in hp.kernels]}") from None
    alpha = linalg.cho_solve((L, True), y)
    value = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2.0 * np.pi)

    log_var = np.log(np.maximum(sig, 1e-300))
    if prior is not None:
        value += np.sum((prior.shape - 1.0) * log_var - prior.rate * sig)
    if not want_grad:
        return value, None

    Kinv = linalg.cho_solve((L, True), np.eye(n))
    W = 0.5 * (np.outer(alpha, alpha) - Kinv)
    trW = np.trace(W)
    # jitter = factor * mean(diag Ks) also moves with every signal parameter
    G = W + (factor * trW / n) * np.eye(n)
    grad = []
    for d, jac in enumerate(jacs):
        grad.append(jac.contract(G * _backend.loo_weights(grams[d], E, sig)))
    g_var = sig * np.einsum("ij,lij->l", G, E)
    if prior is not None:
        g_var = g_var + (prior.shape - 1.0) - prior.rate * sig
    grad.append(g_var)
    grad.append([hp.noise_variance * trW])
    return value, np.concatenate(grad)


def log_marginal_likelihood(hp: OakHyperparams, X, y, jitter=1e-6):
    """(log p(y | X, hp), gradient over ``pack(hp)``)."""
    return _objective(hp, X, y, None, jitter, True)


def map_objective(hp: OakHyperparams, X, y, prior: GammaPrior, jitter=1e-6):
    """Log marginal likelihood plus the Gamma log-prior on every order variance."""
    return _objective(hp, X, y, prior, jitter, True)


# -- fitted model ----------------------------------------------------------

@dataclass(frozen=True)
class FittedModel:
    schema: tuple
    flows: tuple
    hp: OakHyperparams
    X: np.ndarray
    y: np.ndarray
    L: np.ndarray
    alpha: np.ndarray
    jitter_value: float
    objective: float = float("nan")
    restart_objectives: tuple = ()
    config: RunConfig = field(default_factory=RunConfig)
    target_name: str | None = None

    @property
    def n_features(self):
        return len(self.schema)

    @property
    def max_order(self):
        return self.hp.max_order

    def transform(self, X_raw):
        """Map raw features into the space the kernels live in."""
        X_raw = np.asarray(X_raw, dtype=float)
        if X_raw.ndim == 1:
            X_raw = X_raw[None, :] if self.n_features > 1 else X_raw[:, None]
        if X_raw.ndim != 2 or X_raw.shape[1] != self.n_features:
            raise ConfigError(f"expected {self.n_features} feature columns, "
                              f"got array of shape {X_raw.shape}")
        Z = np.empty_like(X_raw)
        for d, flow in enumerate(self.flows):
            Z[:, d] = X_raw[:, d] if flow is None else flow_forward(flow, X_raw[:, d])
        return Z

    def verify(self, tol_chol=1e-10, tol_alpha=1e-8):
        """Check L L^T = K + s I and (K + s I) alpha = y."""
        if self.y.size == 0:
            return
        Ky = _train_cov(self)
        if np.linalg.norm(self.L @ self.L.T - Ky) > tol_chol * np.linalg.norm(Ky):
            raise NumericalError("Cholesky factor does not reconstruct the training covariance")
        if np.linalg.norm(Ky @ self.alpha - self.y) > tol_alpha * max(np.linalg.norm(self.y),
                                                                       1e-300):
            raise NumericalError("alpha does not solve the training system")


def _train_cov(model):
    Ks = np.tensordot(np.asarray(model.hp.order_variances),
                      _backend.elementary_symmetric(feature_grams(model.hp.kernels, model.X),
                                                    model.hp.max_order), axes=1)
    return Ks + (model.jitter_value + model.hp.noise_variance) * np.eye(model.y.size)


def condition(hp: OakHyperparams, X, y, *, schema=None, flows=None, jitter=1e-6, **extra):
    """Condition the OAK prior on transformed training data."""
    X = np.asarray(X, dtype=float).reshape(-1, hp.n_features)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise DataError(f"X has {X.shape[0]} rows but y has {y.size} entries")
    schema = tuple(schema) if schema is not None else default_schema(hp.n_features)
    flows = tuple(flows) if flows is not None else (None,) * hp.n_features
    if y.size:
        grams = feature_grams(hp.kernels, X)
        Ks = np.tensordot(np.asarray(hp.order_variances),
                          _backend.elementary_symmetric(grams, hp.max_order), axes=1)
        L, _, jit = _factor(Ks, hp.noise_variance, jitter)
        alpha = linalg.cho_solve((L, True), y)
    else:
        L, jit, alpha = np.zeros((0, 0)), 0.0, np.zeros(0)
    for a in (X, y, L, alpha):
        a.setflags(write=False)
    return FittedModel(schema, flows, hp, X, y, L, alpha, float(jit), **extra)


# -- fitting ---------------------------------------------------------------

def _prepare_features(X_raw, schema, config: RunConfig):
    flows, kernels_proto, Z = [], [], np.empty_like(X_raw)
    for d, spec in enumerate(schema):
        col = X_raw[:, d]
        if spec.kind == "categorical":
            M = len(spec.levels)
            measure = CategoricalMeasure.from_codes(col, M)
            flows.append(None)
            Z[:, d] = col
            kernels_proto.append(("categorical", measure))
            continue
        if np.ptp(col) == 0:
            raise DataError(f"feature {spec.name!r} is constant (value {col[0]!r})")
        mode = config.measures.get(spec.name, "flow")
        if mode == "flow":
            flow = fit_flow(col, layers=config.flow_layers)
            z = flow_forward(flow, col)
            measure = measure_of_transformed(z)
        else:
            flow = FlowParams.standardizing(col)
            z = flow_forward(flow, col)
            measure = (measure_of_transformed(z, flow_used=False) if mode == "gaussian"
                       else EmpiricalMeasure.from_sample(z))
        flows.append(flow)
        Z[:, d] = z
        kernels_proto.append(("se", measure))
    return tuple(flows), kernels_proto, Z


def _initial_hp(kernels_proto, order, y, config: RunConfig, rng):
    vy = float(np.var(y))
    if not vy > 0:
        vy = max(float(np.mean(y * y)), 1e-6)
    kernels = []
    for kind, measure in kernels_proto:
        if kind == "se":
            kernels.append(ConstrainedSE(float(np.exp(rng.normal(0.0, 0.3))), measure))
        else:
            M = measure.n_levels
            W = rng.normal(0.0, 0.1, size=(M, config.categorical_rank))
            kernels.append(ConstrainedCategorical(CategoricalKernel(W, np.ones(M)), measure))
    variances = (vy / (order + 1),) * (order + 1)
    return OakHyperparams(tuple(kernels), variances, 0.1 * vy, order)


def _validate_xy(X_raw, y, schema, config):
    X_raw = np.asarray(X_raw, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X_raw.ndim == 1:
        X_raw = X_raw[:, None]
    if X_raw.ndim != 2 or X_raw.shape[1] < 1:
        raise DataError("X must be a 2-d array with at least one feature column")
    n, D = X_raw.shape
    if y.size != n:
        raise DataError(f"X has {n} rows but y has {y.size} entries")
    if n < 4:
        raise DataError(f"need at least 4 observations, got {n}")
    if n > config.max_n:
        raise ConfigError(f"N = {n} exceeds the exact-GP cap max_n = {config.max_n}; "
                          "larger datasets are out of scope")
    if not np.all(np.isfinite(y)):
        raise DataError("targets contain non-finite values")
    schema = tuple(schema) if schema is not None else default_schema(D)
    if len(schema) != D:
        raise DataError(f"schema has {len(schema)} features but X has {D} columns")
    for d, spec in enumerate(schema):
        if not isinstance(spec, FeatureSpec):
            raise ConfigError("schema entries must be FeatureSpec")
        col = X_raw[:, d]
        if spec.kind == "continuous" and not np.all(np.isfinite(col)):
            raise DataError(f"feature {spec.name!r} contains non-finite values")
        if spec.kind == "categorical":
            codes = np.rint(col)
            if np.any(codes != col) or np.any(codes < 0) or np.any(codes >= len(spec.levels)):
                raise DataError(f"feature {spec.name!r}: level codes outside "
                                f"[0, {len(spec.levels)})")
    return X_raw, y, schema


def fit(X_raw, y, config: RunConfig | None = None, schema=None):
    """Flow-transform features, then MAP-fit the OAK GP with multiple restarts."""
    config = config or RunConfig()
    X_raw, y, schema = _validate_xy(X_raw, y, schema, config)
    order = config.resolve_order(X_raw.shape[1])
    flows, kernels_proto, Z = _prepare_features(X_raw, schema, config)
    prior = GammaPrior(config.prior_shape, config.prior_rate)

    def negobj(theta, template):
        try:
            hp = unpack(theta, template)
            v, g = _objective(hp, Z, y, prior, config.jitter, True)
        except (NumericalError, ConfigError):
            return np.inf, np.zeros_like(theta)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(theta)
        return -v, -g

    results = []
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    t0 = time.perf_counter()
    for r, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        hp0 = _initial_hp(kernels_proto, order, y, config, rng)
        theta0 = pack(hp0)
        f0 = negobj(theta0, hp0)[0]
        if not np.isfinite(f0):
            log.warning("restart %d: initial point not factorizable", r)
            continue
        res = optimize.minimize(negobj, theta0, args=(hp0,), jac=True, method="L-BFGS-B",
                                bounds=_bounds(hp0),
                                options={"maxiter": config.maxiter, "gtol": config.gtol})
        theta, fval = (res.x, res.fun) if res.fun <= f0 else (theta0, f0)
        results.append((-fval, -f0, theta, hp0))
        log.info("restart %d: objective %.6f (init %.6f, %d iterations)",
                 r, -fval, -f0, res.nit)
    if not results:
        raise NumericalError("every restart failed to factorize the training covariance")
    best = max(range(len(results)), key=lambda i: results[i][0])
    obj, _, theta, template = results[best]
    hp = unpack(theta, template)
    log.info("fit finished in %.2fs", time.perf_counter() - t0)
    return condition(hp, Z, y, schema=schema, flows=flows, jitter=config.jitter,
                     objective=float(obj),
                     restart_objectives=tuple(float(r[0]) for r in results),
                     config=config)


def refit_with(model: FittedModel, hp: OakHyperparams):
    """Recondition a model on its own data with different hyperparameters."""
    return condition(hp, model.X, model.y, schema=model.schema, flows=model.flows,
                     jitter=model.config.jitter, config=model.config)


# -- prediction ------------------------------------------------------------

_CHUNK = 4096


def _inputs(model, X_star, transformed):
    if transformed:
        X = np.asarray(X_star, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if model.n_features > 1 else X[:, None]
        if X.ndim != 2 or X.shape[1] != model.n_features:
            raise ConfigError(f"expected {model.n_features} feature columns, "
                              f"got array of shape {X.shape}")
        return X
    return model.transform(X_star)


def predict(model: FittedModel, X_star, *, transformed=False, include_noise=False,
            mean_only=False):
    """Predictive mean and variance (latent unless ``include_noise``)."""
    Z = _inputs(model, X_star, transformed)
    hp = model.hp
    mean = np.empty(Z.shape[0])
    var = None if mean_only else np.empty(Z.shape[0])
    for s in range(0, Z.shape[0], _CHUNK):
        Zc = Z[s:s + _CHUNK]
        if model.y.size:
            Ks = np.tensordot(np.asarray(hp.order_variances), _backend.elementary_symmetric(
                feature_grams(hp.kernels, Zc, model.X), hp.max_order), axes=1)
            mean[s:s + _CHUNK] = Ks @ model.alpha
        else:
            mean[s:s + _CHUNK] = 0.0
        if var is not None:
            v = oak_diag(Zc, hp)
            if model.y.size:
                A = linalg.solve_triangular(model.L, Ks.T, lower=True)
                v = v - np.einsum("ij,ij->j", A, A)
            var[s:s + _CHUNK] = v
    if var is not None and include_noise:
        var = var + hp.noise_variance
    return mean, var


def constant_component(model: FittedModel):
    """Posterior mean of the constant (order-0) component."""
    return float(model.hp.order_variances[0] * np.sum(model.alpha))


def _check_subset(model, u):
    u = tuple(int(i) for i in u)
    if len(u) == 0:
        raise ConfigError("component subsets must be non-empty")
    if len(set(u)) != len(u):
        raise ConfigError(f"subset {u} repeats a feature")
    if any(i < 0 or i >= model.n_features for i in u):
        raise ConfigError(f"subset {u} references a feature outside [0, {model.n_features})")
    if len(u) > model.max_order:
        raise ConfigError(f"subset {u} has order {len(u)} above the truncation order "
                          f"{model.max_order}")
    return tuple(sorted(u))


def component_posterior_mean(model: FittedModel, u, X_star, *, transformed=False):
    """sigma_|u|^2 (prod_{i in u} k~_i(x_i, X_i)) alpha."""
    return component_means(model, [u], X_star, transformed=transformed)[0]


def component_means(model: FittedModel, subsets, X_star, *, transformed=False):
    """Posterior means of several components, sharing the per-feature grams."""
    subsets = [_check_subset(model, u) for u in subsets]
    Z = _inputs(model, X_star, transformed)
    out = [np.empty(Z.shape[0]) for _ in subsets]
    used = sorted({i for u in subsets for i in u})
    sig = model.hp.order_variances
    for s in range(0, Z.shape[0], _CHUNK):
        Zc = Z[s:s + _CHUNK]
        grams = {i: model.hp.kernels[i].gram(Zc[:, i], model.X[:, i]) for i in used}
        for j, u in enumerate(subsets):
            K = grams[u[0]].copy()
            for i in u[1:]:
                K *= grams[i]
            out[j][s:s + _CHUNK] = sig[len(u)] * (K @ model.alpha)
    return out


def component_posterior_variance(model: FittedModel, u, X_star, *, transformed=False):
    """diag(s K~_u(X*, X*) - s^2 K~_u(X*, X) Ky^-1 K~_u(X, X*)), s = sigma_|u|^2."""
    u = _check_subset(model, u)
    Z = _inputs(model, X_star, transformed)
    s2 = model.hp.order_variances[len(u)]
    out = np.empty(Z.shape[0])
    for s in range(0, Z.shape[0], _CHUNK):
        Zc = Z[s:s + _CHUNK]
        prior = np.ones(Zc.shape[0])
        for i in u:
            prior *= model.hp.kernels[i].diag(Zc[:, i])
        v = s2 * prior
        if model.y.size:
            K = np.ones((model.y.size, Zc.shape[0]))
            for i in u:
                K *= model.hp.kernels[i].gram(model.X[:, i], Zc[:, i])
            A = linalg.solve_triangular(model.L, K, lower=True)
            v = v - s2 * s2 * np.einsum("ij,ij->j", A, A)
        out[s:s + _CHUNK] = v
    return out


def truncated_predict(model: FittedModel, selected_subsets, X_star, *, transformed=False):
    """Constant component plus the posterior means of the selected components."""
    subsets = [_check_subset(model, u) for u in selected_subsets]
    if len(set(subsets)) != len(subsets):
        raise ConfigError("truncated_predict: duplicate subsets")
    Z = _inputs(model, X_star, transformed)
    mean = np.full(Z.shape[0], constant_component(model))
    if subsets:
        for m in component_means(model, subsets, Z, transformed=True):
            mean += m
    return mean


def with_config(model: FittedModel, **changes):
    return replace(model, config=replace(model.config, **changes))
