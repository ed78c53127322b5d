"""Analytic Sobol indices of the posterior-mean components.

For a component u the variance of its posterior mean under the input measure
is sigma_|u|^4 alpha^T (prod_{i in u} C_i) alpha, where C_i is the feature's
cross matrix int k~_i(t, X_i) k~_i(t, X_i)^T dp_i(t).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from . import _backend
from .errors import ConfigError, NumericalError
from .kernels import ConstrainedCategorical, ConstrainedSE, _as_codes
from .measures import EmpiricalMeasure, GaussianMeasure, MixtureMeasure

NEGATIVE_CLAMP = 1e-10


# -- per-feature cross matrices ----------------------------------------------

def sobol_cross_matrix_gaussian(lengthscale, sigma_sq, m: GaussianMeasure, Xi):
    """Cross matrix of the constrained SE (variance ``sigma_sq``) under N(mu, delta^2)."""
    C = _backend.sobol_cross_gaussian(Xi, lengthscale, m.mu, m.delta_sq)
    return C if sigma_sq == 1.0 else (sigma_sq * sigma_sq) * C


def _gauss_pair(mean, var, c1, s1, c2, s2):
    """int N(t; mean, var) exp(-(t-c1)^2 / 2 s1) exp(-(t-c2)^2 / 2 s2) dt, broadcasting."""
    s = s1 * s2 / (s1 + s2)
    c = (c1 * s2 + c2 * s1) / (s1 + s2)
    pre = np.exp(-0.5 * (c1 - c2) ** 2 / (s1 + s2))
    return pre * np.sqrt(s / (var + s)) * np.exp(-0.5 * (c - mean) ** 2 / (var + s))


def sobol_cross_matrix_mixture(lengthscale, m: MixtureMeasure, Xi):
    """Cross matrix under a Gaussian-mixture measure, all terms in closed form."""
    Xi = np.asarray(Xi, dtype=float)
    l2 = lengthscale ** 2
    pw, pm, pv = (np.asarray(a) for a in (m.weights, m.means, m.variances))
    hv = pv + l2
    hc = pw * lengthscale / np.sqrt(hv)
    kern = ConstrainedSE(lengthscale, m)
    h, _, s, _ = kern._correction(Xi, False)
    a = Xi[:, None]
    b = Xi[None, :]
    T1 = np.zeros((Xi.size, Xi.size))
    q = np.zeros(Xi.size)
    r = 0.0
    for w_m, mu_m, v_m in zip(pw, pm, pv):
        T1 += w_m * _gauss_pair(mu_m, v_m, a, l2, b, l2)
        q += w_m * (_gauss_pair(mu_m, v_m, Xi[:, None], l2, pm[None, :], hv[None, :]) @ hc)
        r += w_m * float(hc @ _gauss_pair(mu_m, v_m, pm[:, None], hv[:, None],
                                          pm[None, :], hv[None, :]) @ hc)
    C = T1 - (np.outer(q, h) + np.outer(h, q)) / s + r * np.outer(h, h) / (s * s)
    return 0.5 * (C + C.T)


def sobol_cross_matrix_empirical(base_constrained_eval, m: EmpiricalMeasure, Xi):
    """sum_i w_i k~(Xi, x_i) k~(Xi, x_i)^T over the measure's atoms.

    ``base_constrained_eval(a, b)`` returns the constrained gram between two
    1-d arrays.
    """
    Kt = np.asarray(base_constrained_eval(np.asarray(Xi, dtype=float),
                                          np.asarray(m.locations)))
    w = np.asarray(m.weights)
    return (Kt * w) @ Kt.T


def sobol_cross_matrix_categorical(B, m, level_indices):
    """sum_c w_c B[c, idx_p] B[c, idx_q]: exact expectation over levels."""
    B = np.asarray(B, dtype=float)
    idx = _as_codes(level_indices, B.shape[0])
    cols = B[:, idx]
    w = np.asarray(m.probabilities)
    return (cols * w[:, None]).T @ cols


def cross_matrix(kernel, Xi):
    """Dispatch on the feature kernel type."""
    if isinstance(kernel, ConstrainedCategorical):
        return sobol_cross_matrix_categorical(kernel.B, kernel.measure, Xi)
    if not isinstance(kernel, ConstrainedSE):
        raise ConfigError(f"no cross matrix for kernel {type(kernel).__name__}")
    m = kernel.measure
    if isinstance(m, GaussianMeasure):
        return sobol_cross_matrix_gaussian(kernel.lengthscale, 1.0, m, Xi)
    if isinstance(m, MixtureMeasure):
        return sobol_cross_matrix_mixture(kernel.lengthscale, m, Xi)
    return sobol_cross_matrix_empirical(kernel.gram, m, Xi)


# -- indices and report ---------------------------------------------------

def _clamp(value, u):
    if value < -NEGATIVE_CLAMP:
        raise NumericalError(f"Sobol index for {u} is {value!r} < 0; cross matrices are broken")
    return max(value, 0.0)


def _cross_matrices(model):
    return [cross_matrix(k, model.X[:, d]) for d, k in enumerate(model.hp.kernels)]


def sobol_index(model, u, _cache=None):
    """Variance of the component-u posterior mean under the input measure."""
    from .gp import _check_subset

    u = _check_subset(model, u)
    s2 = model.hp.order_variances[len(u)]
    if s2 == 0.0 or not np.any(model.alpha):
        return 0.0
    cache = _cache if _cache is not None else {}
    for i in u:
        if i not in cache:
            cache[i] = cross_matrix(model.hp.kernels[i], model.X[:, i])
    C = cache[u[0]].copy()
    for i in u[1:]:
        C *= cache[i]
    return _clamp(float(s2 * s2 * (model.alpha @ C @ model.alpha)), u)


def enumerate_subsets(n_features, max_order, cap=100_000):
    count = sum(comb(n_features, d) for d in range(1, max_order + 1))
    if count > cap:
        raise ConfigError(f"{count} component subsets exceed the cap of {cap}; "
                          "lower the truncation order or raise max_subsets")
    return [u for d in range(1, max_order + 1) for u in combinations(range(n_features), d)]


@dataclass(frozen=True)
class SobolEntry:
    subset: tuple
    variance: float
    normalized: float


@dataclass(frozen=True)
class SobolReport:
    """Sobol indices for every component, ranked.

    ``ranking`` is ordered by normalized index (descending, ties broken
    lexicographically on the subset); ``cumulative`` are its prefix sums and
    ``truncated[i]`` marks ranked entries below the threshold.
    """

    entries: tuple
    total: float
    ranking: tuple
    cumulative: tuple
    threshold: float
    truncated: tuple
    degenerate: bool = False
    feature_names: tuple = ()

    def ranked_entries(self):
        lookup = {e.subset: e for e in self.entries}
        return [lookup[u] for u in self.ranking]

    def selected(self):
        """Ranked subsets at or above the threshold."""
        return [u for u, cut in zip(self.ranking, self.truncated) if not cut]

    def order_sums(self):
        """Sum of normalized indices per interaction order."""
        out = {}
        for e in self.entries:
            out[len(e.subset)] = out.get(len(e.subset), 0.0) + e.normalized
        return dict(sorted(out.items()))

    def to_dict(self):
        names = self.feature_names

        def label(u):
            return [names[i] for i in u] if names else [str(i) for i in u]

        return {
            "format": "oakgp.sobol_report",
            "version": 1,
            "total_variance": self.total,
            "threshold": self.threshold,
            "degenerate": self.degenerate,
            "feature_names": list(names),
            "entries": [{"subset": list(e.subset), "features": label(e.subset),
                         "variance": e.variance, "normalized": e.normalized}
                        for e in self.entries],
            "ranking": [list(u) for u in self.ranking],
            "cumulative": list(self.cumulative),
            "truncated": list(self.truncated),
            "order_sums": {str(k): v for k, v in self.order_sums().items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "oakgp.sobol_report":
            raise ConfigError("not a Sobol report document")
        entries = tuple(SobolEntry(tuple(e["subset"]), float(e["variance"]),
                                   float(e["normalized"])) for e in d["entries"])
        return cls(entries, float(d["total_variance"]), tuple(tuple(u) for u in d["ranking"]),
                   tuple(float(c) for c in d["cumulative"]), float(d["threshold"]),
                   tuple(bool(t) for t in d["truncated"]), bool(d["degenerate"]),
                   tuple(d.get("feature_names", ())))


def report_from_indices(indices, threshold=0.01, feature_names=()):
    """Normalize, rank and threshold a mapping subset -> R_u."""
    subsets = [tuple(u) for u in indices]
    values = [float(indices[u]) for u in indices]
    total = float(sum(values))
    if not total > 0:
        entries = tuple(SobolEntry(u, v, 0.0) for u, v in zip(subsets, values))
        return SobolReport(entries, total, (), (), threshold, (), True, tuple(feature_names))
    entries = tuple(SobolEntry(u, v, v / total) for u, v in zip(subsets, values))
    ranked = sorted(entries, key=lambda e: (-e.normalized, e.subset))
    ranking = tuple(e.subset for e in ranked)
    cum = np.cumsum([e.normalized for e in ranked])
    return SobolReport(entries, total, ranking, tuple(float(c) for c in cum), threshold,
                       tuple(e.normalized < threshold for e in ranked), False,
                       tuple(feature_names))


def build_report(model, threshold=None):
    """Sobol indices for every subset up to the truncation order."""
    if threshold is None:
        threshold = model.config.sobol_threshold
    subsets = enumerate_subsets(model.n_features, model.max_order, model.config.max_subsets)
    cache = {}
    indices = {u: sobol_index(model, u, cache) for u in subsets}
    return report_from_indices(indices, threshold, tuple(s.name for s in model.schema))


def cumulative_curve(report: SobolReport):
    """[(k, cumulative normalized Sobol of the top-k components)]."""
    return [(k + 1, c) for k, c in enumerate(report.cumulative)]
