import json
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import gauss_expect, mixture_expect
from oakgp.errors import ConfigError, NumericalError
from oakgp.gp import component_posterior_mean, condition
from oakgp.kernels import (
    CategoricalKernel,
    ConstrainedCategorical,
    ConstrainedSE,
    OakHyperparams,
    constrained_categorical,
    constrained_se_mixture,
)
from oakgp.measures import CategoricalMeasure, EmpiricalMeasure, GaussianMeasure, MixtureMeasure
from oakgp.sobol import (
    SobolReport,
    _clamp,
    build_report,
    cross_matrix,
    cumulative_curve,
    enumerate_subsets,
    report_from_indices,
    sobol_cross_matrix_categorical,
    sobol_cross_matrix_empirical,
    sobol_cross_matrix_gaussian,
    sobol_cross_matrix_mixture,
    sobol_index,
)


def ktilde_gauss(t, a, l, mu, dsq):
    """Constrained SE under N(mu, dsq), written out from its definition."""
    v = l * l + dsq
    return (np.exp(-0.5 * (t - a) ** 2 / (l * l))
            - l * np.sqrt(l * l + 2 * dsq) / v
            * np.exp(-((t - mu) ** 2 + (a - mu) ** 2) / (2 * v)))


# -- cross matrices ------------------------------------------------------------

def test_se_product_integral_at_mean():
    val = gauss_expect(lambda t: np.exp(-0.5 * t ** 2) ** 2, 0.0, 1.0, nodes=128)
    assert val == pytest.approx(1 / np.sqrt(3), rel=1e-14)


@pytest.mark.parametrize("setting", range(10))
def test_gaussian_cross_matrix_matches_quadrature(setting):
    rng = np.random.default_rng(100 + setting)
    mu = rng.uniform(-1, 1)
    dsq = rng.uniform(0.3, 3.0)
    l = rng.uniform(0.5, 3.0) * np.sqrt(dsq)
    pts = mu + np.sqrt(dsq) * rng.uniform(-2.5, 2.5, size=(20, 2))
    C = sobol_cross_matrix_gaussian(l, 1.0, GaussianMeasure(mu, dsq), pts.ravel())
    for p, (a, b) in enumerate(pts):
        ref = gauss_expect(lambda t: ktilde_gauss(t, a, l, mu, dsq) * ktilde_gauss(t, b, l, mu, dsq),
                           mu, dsq, nodes=128)
        assert C[2 * p, 2 * p + 1] == pytest.approx(ref, rel=1e-8)


def test_gaussian_cross_matrix_symmetric_and_scaled():
    x = np.random.default_rng(0).normal(size=15)
    m = GaussianMeasure(0.2, 1.5)
    C = sobol_cross_matrix_gaussian(0.8, 1.0, m, x)
    assert np.array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() > -1e-12
    assert np.allclose(sobol_cross_matrix_gaussian(0.8, 2.0, m, x), 4.0 * C, rtol=1e-15)


@pytest.mark.parametrize("m", [
    MixtureMeasure((1.0,), (0.3,), (1.4,)),
    MixtureMeasure((0.5, 0.5), (-1.0, 1.0), (1.0, 1.0)),
    MixtureMeasure((0.2, 0.5, 0.3), (-2.0, 0.3, 1.5), (0.4, 1.0, 0.6)),
])
def test_mixture_cross_matrix_matches_quadrature(m):
    l = 1.1
    x = np.random.default_rng(4).uniform(-2, 2, 12)
    C = sobol_cross_matrix_mixture(l, m, x)
    ref = mixture_expect(lambda t: constrained_se_mixture(l, m, t[:, None, None], x[None, :, None])
                         * constrained_se_mixture(l, m, t[:, None, None], x[None, None, :]),
                         m.weights, m.means, m.variances, nodes=96)
    assert np.allclose(C, ref, rtol=1e-7, atol=1e-12)


def test_single_component_mixture_equals_gaussian_cross():
    x = np.linspace(-2, 2, 9)
    a = sobol_cross_matrix_mixture(0.9, MixtureMeasure((1.0,), (0.3,), (1.4,)), x)
    b = sobol_cross_matrix_gaussian(0.9, 1.0, GaussianMeasure(0.3, 1.4), x)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-14)


def test_empirical_cross_single_atom_is_rank_one():
    m = EmpiricalMeasure((0.4,), (1.0,))
    kern = ConstrainedSE(0.6, m)
    x = np.array([-1.0, 0.0, 0.7])
    k = kern.gram(x, np.array([0.4]))[:, 0]
    assert np.allclose(sobol_cross_matrix_empirical(kern.gram, m, x), np.outer(k, k))


def test_empirical_cross_on_quadrature_nodes_equals_quadrature():
    from numpy.polynomial.hermite_e import hermegauss

    t, w = hermegauss(40)
    m = EmpiricalMeasure(tuple(t), tuple(w / w.sum()))
    kern = ConstrainedSE(0.9, m)
    x = np.random.default_rng(2).normal(size=8)
    C = sobol_cross_matrix_empirical(kern.gram, m, x)
    Kt = kern.gram(t, x)
    ref = np.einsum("i,ip,iq->pq", w / w.sum(), Kt, Kt)
    assert np.allclose(C, ref, rtol=1e-12, atol=1e-15)
    assert np.linalg.eigvalsh(C).min() > -1e-10


def test_categorical_cross_uniform_two_levels():
    B = constrained_categorical(CategoricalKernel(np.zeros((2, 1)), np.ones(2)),
                                CategoricalMeasure((0.5, 0.5)))
    C = sobol_cross_matrix_categorical(B, CategoricalMeasure((0.5, 0.5)), [0, 1, 1])
    expected = np.array([[0.25, -0.25, -0.25], [-0.25, 0.25, 0.25], [-0.25, 0.25, 0.25]])
    assert np.allclose(C, expected, atol=1e-15)


def test_categorical_cross_concentrated_measure():
    B = np.array([[2.0, 0.5, -1.0], [0.5, 1.0, 0.2], [-1.0, 0.2, 3.0]])
    C = sobol_cross_matrix_categorical(B, CategoricalMeasure((0.0, 1.0, 0.0)), [2, 0, 1])
    row = B[1, [2, 0, 1]]
    assert np.allclose(C, np.outer(row, row))


def test_categorical_cross_level_out_of_range():
    with pytest.raises(ConfigError):
        sobol_cross_matrix_categorical(np.eye(2), CategoricalMeasure((0.5, 0.5)), [0, 2])


def test_cross_matrix_rejects_unknown_kernel():
    with pytest.raises(ConfigError):
        cross_matrix(object(), np.zeros(3))


# -- indices against Monte Carlo -----------------------------------------------

def _toy_conditioned(seed=0, n=60):
    rng = np.random.default_rng(seed)
    kernels = (ConstrainedSE(0.9, GaussianMeasure(0.0, 1.0)),
               ConstrainedSE(1.2, MixtureMeasure((0.5, 0.5), (-1.0, 1.0), (0.5, 0.5))),
               ConstrainedCategorical(CategoricalKernel(np.array([[1.0], [-0.5], [0.2]]),
                                                        np.ones(3)),
                                      CategoricalMeasure((0.2, 0.5, 0.3))))
    X = np.column_stack([rng.normal(size=n), rng.normal(size=n) * 1.2,
                         rng.choice(3, size=n, p=(0.2, 0.5, 0.3))])
    y = np.sin(2 * X[:, 0]) + 0.5 * X[:, 1] ** 2 + 0.3 * X[:, 2] + 0.4 * X[:, 0] * X[:, 1]
    y = y + 0.1 * rng.standard_normal(n)
    hp = OakHyperparams(kernels, (0.5, 1.0, 0.3, 0.1), 0.05, 3)
    return condition(hp, X, y)


def _sample_inputs(model, n, seed):
    rng = np.random.default_rng(seed)
    cols = [k.measure.sample(rng, n) for k in model.hp.kernels]
    return np.column_stack(cols)


@pytest.mark.parametrize("u", [(0,), (1,), (2,), (0, 1), (1, 2), (0, 1, 2)])
def test_sobol_index_matches_monte_carlo(u):
    model = _toy_conditioned()
    Xs = _sample_inputs(model, 200_000, seed=len(u) * 10 + u[0])
    m = component_posterior_mean(model, u, Xs, transformed=True)
    mc = m.var()
    se = np.sqrt(np.mean((m - m.mean()) ** 4) - mc ** 2) / np.sqrt(m.size)
    assert abs(sobol_index(model, u) - mc) < 3 * se


def test_component_means_are_centred():
    model = _toy_conditioned()
    Xs = _sample_inputs(model, 100_000, seed=99)
    for u in enumerate_subsets(3, 3):
        m = component_posterior_mean(model, u, Xs, transformed=True)
        assert abs(m.mean()) < 3 * m.std() / np.sqrt(m.size)


def test_zero_variance_and_zero_targets_give_zero_index():
    model = _toy_conditioned()
    hp0 = OakHyperparams(model.hp.kernels, (0.5, 1.0, 0.0, 0.1), 0.05, 3)
    assert sobol_index(condition(hp0, model.X, model.y), (0, 1)) == 0.0
    zero = condition(model.hp, model.X, np.zeros_like(model.y))
    assert all(sobol_index(zero, u) == 0.0 for u in enumerate_subsets(3, 3))


def test_first_order_only_model_ranks_singletons():
    model = _toy_conditioned()
    hp = OakHyperparams(model.hp.kernels, (0.5, 1.0, 0.0, 0.0), 0.05, 3)
    report = build_report(condition(hp, model.X, model.y))
    assert all(e.normalized == 0 for e in report.entries if len(e.subset) > 1)
    assert {u for u in report.ranking[:3]} == {(0,), (1,), (2,)}


def test_clamp_policy():
    assert _clamp(-5e-11, (0,)) == 0.0
    assert _clamp(0.3, (0,)) == 0.3
    with pytest.raises(NumericalError):
        _clamp(-1e-6, (0,))


# -- enumeration and reports ---------------------------------------------------

def test_enumerate_subsets_counts_and_cap():
    subs = enumerate_subsets(5, 3)
    assert len(subs) == 5 + 10 + 10
    assert subs[:5] == [(i,) for i in range(5)]
    with pytest.raises(ConfigError, match="cap"):
        enumerate_subsets(30, 4, cap=1000)


indices_st = st.dictionaries(
    st.lists(st.integers(0, 5), min_size=1, max_size=3, unique=True).map(lambda u: tuple(sorted(u))),
    st.floats(0, 10, allow_nan=False),
    min_size=1, max_size=20)


@settings(max_examples=100, deadline=None)
@given(indices_st, st.floats(0, 0.5))
def test_report_invariants(indices, tau):
    r = report_from_indices(indices, tau)
    if r.degenerate:
        assert r.ranking == () and r.total == 0
        return
    assert sum(e.normalized for e in r.entries) == pytest.approx(1.0, abs=1e-9)
    assert sorted(r.ranking) == sorted(indices)
    assert np.all(np.diff(r.cumulative) >= 0)
    assert r.cumulative[-1] == pytest.approx(1.0, abs=1e-9)
    norm = [e.normalized for e in r.ranked_entries()]
    assert all(a >= b for a, b in zip(norm, norm[1:]))
    assert list(r.truncated) == [v < tau for v in norm]
    assert cumulative_curve(r) == [(k + 1, c) for k, c in enumerate(r.cumulative)]


def test_report_ties_break_lexicographically():
    r = report_from_indices({(2,): 1.0, (0, 1): 1.0, (0,): 1.0, (1,): 3.0})
    assert r.ranking == ((1,), (0,), (0, 1), (2,))


def test_cumulative_curve_examples():
    assert cumulative_curve(report_from_indices({(0,): 2.0})) == [(1, 1.0)]
    uniform = report_from_indices({(i,): 1.0 for i in range(4)})
    assert [c for _, c in cumulative_curve(uniform)] == pytest.approx([0.25, 0.5, 0.75, 1.0])


def test_degenerate_report_is_flagged():
    r = report_from_indices({(0,): 0.0, (1,): 0.0})
    assert r.degenerate and r.ranking == () and r.cumulative == ()


def test_report_json_round_trip_is_byte_identical():
    model = _toy_conditioned()
    text = build_report(model).to_json()
    again = SobolReport.from_dict(json.loads(text)).to_json()
    assert again == text
    assert json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n" == text


def test_report_order_sums():
    r = report_from_indices({(0,): 3.0, (1,): 1.0, (0, 1): 1.0})
    assert r.order_sums() == pytest.approx({1: 0.8, 2: 0.2})
    assert set(r.selected()) == {(0,), (1,), (0, 1)}


def test_report_threshold_marks_small_entries():
    r = report_from_indices({(0,): 0.995, (1,): 0.005}, threshold=0.01)
    assert r.selected() == [(0,)]
    assert r.truncated == (False, True)


def test_build_report_covers_all_subsets():
    model = _toy_conditioned()
    r = build_report(model, threshold=0.05)
    assert {e.subset for e in r.entries} == {u for d in (1, 2, 3)
                                            for u in combinations(range(3), d)}
    assert r.threshold == 0.05
