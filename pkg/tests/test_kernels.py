import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import brute_force_additive, gauss_expect, mixture_expect, random_psd, se
from oakgp.errors import ConfigError, NumericalError
from oakgp.kernels import (
    CategoricalKernel,
    ConstrainedCategorical,
    ConstrainedSE,
    OakHyperparams,
    SeKernel,
    constrained_categorical,
    constrained_empirical,
    constrained_se_gaussian,
    constrained_se_mixture,
    feature_kernel_from_dict,
    newton_girard_gram,
    oak_diag,
    oak_gram,
    product_form_gram,
    se_eval,
)
from oakgp.measures import CategoricalMeasure, EmpiricalMeasure, GaussianMeasure, MixtureMeasure

MIX2 = MixtureMeasure((0.5, 0.5), (-1.0, 1.0), (1.0, 1.0))
MIX3 = MixtureMeasure((0.2, 0.5, 0.3), (-2.0, 0.3, 1.5), (0.4, 1.0, 0.6))
EMP = EmpiricalMeasure(tuple(np.linspace(-1, 1, 20)), tuple(np.full(20, 0.05)))


# -- base SE -----------------------------------------------------------------

@pytest.mark.parametrize("l,x,y,expected", [
    (1.0, 0.3, 0.3, 1.0),
    (1.0, 0.0, 1.0, np.exp(-0.5)),
    (2.0, 0.0, 2.0, np.exp(-0.5)),
])
def test_se_values(l, x, y, expected):
    assert se_eval(SeKernel(l), x, y) == pytest.approx(expected, rel=1e-15)


def test_se_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        SeKernel(0.0)
    with pytest.raises(ConfigError):
        se_eval(SeKernel(1.0), np.nan, 0.0)


# -- constrained SE, Gaussian measure -----------------------------------------

def test_gaussian_constrained_at_mean():
    m = GaussianMeasure(0.0, 1.0)
    assert constrained_se_gaussian(1.0, m, 0.0, 0.0) == pytest.approx(1 - np.sqrt(3) / 2,
                                                                      rel=1e-14)


def test_gaussian_constrained_matches_quadrature_construction():
    # k~ = k - E[k(x, .)] E[k(., y)] / E[k(., .)], each expectation by quadrature
    l, m = 0.8, GaussianMeasure(0.4, 1.7)
    x, y = np.array([-1.0, 0.2, 2.5]), np.array([0.7, -0.3, 1.1])
    hx = gauss_expect(lambda t: se(t, x, l), m.mu, m.delta_sq)
    hy = gauss_expect(lambda t: se(t, y, l), m.mu, m.delta_sq)
    s = gauss_expect(lambda t: gauss_expect(lambda r: se(r, t, l), m.mu, m.delta_sq),
                     m.mu, m.delta_sq)
    expected = se(x, y, l) - np.outer(hx, hy) / s
    got = constrained_se_gaussian(l, m, x[:, None], y[None, :])
    assert np.allclose(got, expected, rtol=1e-12, atol=1e-14)


def test_gaussian_constrained_small_variance_limit():
    l, mu = 0.9, 0.25
    m = GaussianMeasure(mu, 1e-12)
    x, y = 0.8, -0.4
    limit = se(x, y, l) - se(x, mu, l) * se(y, mu, l)
    assert constrained_se_gaussian(l, m, x, y) == pytest.approx(float(limit), abs=1e-6)


def test_mixture_with_one_component_reduces_to_gaussian():
    g = GaussianMeasure(0.3, 1.4)
    m = MixtureMeasure((1.0,), (0.3,), (1.4,))
    x = np.linspace(-3, 3, 13)
    a = constrained_se_mixture(0.7, m, x[:, None], x[None, :])
    b = constrained_se_gaussian(0.7, g, x[:, None], x[None, :])
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_mixture_constrained_matches_quadrature_at_origin():
    l = 1.0
    h0 = mixture_expect(lambda t: se(t, 0.0, l), MIX2.weights, MIX2.means, MIX2.variances)
    s = mixture_expect(lambda t: mixture_expect(lambda r: se(r, t, l), MIX2.weights,
                                                MIX2.means, MIX2.variances),
                       MIX2.weights, MIX2.means, MIX2.variances)
    expected = 1.0 - float(h0) ** 2 / float(s)
    assert constrained_se_mixture(l, MIX2, 0.0, 0.0) == pytest.approx(expected, abs=1e-7)


def test_empirical_single_atom_is_rank_one_correction():
    k = SeKernel(0.6)
    m = EmpiricalMeasure((0.4,), (1.0,))
    x, y = np.array([-0.5, 0.1, 1.2]), np.array([0.0, 0.9, -1.0])
    expected = se(x, y, 0.6) - np.outer(se(x, 0.4, 0.6), se(y, 0.4, 0.6))
    assert np.allclose(constrained_empirical(k, m, x[:, None], y[None, :]), expected,
                       rtol=1e-13)


def test_empirical_matches_explicit_double_sum():
    rng = np.random.default_rng(2)
    k = SeKernel(0.7)
    loc, w = np.asarray(EMP.locations), np.asarray(EMP.weights)
    for x, y in rng.uniform(-2, 2, size=(10, 2)):
        hx = sum(w[i] * np.exp(-0.5 * (x - loc[i]) ** 2 / 0.49) for i in range(20))
        hy = sum(w[j] * np.exp(-0.5 * (y - loc[j]) ** 2 / 0.49) for j in range(20))
        s = sum(w[i] * w[j] * np.exp(-0.5 * (loc[i] - loc[j]) ** 2 / 0.49)
                for i in range(20) for j in range(20))
        expected = np.exp(-0.5 * (x - y) ** 2 / 0.49) - hx * hy / s
        assert constrained_empirical(k, EMP, x, y) == pytest.approx(expected, rel=1e-12)


def test_empirical_integrates_to_zero_over_atoms():
    loc, w = np.asarray(EMP.locations), np.asarray(EMP.weights)
    K = constrained_empirical(SeKernel(0.7), EMP, loc[:, None], loc[None, :])
    assert abs(w @ K @ w) < 1e-10


# -- categorical ---------------------------------------------------------------

def test_categorical_identity_uniform_gives_centering_matrix():
    B = constrained_categorical(CategoricalKernel(np.zeros((3, 1)), np.ones(3)),
                                CategoricalMeasure((1 / 3, 1 / 3, 1 / 3)))
    assert np.allclose(B, np.eye(3) - np.ones((3, 3)) / 3, atol=1e-15)


def test_categorical_skewed_weights_expectation_vanishes():
    w = np.array([0.9, 0.1])
    B = constrained_categorical(CategoricalKernel(np.zeros((2, 1)), np.ones(2)),
                                CategoricalMeasure(tuple(w)))
    assert abs(w @ B @ w) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**31))
def test_categorical_annihilates_weights(M, R, seed):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((M, R))
    kappa = rng.uniform(0.01, 2.0, M)
    w = rng.dirichlet(np.ones(M))
    B = constrained_categorical(CategoricalKernel(W, kappa), CategoricalMeasure(tuple(w)))
    assert np.allclose(B @ w, 0.0, atol=1e-10)
    assert np.allclose(B, B.T)
    assert np.linalg.eigvalsh(B).min() > -1e-10


def test_categorical_degenerate_pair_errors():
    k = CategoricalKernel(np.zeros((2, 1)), np.array([0.0, 1.0]))
    with pytest.raises(NumericalError):
        constrained_categorical(k, CategoricalMeasure((1.0, 0.0)))


def test_categorical_level_out_of_range():
    kern = ConstrainedCategorical(CategoricalKernel(np.ones((2, 1)), np.ones(2)),
                                  CategoricalMeasure((0.5, 0.5)))
    with pytest.raises(ConfigError):
        kern.gram(np.array([0.0, 2.0]))
    with pytest.raises(ConfigError):
        kern.gram(np.array([0.5]))


# -- orthogonality -------------------------------------------------------------

CONTINUOUS_CASES = [
    ("gaussian", ConstrainedSE(0.7, GaussianMeasure(0.0, 1.0))),
    ("gaussian-shifted", ConstrainedSE(1.6, GaussianMeasure(-0.5, 2.3))),
    ("mixture-2", ConstrainedSE(1.0, MIX2)),
    ("mixture-3", ConstrainedSE(0.8, MIX3)),
]


def _expect_under(kernel, f):
    m = kernel.measure
    if isinstance(m, GaussianMeasure):
        return gauss_expect(f, m.mu, m.delta_sq)
    if isinstance(m, MixtureMeasure):
        return mixture_expect(f, m.weights, m.means, m.variances)
    loc, w = np.asarray(m.locations), np.asarray(m.weights)
    return np.tensordot(w, f(loc), axes=(0, 0))


@pytest.mark.parametrize("name,kernel", CONTINUOUS_CASES + [
    ("empirical", ConstrainedSE(0.7, EMP))])
def test_first_order_orthogonality(name, kernel):
    xp = np.random.default_rng(11).uniform(-3, 3, 50)
    integral = _expect_under(kernel, lambda t: kernel.gram(t, xp))
    assert np.max(np.abs(integral)) < 1e-7


def test_categorical_orthogonality_exact_sum():
    rng = np.random.default_rng(4)
    kern = ConstrainedCategorical(CategoricalKernel(rng.standard_normal((4, 2)),
                                                    rng.uniform(0.1, 1, 4)),
                                  CategoricalMeasure((0.1, 0.2, 0.3, 0.4)))
    levels = np.arange(4.0)
    xp = rng.integers(0, 4, 50).astype(float)
    integral = np.asarray(kern.measure.probabilities) @ kern.gram(levels, xp)
    assert np.max(np.abs(integral)) < 1e-7


def test_second_order_marginal_orthogonality():
    k1 = ConstrainedSE(0.9, GaussianMeasure(0.0, 1.0))
    k2 = ConstrainedSE(1.3, MIX2)
    rng = np.random.default_rng(8)
    for x2, x1p, x2p in rng.uniform(-2, 2, size=(20, 3)):
        val = gauss_expect(lambda t: k1.gram(t, np.array([x1p]))[:, 0], 0.0, 1.0)
        val = val * k2.gram(np.array([x2]), np.array([x2p]))[0, 0]
        assert abs(val) < 1e-7


def test_oak_gram_nonconstant_part_integrates_to_zero_on_grid():
    hp = OakHyperparams((ConstrainedSE(0.8, GaussianMeasure(0, 1)),
                         ConstrainedSE(1.2, GaussianMeasure(0, 1))), (0.5, 1.0, 0.7), 0.1, 2)
    from numpy.polynomial.hermite_e import hermegauss

    t, w = hermegauss(48)
    w = w / np.sqrt(2 * np.pi)
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    Xq = np.column_stack([T1.ravel(), T2.ravel()])
    wq = np.outer(w, w).ravel()
    Xp = np.random.default_rng(0).uniform(-1.5, 1.5, size=(15, 2))
    K = oak_gram(Xq, Xp, hp) - hp.order_variances[0]
    assert np.max(np.abs(wq @ K)) < 1e-6


# -- PSD -----------------------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**31))
def test_oak_gram_is_psd(n, seed):
    rng = np.random.default_rng(seed)
    kernels = (ConstrainedSE(float(rng.uniform(0.3, 2)), GaussianMeasure(0, 1)),
               ConstrainedSE(float(rng.uniform(0.3, 2)), MIX3),
               ConstrainedSE(float(rng.uniform(0.3, 2)), EMP),
               ConstrainedCategorical(CategoricalKernel(rng.standard_normal((3, 1)), np.ones(3)),
                                      CategoricalMeasure((0.2, 0.3, 0.5))))
    hp = OakHyperparams(kernels, tuple(rng.uniform(0, 2, 4)), 0.1, 3)
    X = np.column_stack([rng.normal(size=n), rng.normal(size=n), rng.uniform(-1, 1, n),
                         rng.integers(0, 3, n)])
    K = oak_gram(X, X, hp)
    K = 0.5 * (K + K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.trace(K)
    assert np.allclose(np.diag(K), oak_diag(X, hp), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("name,kernel", CONTINUOUS_CASES)
def test_feature_gram_psd_and_symmetric(name, kernel):
    x = np.random.default_rng(1).normal(size=40)
    K = kernel.gram(x)
    assert np.allclose(K, K.T, atol=1e-15)
    assert np.linalg.eigvalsh(K).min() > -1e-9


# -- Newton-Girard -------------------------------------------------------------

def test_newton_girard_all_ones():
    K = np.ones((3, 3))
    assert np.allclose(newton_girard_gram([K, K], (1.0, 1.0, 1.0)), 4.0)


def test_newton_girard_single_feature():
    K = random_psd(np.random.default_rng(0), 5)
    assert np.allclose(newton_girard_gram([K], (0.3, 2.0)), 0.3 + 2.0 * K, rtol=0, atol=0)


@pytest.mark.parametrize("D", range(1, 7))
def test_newton_girard_matches_brute_force(D):
    rng = np.random.default_rng(D)
    for order in range(0, D + 1):
        grams = [random_psd(rng, 16) for _ in range(D)]
        var = tuple(rng.uniform(0.1, 2.0, order + 1))
        got = newton_girard_gram(grams, var)
        ref = brute_force_additive(grams, var)
        assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)


def test_newton_girard_shape_and_order_errors():
    with pytest.raises(ConfigError):
        newton_girard_gram([np.eye(3), np.eye(4)], (1.0, 1.0))
    with pytest.raises(ConfigError):
        newton_girard_gram([np.eye(3)], (1.0, 1.0, 1.0))


@pytest.mark.parametrize("D", [1, 3])
def test_product_form_equals_full_order_sum(D):
    rng = np.random.default_rng(7)
    grams = [random_psd(rng, 6) for _ in range(D)]
    a = product_form_gram(grams, 1.7)
    b = newton_girard_gram(grams, (1.7,) * (D + 1))
    assert np.allclose(a, b, rtol=1e-12)
    assert np.allclose(product_form_gram([np.zeros((2, 2))] * D, 1.7), 1.7)


def test_oak_gram_single_point_full_order():
    kernels = (ConstrainedSE(0.8, GaussianMeasure(0, 1)), ConstrainedSE(1.1, MIX2),
               ConstrainedSE(0.5, EMP))
    hp = OakHyperparams(kernels, (1.0, 1.0, 1.0, 1.0), 0.1, 3)
    x = np.array([[0.3, -0.2, 0.1]])
    d = [k.diag(x[:, i])[0] for i, k in enumerate(kernels)]
    expected = (1 + d[0]) * (1 + d[1]) * (1 + d[2])
    assert oak_gram(x, x, hp)[0, 0] == pytest.approx(expected, rel=1e-13)


def test_oak_gram_constant_only():
    hp = OakHyperparams((ConstrainedSE(1.0),) * 2, (0.4, 0.0, 0.0), 0.1, 2)
    X = np.random.default_rng(0).normal(size=(5, 2))
    assert np.allclose(oak_gram(X, X, hp), 0.4)


def test_oak_gram_feature_count_mismatch():
    hp = OakHyperparams((ConstrainedSE(1.0),) * 2, (1.0, 1.0), 0.1, 1)
    with pytest.raises(ConfigError):
        oak_gram(np.zeros((3, 3)), None, hp)


def test_hyperparams_validation():
    with pytest.raises(ConfigError):
        OakHyperparams((ConstrainedSE(1.0),), (1.0, 1.0, 1.0), 0.1, 2)
    with pytest.raises(ConfigError):
        OakHyperparams((ConstrainedSE(1.0),), (1.0, -1.0), 0.1, 1)
    with pytest.raises(ConfigError):
        OakHyperparams((ConstrainedSE(1.0),), (1.0, 1.0), 0.0, 1)


# -- parameter jacobians -------------------------------------------------------

JAC_CASES = CONTINUOUS_CASES + [
    ("empirical", ConstrainedSE(0.7, EMP)),
    ("categorical", ConstrainedCategorical(
        CategoricalKernel(np.array([[0.5, -0.2], [1.0, 0.3], [-0.4, 0.8]]), np.array([0.5, 1, 2])),
        CategoricalMeasure((0.2, 0.5, 0.3)))),
]


@pytest.mark.parametrize("name,kernel", JAC_CASES)
def test_gram_jacobian_matches_finite_difference(name, kernel):
    rng = np.random.default_rng(3)
    if name == "categorical":
        x = rng.integers(0, 3, 12).astype(float)
    else:
        x = rng.normal(size=12)
    G = rng.standard_normal((12, 12))
    K, jac = kernel.gram_and_jac(x)
    assert np.allclose(K, kernel.gram(x), rtol=1e-14, atol=1e-15)
    got = jac.contract(G)
    theta = kernel.params
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = 1e-6
        fd = (np.sum(G * kernel.with_params(theta + e).gram(x))
              - np.sum(G * kernel.with_params(theta - e).gram(x))) / 2e-6
        assert got[j] == pytest.approx(fd, rel=1e-6, abs=1e-8)


@pytest.mark.parametrize("name,kernel", JAC_CASES)
def test_feature_kernel_serialization(name, kernel):
    back = feature_kernel_from_dict(kernel.to_dict())
    x = np.array([0.0, 1.0, 2.0]) if name == "categorical" else np.array([-1.0, 0.2, 0.9])
    assert np.array_equal(back.gram(x), kernel.gram(x))
