import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuseclust.adaptive import adaptive_fit, adjusted_weights, residualize_y
from fuseclust.losses import surv
from fuseclust.selection import adjusted_rand_index
from fuseclust.weights import build_weights


def small_problem(seed, d=2, n=24):
    r = np.random.default_rng(seed)
    labels = np.repeat([1, 2, 3], n // 3)
    X = 4.0 * np.eye(3, 2)[labels - 1] + 0.3 * r.normal(size=(n, 2))
    Z = r.normal(size=(n, d))
    beta = np.array([2.0, -1.0])[:d]
    y = labels + Z @ beta + 0.05 * r.normal(size=n)
    return X, y, Z, beta, labels


# ---------------------------------------------------------------- residualize

def test_residualize_examples():
    Z = np.array([[1.0], [2.0]])
    np.testing.assert_array_equal(residualize_y("gaussian", [1.0, 2.0], Z, [0.0]), [1.0, 2.0])
    assert residualize_y("gaussian", [5.0], [[1.0]], [2.0])[0] == pytest.approx(3.0)
    assert residualize_y("poisson", [8.0], [[1.0]], [np.log(2.0)])[0] == pytest.approx(4.0)
    # a boundary response is clipped on the link scale, then shifted
    with pytest.warns(Warning):
        v = residualize_y("bernoulli", [1.0], [[1.0]], [1.0])[0]
    assert v == pytest.approx(1.0 / (1.0 + np.exp(-29.0)), rel=1e-12)


def test_residualize_cox_scales_times():
    y = surv([1, 0], [2.0, 3.0])
    out = residualize_y("cox", y, [[1.0], [0.0]], [np.log(2.0)])
    np.testing.assert_allclose(out[:, 0], [1.0, 0.0])
    np.testing.assert_allclose(out[:, 1], [4.0, 3.0])


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.floats(-2, 2))
def test_residualize_round_trip(vals, b):
    y = np.array(vals)
    Z = np.linspace(-1, 1, y.size)[:, None]
    yhat = residualize_y("gaussian", y, Z, [b])
    np.testing.assert_allclose(yhat + b * Z[:, 0], y, atol=1e-12)


@settings(max_examples=20)
@given(st.lists(st.integers(1, 20), min_size=2, max_size=8), st.floats(-1, 1))
def test_residualize_poisson_is_multiplicative(counts, b):
    y = np.array(counts, dtype=float)
    Z = np.ones((y.size, 1))
    np.testing.assert_allclose(residualize_y("poisson", y, Z, [b]), y * np.exp(-b), rtol=1e-12)


# ---------------------------------------------------------------- weights

def test_true_beta_recovers_covariate_free_weights():
    X, y, Z, beta, labels = small_problem(0)
    clean = y - Z @ beta
    g = adjusted_weights(X, "gaussian", residualize_y("gaussian", y, Z, beta))
    h = adjusted_weights(X, "gaussian", clean)
    np.testing.assert_array_equal(g.edges, h.edges)
    np.testing.assert_allclose(g.weights, h.weights, rtol=1e-10)


def test_adjusted_weights_match_standard_builder_for_gaussian():
    X, y, _, _, _ = small_problem(1)
    g = adjusted_weights(X, "gaussian", y)
    h = build_weights(X, y, "gaussian")
    np.testing.assert_array_equal(g.edges, h.edges)
    np.testing.assert_allclose(g.weights, h.weights, rtol=1e-10)


# ---------------------------------------------------------------- pipeline

def test_requires_covariates():
    X, y, _, _, _ = small_problem(2)
    with pytest.raises(ValueError):
        adaptive_fit(X, y, "gaussian", None, K=3)


def test_zero_covariates_reuse_stage_one():
    X, y, _, _, _ = small_problem(3)
    res = adaptive_fit(X, y, "gaussian", np.zeros((X.shape[0], 1)), K=3, exact=False)
    assert res.stage2_graph is res.stage1_graph
    np.testing.assert_array_equal(res.y_adjusted, y)
    assert res.lam == res.stage1_lam


def test_stage_two_graph_depends_only_on_beta_hat(monkeypatch):
    X, y, Z, beta, _ = small_problem(4)
    import fuseclust.adaptive as A

    fixed = {}

    def fake_select(prob, *args, **kw):
        pt = real(prob, *args, **kw)
        if "beta" not in fixed:
            fixed["beta"] = pt.fit.beta.copy()
            pt.fit.beta = beta[:, None].copy()
        return pt

    real = A._select
    monkeypatch.setattr(A, "_select", fake_select)
    res = adaptive_fit(X, y, "gaussian", Z, K=3, exact=False)
    expect = adjusted_weights(X, "gaussian", y - Z @ beta)
    np.testing.assert_array_equal(res.stage2_graph.edges, expect.edges)
    np.testing.assert_allclose(res.stage2_graph.weights, expect.weights, rtol=1e-10)


def test_adaptive_recovers_groups_under_strong_covariates():
    X, y, Z, beta, labels = small_problem(5)
    res = adaptive_fit(X, y, "gaussian", Z, K=3, exact=False)
    np.testing.assert_allclose(res.beta_hat[:, 0], beta, atol=0.3)
    assert adjusted_rand_index(res.assignment.labels, labels) == 1.0
