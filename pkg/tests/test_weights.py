import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fuseclust.exceptions import ConnectivityWarning, DegenerateInputError
from fuseclust.losses import surv
from fuseclust.weights import (
    WeightGraph,
    build_weights,
    column_weights,
    default_alpha,
    feature_ranges,
    gower_distance,
    gower_matrix,
    gower_y,
    gower_y_matrix,
    graph_from_distances,
)

finite = st.floats(-100, 100, allow_nan=False, allow_subnormal=False)


def data(n_min=4, n_max=9, p_max=4):
    return st.integers(n_min, n_max).flatmap(
        lambda n: st.integers(1, p_max).flatmap(lambda p: arrays(float, (n, p), elements=finite))
    )


# ---------------------------------------------------------------- Gower

def test_gower_distance_examples():
    assert gower_distance([1.0, 2.0], [1.0, 2.0], [3.0, 4.0]) == 0.0
    assert gower_distance([0, 0], [1, 2], [1, 2]) == pytest.approx(1.0)
    assert gower_distance([0, 5], [1, 5], [1, 0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        gower_distance([0, 1], [0, 1, 2], [1, 1])


def test_gower_categorical_mismatch():
    assert gower_distance([1.0, 3.0], [1.0, 4.0], [1.0, 1.0], categorical=[False, True]) == 0.5


def test_gower_matrix_matches_pairwise():
    X = np.array([[0.0, 1.0], [2.0, 1.0], [1.0, 5.0]])
    G = gower_matrix(X)
    r = feature_ranges(X)
    for i in range(3):
        for j in range(3):
            assert G[i, j] == pytest.approx(gower_distance(X[i], X[j], r))


def test_gower_y_examples():
    assert gower_y(2.0, 2.0, "multinomial(3)") == 0.0
    assert gower_y(0.0, 1.0, "bernoulli") == 1.0
    assert gower_y(1.0, 2.0, "gaussian", y_range=4.0) == pytest.approx(0.25)
    assert gower_y([1, 2.0], [0, 3.0], "cox", y_range=4.0) == 0.5
    assert gower_y([0, 1.0], [0, 9.0], "cox", y_range=4.0) == 1.0


def test_gower_y_matrix_cox():
    y = surv([1, 1, 0], [1.0, 3.0, 2.0])
    G = gower_y_matrix("cox", y)
    assert G[0, 1] == pytest.approx(1.0)
    assert G[0, 2] == 0.5 and G[1, 2] == 0.5


@given(data())
def test_gower_symmetric_and_bounded(X):
    G = gower_matrix(X)
    np.testing.assert_allclose(G, G.T)
    assert np.all((G >= 0) & (G <= 1))
    np.testing.assert_allclose(np.diag(G), 0.0)


@given(data(), st.floats(0.01, 100), st.integers(0, 3))
def test_gower_scale_invariance(X, c, col):
    col = col % X.shape[1]
    Y = X.copy()
    Y[:, col] *= c
    np.testing.assert_allclose(gower_matrix(Y), gower_matrix(X), atol=1e-12)


# ---------------------------------------------------------------- alpha

def test_default_alpha_examples(monkeypatch):
    X = np.array([[0.0], [2.0]])  # unhalved deviation 2
    assert default_alpha(X, "gaussian", [0.0, 2.0 * np.sqrt(2)]) == pytest.approx(0.5)
    assert default_alpha(X, "gaussian", [1.0, 1.0]) == 0.0
    with pytest.raises(DegenerateInputError):
        default_alpha(np.ones((3, 2)), "gaussian", [1.0, 1.0, 1.0])
    import fuseclust.weights as W

    monkeypatch.setattr(W, "null_deviance", lambda fam, y: 3.0)
    assert default_alpha(np.array([[0.0], [1.0 / np.sqrt(2)], [-1 / np.sqrt(2)]]) * 1.0, "gaussian",
                         [0, 1, 2]) == pytest.approx(0.75)


# ---------------------------------------------------------------- graphs

def test_three_points_on_a_line():
    X = np.array([[0.0], [1.0], [3.0]])
    g = build_weights(X, k=1)
    assert g.edges.tolist() == [[0, 1], [1, 2]]


def test_phi_zero_gives_unit_weights():
    X = np.random.default_rng(0).normal(size=(10, 3))
    g = build_weights(X, np.arange(10.0), "gaussian", phi=0.0)
    np.testing.assert_array_equal(g.weights, 1.0)


def test_alpha_zero_matches_unsupervised_graph():
    r = np.random.default_rng(1)
    X = r.normal(size=(12, 3))
    a = build_weights(X, r.normal(size=12), "gaussian", alpha=0.0)
    b = build_weights(X)
    np.testing.assert_array_equal(a.edges, b.edges)
    np.testing.assert_allclose(a.weights, b.weights)


def test_default_phi_maps_median_to_half():
    X = np.random.default_rng(2).normal(size=(15, 2))
    g = build_weights(X)
    assert np.median(g.weights) == pytest.approx(0.5)


def test_column_weights_examples():
    X = np.random.default_rng(3).normal(size=(8, 3))
    X[:, 2] = X[:, 0]
    g = column_weights(X, k=1)
    assert g.n == 3
    i = g.edges.tolist().index([0, 2])
    assert g.weights[i] == pytest.approx(g.weights.max())
    assert g.weights[i] == 1.0
    np.testing.assert_array_equal(column_weights(X, k=1, phi=0.0).weights, 1.0)
    # p=3, k=1 on a line: only adjacent columns
    Y = np.tile([0.0, 1.0, 3.0], (4, 1)) * np.arange(1, 5)[:, None]
    assert column_weights(Y, k=1).edges.tolist() == [[0, 1], [1, 2]]


def test_disconnected_graph_is_repaired():
    X = np.array([[0.0], [0.1], [0.2], [10.0], [10.1], [10.2]])
    with pytest.warns(ConnectivityWarning):
        g = build_weights(X, k=1)
    assert g.is_connected and g.warning


def test_weight_graph_validation():
    with pytest.raises(ValueError):
        WeightGraph(3, [[1, 0]], [1.0])
    with pytest.raises(ValueError):
        WeightGraph(3, [[0, 1], [0, 1]], [1.0, 1.0])
    with pytest.raises(ValueError):
        WeightGraph(3, [[0, 1]], [-1.0])


def test_weight_csv_round_trip(tmp_path):
    g = build_weights(np.random.default_rng(4).normal(size=(9, 2)))
    g.to_csv(tmp_path / "w.csv")
    h = WeightGraph.from_csv(tmp_path / "w.csv", n=9)
    np.testing.assert_array_equal(h.edges, g.edges)
    np.testing.assert_array_equal(h.weights, g.weights)


@given(data(n_min=5), st.integers(1, 3))
def test_knn_degree_and_weight_bounds(X, k):
    g = build_weights(X, k=k)
    deg = np.bincount(g.edges.ravel(), minlength=g.n)
    distinct = len(np.unique(X, axis=0))
    if distinct == X.shape[0]:
        assert deg.min() >= k
    assert np.all((g.weights >= 0) & (g.weights <= 1))
    assert g.is_connected


@given(data(n_min=5), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_weights_monotone_in_phi(X, a, b):
    lo, hi = sorted([a, b])
    g1 = build_weights(X, k=2, phi=lo)
    g2 = build_weights(X, k=2, phi=hi)
    np.testing.assert_array_equal(g1.edges, g2.edges)
    assert np.all(g2.weights <= g1.weights + 1e-15)


@given(st.integers(0, 2**31))
def test_graph_independent_of_row_order(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(10, 3))
    y = r.normal(size=10)
    perm = r.permutation(10)
    g = build_weights(X, y, "gaussian")
    h = build_weights(X[perm], y[perm], "gaussian")
    mapped = {tuple(sorted((perm[i], perm[j]))): w for (i, j), w in zip(h.edges.tolist(), h.weights)}
    orig = {tuple(e): w for e, w in zip(g.edges.tolist(), g.weights)}
    assert mapped.keys() == orig.keys()
    for e, w in orig.items():
        assert mapped[e] == pytest.approx(w, rel=1e-12)


def test_graph_from_distances_rejects_negative_phi():
    with pytest.raises(ValueError):
        graph_from_distances(np.array([[0.0, 1.0], [1.0, 0.0]]), k=1, phi=-1.0)


def test_column_k_is_capped_for_few_features():
    X = np.random.default_rng(5).normal(size=(6, 3))
    g = column_weights(X)
    assert g.edges.tolist() == [[0, 1], [0, 2], [1, 2]]
    with pytest.raises(ValueError):
        column_weights(X[:, :1])
