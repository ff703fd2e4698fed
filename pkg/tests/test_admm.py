import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fuseclust.admm import (
    FitState,
    SCCProblem,
    SolverOptions,
    U_system_factorize,
    build_difference_matrix,
    objective,
    prox_group_lasso,
    scc_solve,
)
from fuseclust.losses import one_hot, surv
from fuseclust.weights import WeightGraph, build_weights

from .oracles import scc_optimum

TIGHT = SolverOptions(tol_abs=1e-10, tol_rel=1e-9, max_iter=200_000)


def path_graph(n, w=None):
    edges = [[i, i + 1] for i in range(n - 1)]
    return WeightGraph(n, edges, np.ones(n - 1) if w is None else w)


def complete_graph(n, rng=None):
    edges = [[i, j] for i in range(n) for j in range(i + 1, n)]
    w = np.ones(len(edges)) if rng is None else rng.uniform(0.2, 1.0, len(edges))
    return WeightGraph(n, edges, w)


# ---------------------------------------------------------------- linear algebra

def test_difference_matrix_examples():
    D = build_difference_matrix(WeightGraph(2, [[0, 1]], [1.0])).toarray()
    np.testing.assert_array_equal(D, [[1.0, -1.0]])
    g = path_graph(4)
    D = build_difference_matrix(g)
    np.testing.assert_array_equal(D @ np.ones((4, 3)), 0.0)
    lap = np.array([[1, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]], dtype=float)
    np.testing.assert_array_equal((D.T @ D).toarray(), lap)


def test_difference_matrix_rows():
    g = complete_graph(5)
    D = build_difference_matrix(g).toarray()
    assert np.all((D == 1).sum(axis=1) == 1) and np.all((D == -1).sum(axis=1) == 1)
    for l, (i, j) in enumerate(g.edges):
        assert D[l, i] == 1 and D[l, j] == -1


def test_u_system_solves(rng):
    g = complete_graph(6, rng)
    S = U_system_factorize(g, 0.3, 2.0)
    D = build_difference_matrix(g).toarray()
    b = rng.normal(size=(6, 2))
    x = S.solve(b)
    np.testing.assert_allclose((0.3 * np.eye(6) + 2.0 * D.T @ D) @ x, b, atol=1e-12)


# ---------------------------------------------------------------- prox

def test_prox_examples():
    V = np.array([[3.0, 4.0], [0.3, 0.4]])
    np.testing.assert_array_equal(prox_group_lasso(V, [1.0, 1.0], 0.0), V)
    row = np.array([[np.sqrt(2), np.sqrt(2)]])
    np.testing.assert_allclose(prox_group_lasso(row, [1.0], 1.0), row / 2, rtol=1e-15)
    np.testing.assert_array_equal(prox_group_lasso(V[1:], [1.0], 1.0), 0.0)


@given(arrays(float, (6, 3), elements=st.floats(-10, 10)), st.floats(0, 5),
       arrays(float, 6, elements=st.floats(0, 3)))
def test_prox_is_the_minimizer(V, tau, w):
    P = prox_group_lasso(V, w, tau)
    # optimality: each row minimizes 0.5||x - v||^2 + tau w ||x||
    for v, p, wl in zip(V, P, w):
        f = lambda x: 0.5 * np.sum((x - v) ** 2) + tau * wl * np.linalg.norm(x)  # noqa: E731
        base = f(p)
        for d in np.eye(3):
            assert f(p + 1e-4 * d) >= base - 1e-12
            assert f(p - 1e-4 * d) >= base - 1e-12


# ---------------------------------------------------------------- objective

def test_objective_by_hand():
    X = np.array([[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]])
    y = np.array([0.5, 1.0, -1.0])
    g = WeightGraph(3, [[0, 1], [1, 2]], [0.5, 2.0])
    U = np.array([[1.0, 1.0], [0.0, 0.0], [2.0, 0.0]])
    theta = np.array([[0.0], [1.0], [1.0]])
    fit = FitState(U, theta, np.zeros((0, 1)), None, None, 1.0)
    val = objective(X, y, "gaussian", None, fit, 0.7, (0.4, 1.5), g)
    fid = 0.5 * 0.4 * (0 + 1 + 0 + 1 + 1 + 1)
    loss = 1.5 * 0.5 * (0.25 + 0 + 4)
    pen = 0.7 * (0.5 * np.sqrt(1 + 1 + 1) + 2.0 * np.sqrt(0 + 4 + 0))
    assert val == pytest.approx(fid + loss + pen, rel=1e-14)


def test_objective_penalty_vanishes_when_fused():
    X = np.random.default_rng(0).normal(size=(4, 2))
    g = complete_graph(4)
    fit = FitState(np.ones((4, 2)), np.full((4, 1), 2.0), np.zeros((0, 1)), None, None, 1.0)
    y = np.arange(4.0)
    assert objective(X, y, "gaussian", None, fit, 100.0, (1.0, 1.0), g) == pytest.approx(
        objective(X, y, "gaussian", None, fit, 0.0, (1.0, 1.0), g))


def test_objective_minimal_at_lambda_zero_fit(rng):
    X = rng.normal(size=(5, 2))
    y = rng.normal(size=5)
    g = complete_graph(5)
    fit = FitState(X.copy(), y[:, None].copy(), np.zeros((0, 1)), None, None, 1.0)
    base = objective(X, y, "gaussian", None, fit, 0.0, (1.0, 1.0), g)
    for _ in range(10):
        other = FitState(X + 0.1 * rng.normal(size=X.shape), fit.theta + 0.1, fit.beta, None, None, 1.0)
        assert objective(X, y, "gaussian", None, other, 0.0, (1.0, 1.0), g) > base


# ---------------------------------------------------------------- solver

def test_lambda_zero_recovers_data():
    r = np.random.default_rng(1)
    X = r.normal(size=(8, 3))
    y = r.normal(size=8)
    g = build_weights(X, y, "gaussian", k=3)
    fit, rep = scc_solve(X, y, "gaussian", g, 0.0)
    assert rep.converged
    np.testing.assert_allclose(fit.U, X, atol=1e-8)
    fit, rep = scc_solve(X, y, "gaussian", g, 0.0, opts=TIGHT)
    np.testing.assert_allclose(fit.theta[:, 0], y, atol=1e-8)


def test_large_lambda_fuses_to_column_means():
    r = np.random.default_rng(2)
    X = r.normal(size=(9, 2))
    y = r.normal(size=9)
    g = build_weights(X, k=2)
    fit, rep = scc_solve(X, y, "gaussian", g, 1e6, pi=(1.0, 0.0), opts=TIGHT)
    np.testing.assert_allclose(fit.U, np.tile(X.mean(axis=0), (9, 1)), atol=1e-6)


@pytest.mark.parametrize("kind", ["gaussian", "poisson", "bernoulli"])
def test_matches_convex_oracle(kind):
    r = np.random.default_rng({"gaussian": 3, "poisson": 4, "bernoulli": 5}[kind])
    n, p = 6, 2
    X = r.normal(size=(n, p))
    y = {"gaussian": r.normal(size=n), "poisson": r.poisson(2.0, n).astype(float),
         "bernoulli": np.array([0, 1, 0, 1, 1, 0], dtype=float)}[kind]
    g = complete_graph(n, r)
    prob = SCCProblem(X, y, kind, g)
    lam = 0.3 * prob.pi_X
    fit, rep = prob.solve(lam, opts=TIGHT)
    assert rep.converged
    ref = scc_optimum(X, y, kind, g.edges.tolist(), g.weights, lam, prob.pi_X, prob.pi_y)
    assert prob.objective(fit, lam) == pytest.approx(ref, rel=1e-4)


def test_matches_convex_oracle_with_covariates():
    r = np.random.default_rng(6)
    n = 7
    X = r.normal(size=(n, 2))
    Z = r.normal(size=(n, 2))
    y = r.normal(size=n) + Z @ [1.0, -0.5]
    g = complete_graph(n, r)
    prob = SCCProblem(X, y, "gaussian", g, Z=Z)
    lam = 0.5 * prob.pi_X
    fit, rep = prob.solve(lam, opts=TIGHT)
    ref = scc_optimum(X, y, "gaussian", g.edges.tolist(), g.weights, lam, prob.pi_X, prob.pi_y, Z=Z)
    assert prob.objective(fit, lam) == pytest.approx(ref, rel=1e-4)


def test_converged_report_is_consistent():
    r = np.random.default_rng(7)
    X = r.normal(size=(10, 2))
    y = r.normal(size=10)
    fit, rep = scc_solve(X, y, "gaussian", build_weights(X, y, "gaussian", k=3), 0.05)
    assert rep.converged and rep.primal_residual >= 0 and rep.dual_residual >= 0
    assert rep.objective == pytest.approx(rep.objective_trace[-1])


def test_non_convergence_is_reported_not_raised():
    r = np.random.default_rng(8)
    X = r.normal(size=(10, 2))
    y = r.normal(size=10)
    fit, rep = scc_solve(X, y, "gaussian", build_weights(X, k=3), 0.05,
                         opts=SolverOptions(max_iter=2))
    assert not rep.converged and rep.iterations == 2


def test_negative_lambda_rejected():
    X = np.random.default_rng(9).normal(size=(4, 2))
    with pytest.raises(ValueError):
        scc_solve(X, np.arange(4.0), "gaussian", complete_graph(4), -1.0)


def test_multinomial_coefficients_sum_to_zero():
    r = np.random.default_rng(10)
    n = 12
    X = r.normal(size=(n, 2))
    Z = r.normal(size=(n, 2))
    y = one_hot(r.integers(0, 3, n), 3)
    fit, rep = scc_solve(X, y, "multinomial(3)", build_weights(X, k=3), 0.01, Z=Z,
                         opts=SolverOptions(max_iter=500))
    assert fit.theta.shape == (n, 3) and fit.beta.shape == (2, 3)
    np.testing.assert_allclose(fit.beta.sum(axis=1), 0.0, atol=1e-12)


def test_cox_without_covariates_solves():
    r = np.random.default_rng(11)
    n = 10
    X = r.normal(size=(n, 2))
    y = surv(r.integers(0, 2, n), r.exponential(1.0, n) + 0.01)
    y[0, 0] = 1.0
    fit, rep = scc_solve(X, y, "cox", build_weights(X, k=3), 1e-3)
    assert fit.beta.shape == (0, 1)
    assert np.all(np.isfinite(fit.theta))


@given(st.integers(0, 2**31))
def test_two_starts_reach_the_same_objective(seed):
    r = np.random.default_rng(seed)
    n = 7
    X = r.normal(size=(n, 2))
    y = r.normal(size=n)
    g = complete_graph(n, r)
    prob = SCCProblem(X, y, "gaussian", g)
    lam = r.uniform(0.05, 1.0) * prob.pi_X
    a, _ = prob.solve(lam, opts=TIGHT)
    start = prob.initial_state(TIGHT.rho)
    start.U = r.normal(scale=3.0, size=X.shape)
    start.theta = r.normal(scale=3.0, size=(n, 1))
    b, _ = prob.solve(lam, opts=TIGHT, init=start)
    assert prob.objective(a, lam) == pytest.approx(prob.objective(b, lam), rel=1e-5)


def test_warm_and_cold_starts_agree():
    r = np.random.default_rng(12)
    X = r.normal(size=(15, 3))
    y = r.normal(size=15)
    prob = SCCProblem(X, y, "gaussian", build_weights(X, y, "gaussian"))
    lam1, lam2 = 0.5 * prob.pi_X, 0.8 * prob.pi_X
    warm, _ = prob.solve(lam1)
    a, _ = prob.solve(lam2, init=warm)
    b, _ = prob.solve(lam2)
    assert prob.objective(a, lam2) == pytest.approx(prob.objective(b, lam2), rel=1e-4)


def test_gradient_theta_update_reaches_the_same_point():
    r = np.random.default_rng(13)
    X = r.normal(size=(8, 2))
    y = r.poisson(2.0, 8).astype(float)
    prob = SCCProblem(X, y, "poisson", complete_graph(8, r))
    lam = 0.2 * prob.pi_X
    a, _ = prob.solve(lam, opts=TIGHT)
    b, _ = prob.solve(lam, opts=SolverOptions(tol_abs=1e-10, tol_rel=1e-9, max_iter=400_000,
                                              theta_update="gradient"))
    assert prob.objective(a, lam) == pytest.approx(prob.objective(b, lam), rel=1e-6)
