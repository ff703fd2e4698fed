"""Multi-block ADMM for supervised convex clustering with a differentiable loss.

The problem solved is::

    min  pi_X/2 ||X - U||_F^2 + pi_y * sum_i l(y_i; theta_i + Z_i beta)
         + lam * sum_{(i,j) in E} w_ij ||[theta_i, U_i] - [theta_j, U_j]||_2

with the splitting ``D [theta U] = V``. ``U`` has a closed-form update,
``theta`` and ``beta`` take one (linearized) gradient step per iteration,
``V`` is a row-wise group soft-threshold and ``Q`` is the scaled dual.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import losses
from .losses import check_response, default_pi, lipschitz, loss_center
from .weights import WeightGraph

log = logging.getLogger(__name__)

DENSE_LIMIT = 1500
# below this size the SPD system is applied through an explicit inverse
INVERSE_LIMIT = 600


def build_difference_matrix(graph: WeightGraph) -> sp.csr_matrix:
    """Sparse |E| x n matrix with +1 at ``i`` and -1 at ``j`` on each edge row."""
    m = graph.n_edges
    if m == 0:
        raise ValueError("the fusion graph has no edges")
    rows = np.repeat(np.arange(m), 2)
    cols = graph.edges.ravel()
    vals = np.tile([1.0, -1.0], m)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, graph.n))


def prox_group_lasso(V, weights, tau):
    """Row-wise block soft-threshold ``V_l <- max(0, 1 - tau w_l / ||V_l||) V_l``."""
    V = np.asarray(V, dtype=float)
    thresh = tau * np.asarray(weights, dtype=float)
    norms = np.sqrt(np.einsum("ij,ij->i", V, V))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > thresh, 1.0 - thresh / norms, 0.0)
    return V * scale[:, None]


def spectral_norm_sq(D) -> float:
    """Largest eigenvalue of ``D^T D``."""
    L = (D.T @ D).toarray() if D.shape[1] <= DENSE_LIMIT else None
    if L is not None:
        return float(sla.eigvalsh(L)[-1])
    from scipy.sparse.linalg import eigsh

    return float(eigsh((D.T @ D).tocsc(), k=1, which="LA", return_eigenvectors=False)[0])


class USystem:
    """Factorization of ``a I + b D^T D`` reused across iterations.

    Explicit inverse for small n, dense Cholesky for moderate n, sparse LU
    otherwise.
    """

    def __init__(self, D, a, b):
        if a <= 0 and b <= 0:
            raise ValueError("need a > 0 or b > 0")
        self.a, self.b = float(a), float(b)
        n = D.shape[1]
        A = self.a * sp.identity(n, format="csc") + self.b * (D.T @ D).tocsc()
        self.matrix = A
        self._inv = None
        if n <= DENSE_LIMIT:
            self._chol = sla.cho_factor(A.toarray(), lower=True, check_finite=False)
            self._lu = None
            if n <= INVERSE_LIMIT:
                self._inv = sla.cho_solve(self._chol, np.eye(n), check_finite=False)
        else:
            self._chol = None
            self._lu = splu(A.tocsc())

    def solve(self, rhs):
        if self._inv is not None:
            return self._inv @ rhs
        if self._chol is not None:
            return sla.cho_solve(self._chol, rhs, check_finite=False)
        return self._lu.solve(np.asarray(rhs, dtype=float))


def U_system_factorize(graph: WeightGraph, pi_X, rho) -> USystem:
    """Reusable solver for ``(pi_X I + rho D^T D) x = b``."""
    return USystem(build_difference_matrix(graph), pi_X, rho)


_NEWTON_KINDS = ("gaussian", "bernoulli", "poisson")

# residual balancing keeps rho within this factor of its starting value
RHO_SPAN = 1e6


@dataclass
class SolverOptions:
    rho: float = 1.0
    tol_abs: float = 1e-6
    tol_rel: float = 1e-4
    max_iter: int = 10_000
    adapt_rho: bool = True
    # residual balancing: rescale rho by ``rho_factor`` when residuals differ by ``rho_ratio``
    rho_ratio: float = 10.0
    rho_factor: float = 2.0
    adapt_every: int = 10
    adapt_until: int = 2000
    trace_every: int = 10
    # "gradient": one gradient step on the whole theta sub-problem;
    # "prox-linear": linearize only the loss and solve the quadratic exactly
    theta_update: str = "prox-linear"


@dataclass
class FitState:
    """Iterate of the solver. ``theta`` is stored as an (n, q) matrix."""

    U: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    rho: float
    lam: float = 0.0

    @property
    def centroids(self):
        """Aggregated centroid matrix ``[theta U]``."""
        return np.hstack([self.theta, self.U])

    def theta_vector(self):
        return self.theta[:, 0] if self.theta.shape[1] == 1 else self.theta

    def copy(self):
        return FitState(self.U.copy(), self.theta.copy(), self.beta.copy(), self.V.copy(),
                        self.Q.copy(), self.rho, self.lam)


@dataclass
class SolveReport:
    iterations: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    clipped: bool = False
    rho: float = 1.0

    @property
    def objective(self):
        return self.objective_trace[-1] if self.objective_trace else np.nan


def _as_matrix(fam, theta):
    theta = np.asarray(theta, dtype=float)
    return theta.reshape(-1, 1) if theta.ndim == 1 else theta


def _eta_arg(fam, eta2):
    return eta2 if fam.kind == "multinomial" else eta2[:, 0]


class SupervisedSide:
    """Loss, covariates and fusion operator attached to one set of centroids ``theta``.

    Shared by the row side of every problem and the feature side of the
    doubly-supervised biclustering problem.
    """

    def __init__(self, family, y, Z, pi, D):
        self.family = losses.family(family)
        self.y = check_response(self.family, y)
        n = self.y.shape[0]
        self.Z = np.zeros((n, 0)) if Z is None else np.asarray(Z, dtype=float).reshape(n, -1)
        self.pi_y = float(pi)
        self.D = D
        self.DT = D.T.tocsr()
        self.normD2 = spectral_norm_sq(D)
        self.zsig2 = float(np.linalg.norm(self.Z, 2) ** 2) if self.Z.shape[1] else 0.0

    @property
    def q(self):
        return self.family.width

    @property
    def d(self):
        return self.Z.shape[1]

    def eta(self, theta, beta):
        return theta + self.Z @ beta if self.d else theta

    def loss(self, eta2):
        return losses._loss(self.family.kind, self.y, _eta_arg(self.family, eta2))

    def grad(self, eta2):
        g = losses._grad(self.family.kind, self.y, _eta_arg(self.family, eta2))
        return g.reshape(eta2.shape)

    def lipschitz(self, eta2):
        return lipschitz(self.family, self.y, _eta_arg(self.family, eta2))

    def initial_theta(self):
        return _as_matrix(self.family, loss_center(self.family, self.y).eta).copy()

    def theta_step(self, theta, beta, V_th, Q_th, rho):
        """One gradient step on the theta sub-problem (backtracked for local-curvature families)."""
        pi_y, D, DT = self.pi_y, self.D, self.DT
        eta = self.eta(theta, beta)
        c = V_th - Q_th
        resid = D @ theta - c
        g = rho * (DT @ resid)
        if pi_y:
            g = g + pi_y * self.grad(eta)
        L = self.lipschitz(eta) if pi_y else 0.0
        t = 1.0 / (pi_y * L + rho * self.normD2)
        if not pi_y or self.family.kind not in ("poisson", "cox"):
            return theta - t * g
        f0 = pi_y * self.loss(eta) + 0.5 * rho * float(np.sum(resid**2))
        for _ in range(50):
            new = theta - t * g
            step = new - theta
            r_new = D @ new - c
            f1 = pi_y * self.loss(self.eta(new, beta)) + 0.5 * rho * float(np.sum(r_new**2))
            if f1 <= f0 + float(np.sum(g * step)) + float(np.sum(step**2)) / (2 * t) + 1e-12 * abs(f0):
                break
            t *= 0.5
        return new

    def theta_prox_linear(self, theta, beta, V_th, Q_th, rho):
        """Minimize the loss majorizer plus the augmented term exactly.

        Solves ``(pi_y L I + rho D^T D) theta = pi_y (L theta_k - grad) + rho D^T (V - Q)``;
        exact for the gaussian loss.
        """
        pi_y, D, DT = self.pi_y, self.D, self.DT
        c = V_th - Q_th
        rhs = rho * (DT @ c)
        if not pi_y:
            # null direction of D^T D is pinned by a tiny proximal term
            return self._system(1e-12 * rho, rho).solve(rhs + 1e-12 * rho * theta)
        eta = self.eta(theta, beta)
        g = self.grad(eta)
        local = self.family.kind in ("poisson", "cox")
        L = self.lipschitz(eta)
        if local:
            L = self._round_up(L)
        for _ in range(60):
            new = self._system(pi_y * L, rho).solve(rhs + pi_y * (L * theta - g))
            if not local:
                return new
            step = new - theta
            f0 = self.loss(eta)
            f1 = self.loss(self.eta(new, beta))
            if f1 <= f0 + float(np.sum(g * step)) + 0.5 * L * float(np.sum(step**2)) + 1e-12 * abs(f0):
                return new
            L *= 2.0
        return new

    @staticmethod
    def _round_up(L):
        # powers of two keep the number of distinct factorizations small
        return float(2.0 ** np.ceil(np.log2(max(L, 1e-12))))

    def _system(self, a, b):
        key = (float(a), float(b))
        cache = self.__dict__.setdefault("_systems", {})
        if key not in cache:
            if len(cache) > 16:
                cache.clear()
            cache[key] = USystem(self.D, a, b)
        return cache[key]

    def beta_step(self, theta, beta):
        """One gradient step on beta for fixed theta (unscaled loss gradient, step 1/(L sigma^2))."""
        if not self.d or not self.pi_y:
            return beta
        eta = self.eta(theta, beta)
        g = self.Z.T @ self.grad(eta)
        if self.family.kind in _NEWTON_KINDS:
            return self._beta_newton(theta, beta, eta, g)
        L = self.lipschitz(eta)
        if L <= 0 or self.zsig2 <= 0:
            return beta
        t = 1.0 / (L * self.zsig2)
        new = beta - t * g
        if self.family.kind in ("poisson", "cox"):
            f0 = self.loss(eta)
            for _ in range(50):
                step = new - beta
                f1 = self.loss(self.eta(theta, new))
                if f1 <= f0 + float(np.sum(g * step)) + float(np.sum(step**2)) / (2 * t) + 1e-12 * abs(f0):
                    break
                t *= 0.5
                new = beta - t * g
        if self.family.kind == "multinomial":
            new = new - new.mean(axis=1, keepdims=True)
        return new

    def _beta_newton(self, theta, beta, eta, g):
        # damped Newton step; beta is low-dimensional and the loss is separable
        e = eta[:, 0]
        if self.family.kind == "gaussian":
            h = np.ones_like(e)
        elif self.family.kind == "poisson":
            h = np.exp(np.minimum(e, losses.ETA_CLIP))
        else:
            pr = 1.0 / (1.0 + np.exp(-e))
            h = pr * (1.0 - pr)
        H = self.Z.T @ (h[:, None] * self.Z)
        H[np.diag_indices_from(H)] += 1e-10 * max(1.0, float(np.trace(H)))
        step = np.linalg.solve(H, g)
        f0 = self.loss(eta)
        slope = float(np.sum(g * step))
        t = 1.0
        for _ in range(50):
            new = beta - t * step
            if self.loss(self.eta(theta, new)) <= f0 - 0.25 * t * slope:
                return new
            t *= 0.5
        return beta

    def stationarity(self, theta, beta):
        """Gradient of ``pi_y * loss`` with respect to theta and beta."""
        if not self.pi_y:
            return np.zeros_like(theta), np.zeros_like(beta)
        g = self.pi_y * self.grad(self.eta(theta, beta))
        return g, (self.Z.T @ g if self.d else np.zeros_like(beta))

    def value(self, theta, beta):
        return self.pi_y * self.loss(self.eta(theta, beta)) if self.pi_y else 0.0


class SCCProblem:
    """Data, weights and cached linear algebra for one supervised convex clustering problem.

    ``pi=None`` uses the inverse null deviances of ``X`` and ``y``. ``Z`` may be
    None (no covariates).
    """

    def __init__(self, X, y, family, graph: WeightGraph, Z=None, pi=None):
        self.X = np.asarray(X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-D array")
        self.family = losses.family(family)
        y = check_response(self.family, y)
        n, p = self.X.shape
        if y.shape[0] != n:
            raise ValueError(f"y has {y.shape[0]} observations, X has {n}")
        if graph.n != n:
            raise ValueError(f"graph is over {graph.n} nodes, X has {n} rows")
        self.graph = graph
        self.pi_X, self.pi_y = default_pi(self.X, self.family, y) if pi is None else map(float, pi)
        if self.pi_X < 0 or self.pi_y < 0:
            raise ValueError("pi weights must be non-negative")
        self.D = build_difference_matrix(graph)
        self.DT = self.D.T.tocsr()
        self.w = graph.weights
        self.side = SupervisedSide(self.family, y, Z, self.pi_y, self.D)
        self._systems = {}

    @property
    def y(self):
        return self.side.y

    @property
    def Z(self):
        return self.side.Z

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def q(self):
        return self.family.width

    @property
    def d(self):
        return self.side.d

    def system(self, rho):
        key = float(rho)
        if key not in self._systems:
            if len(self._systems) > 8:
                self._systems.clear()
            self._systems[key] = USystem(self.D, self.pi_X, rho)
        return self._systems[key]

    @property
    def scale(self):
        """Weight of the data-fidelity term; dual quantities and rho are measured against it."""
        return self.pi_X if self.pi_X > 0 else max(self.pi_y, 1e-300)

    def initial_state(self, rho=1.0) -> FitState:
        theta = self.side.initial_theta()
        beta = np.zeros((self.d, self.q))
        U = self.X.copy()
        V = self.D @ np.hstack([theta, U])
        return FitState(U, theta, beta, V, np.zeros_like(V), float(rho) * self.scale)

    def objective(self, fit: FitState, lam) -> float:
        """Primal objective with the penalty taken on ``D [theta U]``."""
        A = self.D @ np.hstack([fit.theta, fit.U])
        pen = float(np.sum(self.w * np.sqrt(np.einsum("ij,ij->i", A, A))))
        val = 0.5 * self.pi_X * float(np.sum((self.X - fit.U) ** 2)) + lam * pen
        return val + self.side.value(fit.theta, fit.beta)

    def solve(self, lam, opts: SolverOptions | None = None, init: FitState | None = None):
        """Run ADMM at penalty ``lam``; returns ``(FitState, SolveReport)``."""
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        opts = opts or SolverOptions()
        fit = init.copy() if init is not None else self.initial_state(opts.rho)
        fit.lam = float(lam)
        return _admm(self, fit, float(lam), opts)


def _admm(prob: SCCProblem, fit: FitState, lam, opts: SolverOptions):
    X, D, DT, w, side = prob.X, prob.D, prob.DT, prob.w, prob.side
    q = prob.q
    pi_X = prob.pi_X
    U, theta, beta, V, Q, rho = fit.U, fit.theta, fit.beta, fit.V, fit.Q, fit.rho
    n, p = X.shape
    m = D.shape[0]
    report = SolveReport()
    sys_ = prob.system(rho)
    if opts.theta_update == "gradient":
        theta_update = side.theta_step
    elif opts.theta_update == "prox-linear":
        theta_update = side.theta_prox_linear
    else:
        raise ValueError(f"unknown theta_update {opts.theta_update!r}")
    rho_lo, rho_hi = rho * RHO_SPAN**-1, rho * RHO_SPAN
    sqrt_pri = np.sqrt(m * (p + q))
    sqrt_dual = np.sqrt(n * (p + q))
    for it in range(1, opts.max_iter + 1):
        U = sys_.solve(pi_X * X + rho * (DT @ (V[:, q:] - Q[:, q:])))
        theta = theta_update(theta, beta, V[:, :q], Q[:, :q], rho)
        beta = side.beta_step(theta, beta)
        A = D @ np.hstack([theta, U])
        V = prox_group_lasso(A + Q, w, lam / rho)
        Q = Q + (A - V)

        # KKT residuals: primal feasibility and stationarity of the smooth blocks
        r = float(np.linalg.norm(A - V))
        dq = rho * (DT @ Q)
        gU = pi_X * (U - X)
        gth, gbeta = side.stationarity(theta, beta)
        s_fused = float(np.sum((gU + dq[:, q:]) ** 2) + np.sum((gth + dq[:, :q]) ** 2))
        s = float(np.sqrt(s_fused + np.sum(gbeta**2)))
        eps_pri = opts.tol_abs * sqrt_pri + opts.tol_rel * max(np.linalg.norm(A), np.linalg.norm(V))
        eps_dual = opts.tol_abs * sqrt_dual * prob.scale + opts.tol_rel * max(
            np.linalg.norm(dq), np.hypot(np.linalg.norm(gU), np.linalg.norm(gth))
        )
        done = r <= eps_pri and s <= eps_dual
        if done or it % opts.trace_every == 0:
            report.objective_trace.append(
                prob.objective(FitState(U, theta, beta, V, Q, rho), lam)
            )
        if done:
            report.converged = True
            break
        if opts.adapt_rho and it % opts.adapt_every == 0 and it <= opts.adapt_until:
            # beta's residual does not respond to rho, so it is left out here
            rho_new = balance_rho(rho, r / eps_pri, np.sqrt(s_fused) / eps_dual, opts)
            rho_new = min(max(rho_new, rho_lo), rho_hi)
            if rho_new != rho:
                Q = Q * (rho / rho_new)
                rho = rho_new
                sys_ = prob.system(rho)
    report.iterations = it
    report.primal_residual = r
    report.dual_residual = s
    report.rho = rho
    if prob.family.kind == "poisson":
        report.clipped = bool(np.max(side.eta(theta, beta)) > losses.ETA_CLIP)
    if not report.converged:
        log.info("ADMM stopped at max_iter=%d (r=%.3g, s=%.3g)", opts.max_iter, r, s)
    return FitState(U, theta, beta, V, Q, rho, lam), report


def balance_rho(rho, r_scaled, s_scaled, opts: SolverOptions):
    """Residual balancing on tolerance-scaled residuals."""
    if r_scaled > opts.rho_ratio * s_scaled:
        return rho * opts.rho_factor
    if s_scaled > opts.rho_ratio * r_scaled:
        return rho / opts.rho_factor
    return rho


def scc_solve(X, y, family, graph, lam, Z=None, pi=None, opts=None, init=None):
    """Solve supervised convex clustering at a single ``lam``.

    Returns ``(FitState, SolveReport)``. Non-convergence within
    ``opts.max_iter`` is reported through ``report.converged``.
    """
    return SCCProblem(X, y, family, graph, Z=Z, pi=pi).solve(lam, opts=opts, init=init)


def objective(X, y, family, Z, fit: FitState, lam, pi, graph) -> float:
    """Primal objective of ``fit`` at penalty ``lam``."""
    return SCCProblem(X, y, family, graph, Z=Z, pi=pi).objective(fit, lam)
