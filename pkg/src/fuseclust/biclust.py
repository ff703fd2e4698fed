"""Supervised and doubly-supervised convex biclustering.

The row side fuses ``[theta U]`` over the observation graph. The column
side fuses the columns of ``U`` through a copy ``M = U^T`` over the feature
graph; in the doubly-supervised problem each feature also carries a
supervising centroid ``theta~`` that is fused together with its row of ``M``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import losses
from .admm import (
    RHO_SPAN,
    SolveReport,
    SolverOptions,
    SupervisedSide,
    USystem,
    balance_rho,
    build_difference_matrix,
    prox_group_lasso,
)
from .losses import check_response, default_pi, pi_data
from .selection import ClusterAssignment, extract_clusters
from .weights import WeightGraph

log = logging.getLogger(__name__)


@dataclass
class BiclustState:
    """Iterate of the biclustering solver.

    ``theta`` is (n, q) and ``theta_tilde`` is (p, q~), with ``q~ = 0`` when
    there is no feature-side supervision. ``M`` is the (p, n) copy of ``U^T``.
    """

    U: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    M: np.ndarray
    V_row: np.ndarray
    V_col: np.ndarray
    Q_row: np.ndarray
    Q_col: np.ndarray
    N: np.ndarray
    rho: float
    theta_tilde: np.ndarray
    beta_tilde: np.ndarray
    lam: float = 0.0

    @property
    def V(self):
        # row split variable, used by the shared path and extraction helpers
        return self.V_row

    def copy(self):
        return BiclustState(*(a.copy() if isinstance(a, np.ndarray) else a for a in (
            self.U, self.theta, self.beta, self.M, self.V_row, self.V_col, self.Q_row,
            self.Q_col, self.N, self.rho, self.theta_tilde, self.beta_tilde, self.lam)))


def _null_side(n, D):
    # inert supervising block: one constant column, zero weight
    return SupervisedSide("gaussian", np.zeros(n), None, 0.0, D)


class BiclustProblem:
    """Data, graphs and cached factorizations for (doubly-)supervised convex biclustering.

    ``y=None`` gives plain convex biclustering. ``y_tilde`` adds feature-side
    supervision; it is dropped when ``pi_tilde`` is 0. ``col_ratio`` scales
    the column penalty relative to the row penalty.
    """

    def __init__(self, X, y, family, row_graph: WeightGraph, col_graph: WeightGraph, Z=None,
                 pi=None, y_tilde=None, family_tilde=None, Z_tilde=None, pi_tilde=None,
                 col_ratio=1.0):
        self.X = np.asarray(X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-D array")
        n, p = self.X.shape
        if row_graph.n != n:
            raise ValueError(f"row graph is over {row_graph.n} nodes, X has {n} rows")
        if col_graph.n != p:
            raise ValueError(f"column graph is over {col_graph.n} nodes, X has {p} columns")
        if col_ratio < 0:
            raise ValueError("col_ratio must be non-negative")
        self.graph = row_graph
        self.col_graph = col_graph
        self.col_ratio = float(col_ratio)
        self.D = build_difference_matrix(row_graph)
        self.DT = self.D.T.tocsr()
        self.Dc = build_difference_matrix(col_graph)
        self.DcT = self.Dc.T.tocsr()
        self.w = row_graph.weights
        self.wc = col_graph.weights * self.col_ratio

        if y is None:
            self.family = losses.family("gaussian")
            self.pi_X = pi_data(self.X) if pi is None else float(pi[0])
            self.pi_y = 0.0
            self.side = _null_side(n, self.D)
        else:
            self.family = losses.family(family)
            y = check_response(self.family, y)
            if y.shape[0] != n:
                raise ValueError(f"y has {y.shape[0]} observations, X has {n}")
            self.pi_X, self.pi_y = default_pi(self.X, self.family, y) if pi is None else map(float, pi)
            self.side = SupervisedSide(self.family, y, Z, self.pi_y, self.D)

        self.tside = None
        if y_tilde is not None:
            fam_t = losses.family(family_tilde or "gaussian")
            y_tilde = check_response(fam_t, y_tilde)
            if y_tilde.shape[0] != p:
                raise ValueError(f"y_tilde has {y_tilde.shape[0]} entries, X has {p} columns")
            if pi_tilde is None:
                pi_tilde = default_pi(self.X.T, fam_t, y_tilde)[1]
            if pi_tilde < 0:
                raise ValueError("pi_tilde must be non-negative")
            if pi_tilde > 0:
                self.tside = SupervisedSide(fam_t, y_tilde, Z_tilde, pi_tilde, self.Dc)
        if self.pi_X <= 0:
            raise ValueError("biclustering needs pi_X > 0")
        self._u_systems = {}
        self._m_system = USystem(self.Dc, 1.0, 1.0)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.side.q

    @property
    def qt(self):
        return self.tside.q if self.tside is not None else 0

    @property
    def scale(self):
        return self.pi_X

    def u_system(self, rho):
        key = float(rho)
        if key not in self._u_systems:
            if len(self._u_systems) > 8:
                self._u_systems.clear()
            self._u_systems[key] = USystem(self.D, self.pi_X + rho, rho)
        return self._u_systems[key]

    def initial_state(self, rho=1.0) -> BiclustState:
        theta = self.side.initial_theta()
        beta = np.zeros((self.side.d, self.q))
        U = self.X.copy()
        M = U.T.copy()
        if self.tside is not None:
            tt = self.tside.initial_theta()
            bt = np.zeros((self.tside.d, self.qt))
        else:
            tt = np.zeros((self.p, 0))
            bt = np.zeros((0, 0))
        V_row = self.D @ np.hstack([theta, U])
        V_col = self.Dc @ np.hstack([tt, M])
        return BiclustState(U, theta, beta, M, V_row, V_col, np.zeros_like(V_row),
                            np.zeros_like(V_col), np.zeros_like(M), float(rho) * self.scale,
                            tt, bt)

    def objective(self, fit: BiclustState, lam) -> float:
        """Primal objective with both penalties evaluated on ``U`` directly."""
        A = self.D @ np.hstack([fit.theta, fit.U])
        B = self.Dc @ np.hstack([fit.theta_tilde, fit.U.T])
        pen = float(np.sum(self.w * np.linalg.norm(A, axis=1)))
        pen += float(np.sum(self.wc * np.linalg.norm(B, axis=1)))
        val = 0.5 * self.pi_X * float(np.sum((self.X - fit.U) ** 2)) + lam * pen
        val += self.side.value(fit.theta, fit.beta)
        if self.tside is not None:
            val += self.tside.value(fit.theta_tilde, fit.beta_tilde)
        return val

    def solve(self, lam, opts: SolverOptions | None = None, init: BiclustState | None = None):
        """Run the biclustering ADMM at penalty ``lam``; returns ``(BiclustState, SolveReport)``."""
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        opts = opts or SolverOptions()
        fit = init.copy() if init is not None else self.initial_state(opts.rho)
        return _bicluster_admm(self, fit, float(lam), opts)

    def fusion_tols(self):
        """Default fusion tolerances for the row and column split variables."""
        start = self.initial_state()
        A = np.linalg.norm(self.D @ np.hstack([start.theta, start.U]), axis=1)
        B = np.linalg.norm(self.Dc @ np.hstack([start.theta_tilde, start.M]), axis=1)
        out = []
        for norms in (A, B):
            norms = norms[norms > 0]
            out.append(1e-6 * float(np.median(norms)) if norms.size else 1e-6)
        return tuple(out)

    def assignments(self, fit: BiclustState, tol=None):
        """Row and column :class:`ClusterAssignment` of a fit."""
        t_row, t_col = self.fusion_tols() if tol is None else (tol, tol)
        rows = extract_clusters(fit, self.graph, t_row)
        cols = extract_clusters(_ColView(fit.V_col), self.col_graph, t_col)
        return rows, cols


@dataclass
class _ColView:
    V: np.ndarray


def _bicluster_admm(prob: BiclustProblem, fit: BiclustState, lam, opts: SolverOptions):
    X, D, DT, Dc, DcT = prob.X, prob.D, prob.DT, prob.Dc, prob.DcT
    side, tside = prob.side, prob.tside
    pi_X = prob.pi_X
    q, qt = prob.q, prob.qt
    n, p = X.shape
    U, theta, beta, M = fit.U, fit.theta, fit.beta, fit.M
    tt, bt = fit.theta_tilde, fit.beta_tilde
    Vr, Vc, Qr, Qc, N, rho = fit.V_row, fit.V_col, fit.Q_row, fit.Q_col, fit.N, fit.rho
    report = SolveReport()
    rho_lo, rho_hi = rho * RHO_SPAN**-1, rho * RHO_SPAN
    usys = prob.u_system(rho)
    msys = prob._m_system
    sqrt_pri = np.sqrt(Vr.size + Vc.size + M.size)
    sqrt_dual = np.sqrt(n * (p + q) + p * qt)
    for it in range(1, opts.max_iter + 1):
        U = usys.solve(pi_X * X + rho * (DT @ (Vr[:, q:] - Qr[:, q:])) + rho * (M - N).T)
        theta = side.theta_prox_linear(theta, beta, Vr[:, :q], Qr[:, :q], rho)
        beta = side.beta_step(theta, beta)
        M = msys.solve(DcT @ (Vc[:, qt:] - Qc[:, qt:]) + U.T + N)
        if tside is not None:
            tt = tside.theta_prox_linear(tt, bt, Vc[:, :qt], Qc[:, :qt], rho)
            bt = tside.beta_step(tt, bt)
        A = D @ np.hstack([theta, U])
        B = Dc @ np.hstack([tt, M])
        Vr = prox_group_lasso(A + Qr, prob.w, lam / rho)
        Vc = prox_group_lasso(B + Qc, prob.wc, lam / rho)
        Qr = Qr + (A - Vr)
        Qc = Qc + (B - Vc)
        C = U.T - M
        N = N + C

        r = float(np.sqrt(np.sum((A - Vr) ** 2) + np.sum((B - Vc) ** 2) + np.sum(C**2)))
        dqr = rho * (DT @ Qr)
        dqc = rho * (DcT @ Qc)
        gU = pi_X * (U - X)
        gth, gbeta = side.stationarity(theta, beta)
        fused = [gU + dqr[:, q:] + rho * N.T, gth + dqr[:, :q], dqc[:, qt:] - rho * N]
        free = [gbeta]
        if tside is not None:
            gtt, gbt = tside.stationarity(tt, bt)
            fused.append(gtt + dqc[:, :qt])
            free.append(gbt)
        s_fused = float(sum(np.sum(a**2) for a in fused))
        s = float(np.sqrt(s_fused + sum(np.sum(a**2) for a in free)))
        eps_pri = opts.tol_abs * sqrt_pri + opts.tol_rel * max(
            np.sqrt(np.sum(A**2) + np.sum(B**2) + np.sum(U**2)),
            np.sqrt(np.sum(Vr**2) + np.sum(Vc**2) + np.sum(M**2)),
        )
        eps_dual = opts.tol_abs * sqrt_dual * prob.scale + opts.tol_rel * max(
            np.sqrt(np.sum(dqr**2) + np.sum(dqc**2) + np.sum((rho * N) ** 2)),
            np.linalg.norm(gU),
        )
        done = r <= eps_pri and s <= eps_dual
        if done or it % opts.trace_every == 0:
            cur = BiclustState(U, theta, beta, M, Vr, Vc, Qr, Qc, N, rho, tt, bt, lam)
            report.objective_trace.append(prob.objective(cur, lam))
        if done:
            report.converged = True
            break
        if opts.adapt_rho and it % opts.adapt_every == 0 and it <= opts.adapt_until:
            rho_new = balance_rho(rho, r / eps_pri, np.sqrt(s_fused) / eps_dual, opts)
            rho_new = min(max(rho_new, rho_lo), rho_hi)
            if rho_new != rho:
                f = rho / rho_new
                Qr, Qc, N = Qr * f, Qc * f, N * f
                rho = rho_new
                usys = prob.u_system(rho)
    report.iterations = it
    report.primal_residual = r
    report.dual_residual = s
    report.rho = rho
    if not report.converged:
        log.info("biclustering ADMM stopped at max_iter=%d (r=%.3g, s=%.3g)", opts.max_iter, r, s)
    return BiclustState(U, theta, beta, M, Vr, Vc, Qr, Qc, N, rho, tt, bt, lam), report


def biclust_solve(X, y, family, row_graph, col_graph, lam, Z=None, pi=None, opts=None, init=None,
                  col_ratio=1.0):
    """Supervised convex biclustering at a single ``lam``.

    Returns ``(BiclustState, SolveReport)``. ``y=None`` solves unsupervised
    convex biclustering.
    """
    prob = BiclustProblem(X, y, family, row_graph, col_graph, Z=Z, pi=pi, col_ratio=col_ratio)
    return prob.solve(lam, opts=opts, init=init)


def doubly_solve(X, y, family, row_graph, col_graph, lam, y_tilde, family_tilde="gaussian",
                 Z=None, Z_tilde=None, pi=None, pi_tilde=None, opts=None, init=None, col_ratio=1.0):
    """Doubly-supervised convex biclustering at a single ``lam``.

    ``y_tilde`` (length p) supervises the feature clusters with loss family
    ``family_tilde``. With ``pi_tilde=0`` this is exactly :func:`biclust_solve`.
    """
    prob = BiclustProblem(X, y, family, row_graph, col_graph, Z=Z, pi=pi, y_tilde=y_tilde,
                          family_tilde=family_tilde, Z_tilde=Z_tilde, pi_tilde=pi_tilde,
                          col_ratio=col_ratio)
    return prob.solve(lam, opts=opts, init=init)


def heatmap_order(U, row_labels, col_labels):
    """``U`` with rows and columns sorted by cluster label (stable within clusters)."""
    r = np.argsort(np.asarray(row_labels), kind="stable")
    c = np.argsort(np.asarray(col_labels), kind="stable")
    return np.asarray(U)[np.ix_(r, c)], r, c


__all__ = [
    "BiclustProblem",
    "BiclustState",
    "biclust_solve",
    "doubly_solve",
    "heatmap_order",
]
