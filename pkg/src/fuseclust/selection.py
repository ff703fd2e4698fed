"""Regularization paths, cluster extraction, stability selection and the adjusted Rand index."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .admm import FitState, SCCProblem, SolveReport, SolverOptions
from .exceptions import NoSelectionError, TargetNotReachedError
from .weights import WeightGraph, build_weights

log = logging.getLogger(__name__)

FUSION_REL_TOL = 1e-6


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    K: int
    fusion_tol: float


def relabel(labels):
    """Map arbitrary labels to 1..K in order of first appearance."""
    _, first, inv = np.unique(np.asarray(labels), return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(1, first.size + 1)
    return rank[inv]


def default_fusion_tol(prob: SCCProblem) -> float:
    """``1e-6`` times the median non-zero edge difference of the unpenalized centroids."""
    start = prob.initial_state()
    A = prob.D @ np.hstack([start.theta, start.U])
    norms = np.linalg.norm(A, axis=1)
    norms = norms[norms > 0]
    return FUSION_REL_TOL * float(np.median(norms)) if norms.size else FUSION_REL_TOL


def extract_clusters(fit: FitState, graph: WeightGraph, tol) -> ClusterAssignment:
    """Connected components of the edges whose split variable ``V_l`` is (numerically) zero."""
    norms = np.linalg.norm(fit.V, axis=1)
    fused = graph.edges[norms <= tol]
    n = graph.n
    A = coo_matrix((np.ones(len(fused)), (fused[:, 0], fused[:, 1])), shape=(n, n))
    k, comp = connected_components(A, directed=False)
    return ClusterAssignment(relabel(comp), int(k), float(tol))


def adjusted_rand_index(a, b) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must be 1-D and of equal length")
    n = a.size
    if n < 2:
        raise ValueError("ARI needs at least two observations")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = coo_matrix((np.ones(n, dtype=np.int64), (ai, bi))).toarray()
    # exact integer pair counts; the ratio is then correctly rounded
    pairs = lambda x: int(np.sum(x * (x - 1))) // 2  # noqa: E731
    sum_ij = pairs(table)
    sum_a = pairs(table.sum(axis=1))
    sum_b = pairs(table.sum(axis=0))
    total = n * (n - 1) // 2
    num = 2 * (sum_ij * total - sum_a * sum_b)
    den = (sum_a + sum_b) * total - 2 * sum_a * sum_b
    if den == 0:
        # both partitions trivial in the same way (all singletons or one cluster)
        return 1.0
    return num / den


@dataclass
class PathPoint:
    lam: float
    fit: FitState
    report: SolveReport
    assignment: ClusterAssignment

    @property
    def K(self):
        return self.assignment.K


@dataclass
class SolvePath:
    lambdas: np.ndarray
    fits: list
    reports: list
    assignments: list
    fusion_tol: float = 0.0

    @property
    def K_path(self):
        return np.array([a.K for a in self.assignments])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            n = self.assignments[0].labels.size if self.assignments else 0
            writer.writerow(["lambda", "K"] + [f"label_{i + 1}" for i in range(n)])
            for lam, a in zip(self.lambdas, self.assignments):
                writer.writerow([repr(float(lam)), a.K] + a.labels.tolist())


def _point(prob, lam, opts, init, tol):
    fit, rep = prob.solve(lam, opts=opts, init=init)
    return PathPoint(lam, fit, rep, extract_clusters(fit, prob.graph, tol))


def lambda_bounds(prob: SCCProblem, opts=None, tol=None, max_doublings=60, bisect_steps=12):
    """``(lam_min, lam_max)``: first lambda with any fusion, and first with K = 1.

    ``lam_max`` is found by doubling, ``lam_min`` by bisection on a log scale.
    Requires a connected graph for ``lam_max`` to exist.
    """
    opts = opts or SolverOptions()
    tol = default_fusion_tol(prob) if tol is None else tol
    n = prob.n
    scale = prob.pi_X * float(np.sqrt(np.mean(np.sum((prob.X - prob.X.mean(0)) ** 2, axis=1))))
    lam = max(scale, 1e-12)
    prev = None
    pt = _point(prob, lam, opts, prev, tol)
    while pt.K < n and lam > 1e-14:
        lam /= 4.0
        pt = _point(prob, lam, opts, None, tol)
    lo = lam
    prev = pt.fit
    for _ in range(max_doublings):
        lam *= 2.0
        pt = _point(prob, lam, opts, prev, tol)
        prev = pt.fit
        if pt.K == 1:
            break
    else:
        raise NoSelectionError("no full fusion reached; is the graph connected?")
    lam_max = lam
    # bisection for the first fusion between lo (K = n) and the first fused value
    a, b = lo, lam_max
    start = prob.initial_state(opts.rho)
    for _ in range(bisect_steps):
        mid = math.sqrt(a * b)
        if _point(prob, mid, opts, start, tol).K < n:
            b = mid
        else:
            a = mid
    return b, lam_max


def solve_path(prob: SCCProblem, lambdas=None, opts=None, n_lambda=50, tol=None,
               include_zero=True) -> SolvePath:
    """Fit an increasing lambda grid with warm starts.

    ``lambdas=None`` builds a log-spaced grid between :func:`lambda_bounds`,
    prefixed by 0 when ``include_zero``.
    """
    opts = opts or SolverOptions()
    tol = default_fusion_tol(prob) if tol is None else tol
    if lambdas is None:
        lo, hi = lambda_bounds(prob, opts, tol)
        lambdas = np.geomspace(lo, hi, n_lambda)
        if include_zero:
            lambdas = np.concatenate([[0.0], lambdas])
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) <= 0):
        raise ValueError("lambda grid must be strictly increasing")
    fits, reports, assigns = [], [], []
    prev = None
    for lam in lambdas:
        pt = _point(prob, lam, opts, prev, tol)
        prev = pt.fit
        fits.append(pt.fit)
        reports.append(pt.report)
        assigns.append(pt.assignment)
    return SolvePath(lambdas, fits, reports, assigns, tol)


def fit_n_clusters(prob: SCCProblem, K, opts=None, tol=None, exact=True, n_grid=30,
                   bisect_steps=20) -> PathPoint:
    """Find a fit with ``K`` clusters.

    Walks a warm-started geometric grid between :func:`lambda_bounds` and then
    bisects the interval where the cluster count crosses ``K``. When the path
    skips ``K`` (several merges at one lambda), ``exact=True`` raises
    :class:`TargetNotReachedError`; ``exact=False`` returns the fit with the
    smallest cluster count above ``K``.
    """
    opts = opts or SolverOptions()
    tol = default_fusion_tol(prob) if tol is None else tol
    n = prob.n
    if not 1 <= K <= n:
        raise ValueError("K must be between 1 and n")
    lo_lam, hi_lam = lambda_bounds(prob, opts, tol)
    seen = [n]
    if K == n:
        return _point(prob, 0.0, opts, None, tol)
    above = _point(prob, lo_lam, opts, None, tol)
    below = None
    seen.append(above.K)
    if above.K == K:
        return above
    for lam in np.geomspace(lo_lam, hi_lam, n_grid)[1:]:
        pt = _point(prob, lam, opts, above.fit, tol)
        seen.append(pt.K)
        if pt.K == K:
            return pt
        if pt.K > K:
            above = pt
        else:
            below = pt
            break
    if below is None or above.K < K:
        if exact or above.K < K:
            raise TargetNotReachedError(K, seen)
        return above
    for _ in range(bisect_steps):
        mid = math.sqrt(above.lam * below.lam)
        pt = _point(prob, mid, opts, above.fit, tol)
        seen.append(pt.K)
        if pt.K == K:
            return pt
        if pt.K > K:
            above = pt
        else:
            below = pt
        if below.lam / above.lam < 1 + 1e-6:
            break
    if exact:
        raise TargetNotReachedError(K, seen)
    return above


@dataclass
class StabilityResult:
    lam: float
    lambdas: np.ndarray
    scores: np.ndarray
    K_full: np.ndarray
    table: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda", "K", "stability"])
            for lam, k, s in zip(self.lambdas, self.K_full, self.scores):
                writer.writerow([repr(float(lam)), int(k), repr(float(s))])


def _trivial(labels):
    # one cluster or all singletons; ARI between two such labelings is 1 by
    # convention and carries no evidence of stable structure
    k = np.unique(labels).size
    return k == 1 or k == labels.size


def stability_select(X, y, family, lambdas, B=10, fraction=0.8, K_target=None, Z=None, pi=None,
                     weight_kw=None, opts=None, seed=0, jobs=1) -> StabilityResult:
    """Pick lambda by the agreement of cluster assignments across subsamples.

    Each of ``B`` subsamples draws ``ceil(fraction * n)`` observations without
    replacement, rebuilds its weight graph and solves the whole grid. The score
    at each lambda is the mean pairwise ARI between subsample labelings on
    their shared observations; a pair of labelings that are both trivial (one
    cluster or all singletons) scores 0. Lambdas giving K in {1, n} on the full
    data are excluded; with ``K_target`` only lambdas giving that K are eligible.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if not 0.5 < fraction < 1.0:
        raise ValueError("fraction must lie in (0.5, 1)")
    weight_kw = dict(weight_kw or {})
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    m = math.ceil(fraction * n)
    lambdas = np.asarray(lambdas, dtype=float)
    rng = np.random.default_rng(seed)
    subsets = [np.sort(rng.choice(n, m, replace=False)) for _ in range(B)]

    def run(idx):
        Zs = None if Z is None else np.asarray(Z)[idx]
        g = build_weights(X[idx], y[idx], family, **weight_kw)
        prob = SCCProblem(X[idx], y[idx], family, g, Z=Zs, pi=pi)
        return solve_path(prob, lambdas, opts)

    full_graph = build_weights(X, y, family, **weight_kw)
    full = SCCProblem(X, y, family, full_graph, Z=Z, pi=pi)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [pool.submit(run, idx) for idx in subsets]
        full_path = solve_path(full, lambdas, opts)
        paths = [f.result() for f in futures]
    K_full = full_path.K_path
    scores = np.zeros(lambdas.size)
    for li in range(lambdas.size):
        vals = []
        for a in range(B):
            for b in range(a + 1, B):
                shared, ia, ib = np.intersect1d(subsets[a], subsets[b], return_indices=True)
                la = paths[a].assignments[li].labels[ia]
                lb = paths[b].assignments[li].labels[ib]
                vals.append(0.0 if _trivial(la) and _trivial(lb) else adjusted_rand_index(la, lb))
        scores[li] = float(np.mean(vals))
    eligible = (K_full > 1) & (K_full < n)
    if K_target is not None:
        eligible &= K_full == K_target
    if not eligible.any():
        raise NoSelectionError("every lambda on the grid gives a trivial clustering")
    best = int(np.flatnonzero(eligible)[np.argmax(scores[eligible])])
    return StabilityResult(float(lambdas[best]), lambdas, scores, K_full)
