"""Sparse fusion weights from Gower distances, k-NN sparsification and a Gaussian kernel."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree

from .exceptions import ConnectivityWarning, DegenerateInputError, FamilyMismatchError
from .losses import Family, check_response, null_deviance
from .losses import family as as_family

DEFAULT_K = 5


@dataclass
class WeightGraph:
    """Undirected weighted edge list over ``n`` nodes with ``i < j`` on every edge."""

    n: int
    edges: np.ndarray
    weights: np.ndarray
    phi: float = 0.0
    alpha: float = 0.0
    warning: str | None = None
    dist: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.edges.shape[0] != self.weights.size:
            raise ValueError("one weight per edge is required")
        if np.any(self.edges[:, 0] >= self.edges[:, 1]):
            raise ValueError("edges must satisfy i < j")
        if np.any(self.edges < 0) or np.any(self.edges >= self.n):
            raise ValueError("edge endpoint out of range")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        if len({tuple(e) for e in self.edges.tolist()}) != len(self.edges):
            raise ValueError("duplicate edge")

    @property
    def n_edges(self):
        return self.edges.shape[0]

    def n_components(self):
        if self.n_edges == 0:
            return self.n
        return _components(self.n, self.edges)[0]

    def is_connected(self):
        return self.n_components() == 1

    def adjacency(self):
        """Dense symmetric weight matrix."""
        W = np.zeros((self.n, self.n))
        i, j = self.edges.T
        W[i, j] = self.weights
        W[j, i] = self.weights
        return W

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "w"])
            for (i, j), w in zip(self.edges.tolist(), self.weights.tolist()):
                writer.writerow([i, j, repr(w)])

    @classmethod
    def from_csv(cls, path, n=None):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        edges = [(int(r["i"]), int(r["j"])) for r in rows]
        weights = [float(r["w"]) for r in rows]
        if n is None:
            n = 1 + max(max(e) for e in edges) if edges else 0
        return cls(n, np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(weights))


def _components(n, edges):
    A = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    return connected_components(A, directed=False)


def feature_ranges(X, categorical=None):
    """Per-feature range ``max_ij |X_il - X_jl|``; categorical features get range 1."""
    X = np.asarray(X, dtype=float)
    ranges = X.max(axis=0) - X.min(axis=0)
    if categorical is not None:
        ranges = np.where(np.asarray(categorical, dtype=bool), 1.0, ranges)
    return ranges


def gower_distance(a, b, ranges, categorical=None) -> float:
    """Gower distance between two mixed-type rows.

    Continuous features contribute ``|a_l - b_l| / R_l`` (0 when ``R_l`` is 0),
    categorical features contribute a 0/1 mismatch.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ranges = np.asarray(ranges, dtype=float)
    if a.shape != b.shape or a.shape != ranges.shape or a.ndim != 1:
        raise ValueError("rows and ranges must be 1-D arrays of equal length")
    diff = np.abs(a - b)
    with np.errstate(divide="ignore", invalid="ignore"):
        part = np.where(ranges > 0, diff / np.where(ranges > 0, ranges, 1.0), 0.0)
    if categorical is not None:
        cat = np.asarray(categorical, dtype=bool)
        part = np.where(cat, (diff > 0).astype(float), part)
    return float(np.clip(part.mean(), 0.0, 1.0)) if part.size else 0.0


def gower_matrix(X, categorical=None) -> np.ndarray:
    """All-pairs Gower distances between the rows of ``X``."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    ranges = feature_ranges(X, categorical)
    cat = np.zeros(p, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
    scale = np.where(ranges > 0, ranges, np.inf)
    G = np.zeros((n, n))
    for l in range(p):
        col = X[:, l]
        diff = np.abs(col[:, None] - col[None, :])
        if cat[l]:
            G += diff > 0
        else:
            G += diff / scale[l]
    return np.clip(G / max(p, 1), 0.0, 1.0)


def gower_y(y_i, y_j, fam: Family, y_range: float = 1.0) -> float:
    """Gower distance between two supervising-variable records of family ``fam``.

    ``y_range`` is the range of the response (of the times, for cox) over the
    full dataset.
    """
    kind = as_family(fam).kind
    if kind in ("bernoulli", "multinomial"):
        return float(not np.array_equal(np.asarray(y_i, dtype=float), np.asarray(y_j, dtype=float)))
    if kind == "cox":
        (d_i, t_i), (d_j, t_j) = np.asarray(y_i, dtype=float), np.asarray(y_j, dtype=float)
        if d_i != d_j:
            return 0.5
        return float(min(abs(t_i - t_j) / y_range, 1.0)) if y_range > 0 else 0.0
    if np.ndim(y_i) or np.ndim(y_j):
        raise FamilyMismatchError(f"{kind} records must be scalars")
    return float(min(abs(float(y_i) - float(y_j)) / y_range, 1.0)) if y_range > 0 else 0.0


def gower_y_matrix(fam: Family, y) -> np.ndarray:
    """All-pairs :func:`gower_y` distances."""
    fam = as_family(fam)
    y = check_response(fam, y)
    kind = fam.kind
    if kind == "bernoulli":
        return (y[:, None] != y[None, :]).astype(float)
    if kind == "multinomial":
        lab = y.argmax(axis=1)
        return (lab[:, None] != lab[None, :]).astype(float)
    v = y[:, 1] if kind == "cox" else y
    r = v.max() - v.min()
    G = np.abs(v[:, None] - v[None, :]) / r if r > 0 else np.zeros((v.size, v.size))
    if kind == "cox":
        ev = y[:, 0]
        G = np.where(ev[:, None] != ev[None, :], 0.5, G)
    return np.clip(G, 0.0, 1.0)


def default_alpha(X, fam: Family, y) -> float:
    """Supervision level ``D_y / (D_y + ||X - Xbar||_F^2)``."""
    X = np.asarray(X, dtype=float)
    dev_x = float(np.sum((X - X.mean(axis=0)) ** 2))
    dev_y = null_deviance(as_family(fam), y)
    if dev_x + dev_y <= 0:
        raise DegenerateInputError("both X and y are constant; alpha is undefined")
    return dev_y / (dev_y + dev_x)


def knn_mask(dist, k):
    """Symmetric indicator: j among i's k nearest neighbours, or vice versa."""
    n = dist.shape[0]
    if not 0 < k < n:
        raise ValueError(f"k must satisfy 0 < k < n (k={k}, n={n})")
    d = dist.copy()
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), k), nn.ravel()] = True
    return mask | mask.T


def graph_from_distances(dist, k=DEFAULT_K, phi=None, alpha=0.0) -> WeightGraph:
    """k-NN Gaussian-kernel graph from a precomputed distance matrix.

    A disconnected k-NN graph is repaired with minimum-spanning-tree edges
    and a :class:`ConnectivityWarning`.
    """
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    mask = knn_mask(dist, k)
    iu, ju = np.nonzero(np.triu(mask, 1))
    edges = np.column_stack([iu, ju])
    note = None
    ncomp, _ = _components(n, edges)
    if ncomp > 1:
        # offset keeps zero distances as real MST edges
        mst = minimum_spanning_tree(np.triu(dist, 1) + np.triu(np.full((n, n), 1e-12), 1)).tocoo()
        extra = {(min(a, b), max(a, b)) for a, b in zip(mst.row.tolist(), mst.col.tolist())}
        extra -= {tuple(e) for e in edges.tolist()}
        if extra:
            edges = np.vstack([edges, np.array(sorted(extra), dtype=np.int64)])
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
        note = f"k-NN graph had {ncomp} components; added {len(extra)} spanning-tree edges"
        warnings.warn(note, ConnectivityWarning, stacklevel=3)
    d_edge = dist[edges[:, 0], edges[:, 1]]
    if phi is None:
        med = float(np.median(d_edge)) if d_edge.size else 0.0
        phi = np.log(2.0) / med if med > 0 else 0.0
    if phi < 0:
        raise ValueError("phi must be non-negative")
    w = np.exp(-phi * d_edge)
    keep = w > 0
    return WeightGraph(n, edges[keep], w[keep], phi=float(phi), alpha=float(alpha), warning=note,
                       dist=d_edge[keep])


def blended_distance(X, y=None, fam: Family | None = None, alpha="auto", categorical=None):
    """``(1 - alpha) g(X_i, X_j) + alpha g(y_i, y_j)`` and the alpha actually used."""
    G = gower_matrix(X, categorical)
    if y is None:
        return G, 0.0
    if isinstance(alpha, str):
        if alpha != "auto":
            raise ValueError("alpha must be a number in [0, 1] or 'auto'")
        alpha = default_alpha(X, fam, y)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 0.0:
        return G, 0.0
    return (1.0 - alpha) * G + alpha * gower_y_matrix(fam, y), float(alpha)


def build_weights(X, y=None, fam: Family | None = None, k=DEFAULT_K, phi=None, alpha="auto",
                  categorical=None) -> WeightGraph:
    """Fusion weights ``w_ij = nu_ij exp(-phi * d_ij)`` over the blended Gower distance.

    ``nu_ij`` is the union k-NN indicator on the same blended distance. With
    ``y=None`` the graph is the unsupervised Gower k-NN graph on ``X``.
    ``phi=None`` maps the median retained distance to weight 1/2.
    """
    dist, a = blended_distance(X, y, fam, alpha, categorical)
    return graph_from_distances(dist, k=k, phi=phi, alpha=a)


def column_weights(X, k=DEFAULT_K, phi=None) -> WeightGraph:
    """Feature-side fusion graph: the same recipe applied to the columns of ``X``.

    ``k`` is capped at ``p - 1`` so that short feature lists get a complete graph.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("column weights need at least two features")
    return graph_from_distances(gower_matrix(X.T), k=min(k, X.shape[1] - 1), phi=phi)
