"""Adaptive supervised convex clustering with covariate-adjusted weights.

Stage 1 fits with weights built from the raw supervising variable and reads
off the covariate effect. Stage 2 strips that effect from ``y`` and rebuilds
the weights. Stage 3 refits with the new weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import losses
from .admm import FitState, SCCProblem, SolveReport, SolverOptions
from .losses import check_response, inverse_link, link
from .selection import (
    ClusterAssignment,
    PathPoint,
    default_fusion_tol,
    extract_clusters,
    fit_n_clusters,
    stability_select,
)
from .weights import DEFAULT_K, WeightGraph, build_weights, gower_matrix, gower_y_matrix, graph_from_distances

log = logging.getLogger(__name__)


def residualize_y(family, y, Z, beta_hat):
    """Supervising variable with the covariate effect removed: ``g^-1(g(y) - Z beta_hat)``.

    Boundary values of ``g(y)`` are clipped to +/-30 (with a warning). For the
    cox family there is no link; the times are rescaled to ``t * exp(Z beta_hat)``
    and the event indicators kept. When ``Z beta_hat`` is identically zero the
    input is returned unchanged.
    """
    fam = losses.family(family)
    y = check_response(fam, y)
    Z = np.asarray(Z, dtype=float).reshape(y.shape[0], -1)
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(Z.shape[1], -1)
    shift = Z @ beta_hat
    if not np.any(shift):
        return y.copy()
    if fam.kind == "cox":
        out = y.copy()
        out[:, 1] = y[:, 1] * np.exp(np.clip(shift[:, 0], -losses.ETA_CLIP, losses.ETA_CLIP))
        return out
    if fam.kind != "multinomial":
        shift = shift[:, 0]
    return inverse_link(fam, link(fam, y) - shift)


def _deviance(fam, yhat):
    # loss at the constant center minus loss at the saturated predictor; works
    # for fractional responses produced by residualize_y
    kind = fam.kind
    if kind == "cox":
        return losses.null_deviance(fam, yhat)
    if kind == "gaussian":
        return 0.5 * float(np.sum((yhat - yhat.mean()) ** 2))
    if kind == "multinomial":
        freq = yhat.mean(axis=0)
        center = np.tile(np.log(np.clip(freq, 1e-300, None)), (yhat.shape[0], 1))
        sat = np.log(np.clip(yhat, 1e-300, None))
    elif kind == "bernoulli":
        m = np.clip(yhat.mean(), 1e-12, 1 - 1e-12)
        center = np.full(yhat.shape, np.log(m) - np.log1p(-m))
        sat = np.log(np.clip(yhat, 1e-300, None)) - np.log(np.clip(1 - yhat, 1e-300, None))
    else:
        center = np.full(yhat.shape, np.log(max(yhat.mean(), 1e-300)))
        sat = np.log(np.clip(yhat, 1e-300, None))
    sat = np.clip(sat, -losses.ETA_CLIP, losses.ETA_CLIP)
    return float(losses._loss(kind, yhat, center) - losses._loss(kind, yhat, sat))


def _yhat_distance(fam, yhat):
    # range-normalized distances on the adjusted response; multinomial
    # averages over the class-probability columns
    if fam.kind == "cox":
        return gower_y_matrix(fam, yhat)
    cols = yhat if yhat.ndim == 2 else yhat[:, None]
    G = np.zeros((cols.shape[0], cols.shape[0]))
    for c in cols.T:
        r = c.max() - c.min()
        if r > 0:
            G += np.abs(c[:, None] - c[None, :]) / r
    return np.clip(G / cols.shape[1], 0.0, 1.0)


def adjusted_weights(X, family, yhat, k=DEFAULT_K, phi=None, categorical=None) -> WeightGraph:
    """Weights from Gower distances on ``(X, yhat)`` with the supervision level recomputed on ``yhat``."""
    fam = losses.family(family)
    X = np.asarray(X, dtype=float)
    dev_x = float(np.sum((X - X.mean(axis=0)) ** 2))
    dev_y = _deviance(fam, np.asarray(yhat, dtype=float))
    alpha = dev_y / (dev_y + dev_x) if dev_x + dev_y > 0 else 0.0
    dist = (1.0 - alpha) * gower_matrix(X, categorical) + alpha * _yhat_distance(fam, yhat)
    return graph_from_distances(dist, k=k, phi=phi, alpha=alpha)


@dataclass
class AdaptiveResult:
    fit: FitState
    report: SolveReport
    assignment: ClusterAssignment
    lam: float
    beta_hat: np.ndarray
    y_adjusted: np.ndarray
    stage1_graph: WeightGraph
    stage2_graph: WeightGraph
    stage1_lam: float
    stage1_report: SolveReport


def _select(prob, K, lambdas, opts, exact, select_kw, X, y, family, Z, pi, weight_kw):
    if K is not None:
        return fit_n_clusters(prob, K, opts=opts, exact=exact)
    if lambdas is None:
        raise ValueError("give a target K or a lambda grid for stability selection")
    res = stability_select(X, y, family, lambdas, Z=Z, pi=pi, weight_kw=weight_kw, opts=opts,
                           **(select_kw or {}))
    fit, rep = prob.solve(res.lam, opts=opts)
    return PathPoint(res.lam, fit, rep, extract_clusters(fit, prob.graph, default_fusion_tol(prob)))


def adaptive_fit(X, y, family, Z, K=None, lambdas=None, pi=None, k=DEFAULT_K, phi=None,
                 opts: SolverOptions | None = None, exact=True, select_kw=None) -> AdaptiveResult:
    """Two-stage fit that removes covariate effects from the weights.

    With ``K`` given, each stage takes the lambda whose fit has ``K`` clusters
    (``exact=True`` raises :class:`TargetNotReachedError` listing the counts
    seen when the path skips ``K``; ``exact=False`` takes the nearest count
    above). Without ``K`` the lambda is chosen by stability selection over
    ``lambdas``.
    """
    fam = losses.family(family)
    y = check_response(fam, y)
    if Z is None:
        raise ValueError("adaptive fitting needs covariates Z")
    Z = np.asarray(Z, dtype=float).reshape(y.shape[0], -1)
    opts = opts or SolverOptions()
    weight_kw = {"k": k, "phi": phi}

    g1 = build_weights(X, y, fam, k=k, phi=phi)
    prob1 = SCCProblem(X, y, fam, g1, Z=Z, pi=pi)
    pt1 = _select(prob1, K, lambdas, opts, exact, select_kw, X, y, fam, Z, pi, weight_kw)
    beta_hat = pt1.fit.beta
    log.info("stage 1: lambda=%.4g K=%d", pt1.lam, pt1.K)

    yhat = residualize_y(fam, y, Z, beta_hat)
    if np.array_equal(yhat, y):
        g2 = g1
    else:
        g2 = adjusted_weights(X, fam, yhat, k=k, phi=phi)
    prob3 = SCCProblem(X, y, fam, g2, Z=Z, pi=pi)
    if g2 is g1:
        pt3 = pt1
    else:
        pt3 = _select(prob3, K, lambdas, opts, exact, select_kw, X, y, fam, Z, pi, weight_kw)
    log.info("stage 3: lambda=%.4g K=%d", pt3.lam, pt3.K)
    return AdaptiveResult(pt3.fit, pt3.report, pt3.assignment, pt3.lam, beta_hat, yhat, g1, g2,
                          pt1.lam, pt1.report)
