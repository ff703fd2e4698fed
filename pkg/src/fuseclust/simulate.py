"""Seedable generators for the benchmark simulation scenarios.

Base scenarios use n = 120 observations, p = 30 features and three equal
groups. Group labels are 1-based and contiguous in the output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .exceptions import FuseclustError
from .losses import Family, family as as_family, one_hot, surv

SCENARIOS = ("S1", "S2", "H1", "H2", "AS1", "AS2", "covariate", "varying-p", "unequal-groups",
             "biclust")

# censoring level shared by every group
CENSOR_RATE = 0.30
# ratio between consecutive group hazard rates
HAZARD_RATIO = 3.0


@dataclass
class SimOutput:
    X: np.ndarray
    y: np.ndarray
    family: Family
    labels: np.ndarray
    centroids: np.ndarray
    Z: np.ndarray | None = None
    beta: np.ndarray | None = None
    col_labels: np.ndarray | None = None


def _group_labels(sizes):
    return np.repeat(np.arange(1, len(sizes) + 1), sizes)


def _spherical_means(scenario, p):
    h = p // 2
    block = lambda a, b: np.concatenate([np.full(h, a), np.full(p - h, b)])  # noqa: E731
    if scenario == "S1":
        return np.vstack([block(1.6, 2.0), block(2.0, 0.0), block(2.4, 2.0)])
    return np.vstack([block(-1.0, 0.0), block(0.0, 2.0), block(1.0, 0.0)])


def _y_for_groups(scenario, fam: Family, labels, rng):
    """Supervising variable for the S1/H1 (``"1"``) or S2/H2 (``"2"``) designs."""
    design = scenario[-1]
    g = labels - 1
    n = labels.size
    kind = fam.kind
    if kind == "gaussian":
        if design == "1":
            mean, sd = np.array([2.25, 4.0, 5.75]), np.array([1.0, 2.0, 1.0])
        else:
            mean, sd = np.array([1.0, 4.5, 8.0]), np.full(3, np.sqrt(4.4))
        return rng.normal(mean[g], sd[g])
    if kind == "bernoulli":
        if design == "2":
            raise FuseclustError("binary y cannot form three separate groups in S2/H2")
        return rng.binomial(1, np.array([0.85, 0.5, 0.15])[g]).astype(float)
    if kind == "multinomial":
        if design == "1":
            probs = np.array([[0.75, 0.15, 0.1], [1 / 3, 1 / 3, 1 / 3], [0.1, 0.15, 0.75]])
        else:
            probs = np.array([[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]])
        cls = np.array([rng.choice(3, p=probs[k]) for k in g])
        return one_hot(cls, 3)
    if kind == "poisson":
        if design == "1":
            mix = rng.choice([1.0, 5.0, 9.0], size=n)
            mu = np.where(g == 0, 1.0, np.where(g == 2, 9.0, mix))
        else:
            mu = np.array([1.0, 10.0, 23.0])[g]
        return rng.poisson(mu).astype(float)
    if kind == "cox":
        return _survival(g, rng)
    raise FuseclustError(f"unsupported family {fam}")


def _censor_scale(rate=CENSOR_RATE):
    # for T ~ Exp(r), C ~ U(0, b): P(C < T) = (1 - exp(-r b)) / (r b)
    return brentq(lambda x: (1.0 - np.exp(-x)) / x - rate, 1e-9, 1e6)


def _survival(g, rng, censor_rate=CENSOR_RATE):
    rates = HAZARD_RATIO ** g.astype(float)
    t = rng.exponential(1.0 / rates)
    if censor_rate <= 0:
        return surv(np.ones_like(t), t)
    b = _censor_scale(censor_rate) / rates
    c = rng.uniform(0.0, b)
    event = (t <= c).astype(float)
    return surv(event, np.minimum(t, c))


def gen_spherical(scenario="S1", family="gaussian", seed=0, n=120, p=30, sigma=None,
                  sizes=None) -> SimOutput:
    """Gaussian blobs ``X_i ~ N(mu_k, sigma^2 I)`` with a group-dependent ``y``."""
    if scenario not in ("S1", "S2"):
        raise FuseclustError(f"gen_spherical handles S1/S2, not {scenario}")
    fam = as_family(family, 3 if str(family) == "multinomial" else None)
    rng = np.random.default_rng(seed)
    sizes = sizes or [n // 3, n // 3, n - 2 * (n // 3)]
    labels = _group_labels(sizes)
    means = _spherical_means(scenario, p)
    if sigma is None:
        sigma = 1.0 if scenario == "S1" else np.sqrt(4.4)
    X = means[labels - 1] + sigma * rng.standard_normal((labels.size, p))
    y = _y_for_groups(scenario, fam, labels, rng)
    return SimOutput(X, y, fam, labels, means[labels - 1])


def halfmoon_arcs(t):
    """Three half-moon arcs at parameter ``t`` in [0, pi].

    Arcs 1 and 3 are upper unit half circles centred at (0, 0) and
    (0, HALFMOON_OFFSET), so they cross. Arc 2 is the lower half circle
    centred at (1, 0.5), interlocking with arc 1 at a gap of about 0.5.
    """
    t = np.asarray(t, dtype=float)
    a1 = np.column_stack([np.cos(t), np.sin(t)])
    a2 = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    a3 = np.column_stack([np.cos(t), HALFMOON_OFFSET + np.sin(t)])
    return a1, a2, a3


HALFMOON_OFFSET = 0.6
HALFMOON_JITTER = {"H1": 0.02, "H2": 0.65}


def gen_halfmoons(scenario="H1", family="gaussian", seed=0, n=120, jitter=None) -> SimOutput:
    """Three interlocking half moons in the plane with Gaussian jitter."""
    if scenario not in ("H1", "H2"):
        raise FuseclustError(f"gen_halfmoons handles H1/H2, not {scenario}")
    fam = as_family(family, 3 if str(family) == "multinomial" else None)
    rng = np.random.default_rng(seed)
    sizes = [n // 3, n // 3, n - 2 * (n // 3)]
    labels = _group_labels(sizes)
    jitter = HALFMOON_JITTER[scenario] if jitter is None else jitter
    parts, cents = [], []
    for k, size in enumerate(sizes):
        t = rng.uniform(0.0, np.pi, size)
        arc = halfmoon_arcs(t)[k]
        parts.append(arc + jitter * rng.standard_normal(arc.shape))
        cents.append(arc)
    X = np.vstack(parts)
    y = _y_for_groups("S" + scenario[-1], fam, labels, rng)
    return SimOutput(X, y, fam, labels, np.vstack(cents))


# fraction of each group moved to the extra X cluster in AS1
AS1_MOVE_FRACTION = 0.25
# fraction of AS2 points pulled toward another cluster
AS2_NOISY_FRACTION = 0.15
# within-cluster standard deviation per feature count for the varying-p scenario
VARYING_P_SIGMA = {30: 1.0, 50: 1.2, 100: 1.3}
# standard deviation of the covariate effect on the link scale, non-gaussian families
COVARIATE_LINK_SD = 1.0


def gen_additional(scenario, family="gaussian", seed=0, p=None) -> SimOutput:
    """AS1, AS2, covariate, varying-p, unequal-groups and biclust scenarios."""
    rng = np.random.default_rng(seed)
    if scenario == "unequal-groups":
        return gen_spherical("S1", family, seed, sizes=[80, 10, 30])
    if scenario == "varying-p":
        p = 50 if p is None else p
        sigma = VARYING_P_SIGMA.get(p, np.sqrt(p / 30.0))
        return gen_spherical("S1", family, seed, p=p, sigma=sigma)
    if scenario == "biclust":
        out = gen_spherical("S1", family, seed)
        out.col_labels = np.repeat([1, 2], [15, 15])
        return out
    if scenario == "AS1":
        return _gen_as1(family, rng)
    if scenario == "AS2":
        return _gen_as2(family, rng)
    if scenario == "covariate":
        return _gen_covariate(family, rng)
    raise FuseclustError(f"unknown scenario {scenario!r}")


def _gen_as1(family, rng):
    fam = as_family(family, 3 if str(family) == "multinomial" else None)
    if fam.kind not in ("bernoulli", "multinomial"):
        raise FuseclustError("AS1 supports binary and categorical y")
    p = 30
    h = p // 2
    means = np.vstack([
        np.concatenate([np.full(h, -1.0), np.zeros(h)]),
        np.concatenate([np.zeros(h), np.full(h, -4.0)]),
        np.concatenate([np.full(h, 1.0), np.zeros(h)]),
        # centroid of the reassigned observations
        np.concatenate([np.zeros(h), np.full(h, 4.0)]),
    ])
    group = _group_labels([40, 40, 40])
    labels = group.copy()
    for k in (1, 2, 3):
        idx = np.flatnonzero(group == k)
        moved = rng.choice(idx, int(round(AS1_MOVE_FRACTION * idx.size)), replace=False)
        labels[moved] = 4
    X = means[labels - 1] + np.sqrt(2.0) * rng.standard_normal((labels.size, p))
    if fam.kind == "multinomial":
        y = _y_for_groups("S2", fam, group, rng)
    else:
        y = rng.binomial(1, np.array([0.9, 0.1, 0.9])[group - 1]).astype(float)
    return SimOutput(X, y, fam, labels, means[labels - 1])


def _gen_as2(family, rng):
    fam = as_family(family, 5 if str(family) == "multinomial" else None)
    if fam.kind != "multinomial" or fam.n_classes != 5:
        raise FuseclustError("AS2 supports categorical y with 5 classes")
    out = gen_spherical("S2", "gaussian", int(rng.integers(2**31)))
    labels, X, means = out.labels, out.X.copy(), np.unique(out.centroids, axis=0)
    means = _spherical_means("S2", X.shape[1])
    n = labels.size
    noisy = rng.choice(n, int(round(AS2_NOISY_FRACTION * n)), replace=False)
    for i in noisy:
        other = rng.choice([k for k in (1, 2, 3) if k != labels[i]])
        X[i] += 0.5 * (means[other - 1] - means[labels[i] - 1])
    probs = np.array([[0.5, 0, 0, 0, 0.5], [0, 0, 1.0, 0, 0], [0, 0.5, 0, 0.5, 0]])
    cls = np.array([rng.choice(5, p=probs[k - 1]) for k in labels])
    return SimOutput(X, one_hot(cls, 5), fam, labels, means[labels - 1])


def _gen_covariate(family, rng, d=10):
    fam = as_family(family, 3 if str(family) == "multinomial" else None)
    base = gen_spherical("S1", "gaussian", int(rng.integers(2**31)))
    labels, X = base.labels, base.X
    n = labels.size
    g = labels - 1
    Z = rng.standard_normal((n, d))
    beta = rng.normal(rng.choice([-3.0, 3.0], d), 1.0)
    if fam.kind == "gaussian":
        mean, sd = np.array([2.25, 4.0, 5.75]), np.array([1.0, 2.0, 1.0])
        y = rng.normal(mean[g] + Z @ beta, sd[g])
        return SimOutput(X, y, fam, labels, base.centroids, Z=Z, beta=beta)
    # covariate effect rescaled to COVARIATE_LINK_SD on the link scale
    beta = beta * COVARIATE_LINK_SD / np.linalg.norm(beta)
    shift = Z @ beta
    if fam.kind == "poisson":
        mu = np.array([1.0, 4.0, 9.0])[g]
        y = rng.poisson(mu * np.exp(shift)).astype(float)
    elif fam.kind == "bernoulli":
        p0 = np.array([0.85, 0.5, 0.15])[g]
        eta = np.log(p0 / (1 - p0)) + shift
        y = rng.binomial(1, 1 / (1 + np.exp(-eta))).astype(float)
    elif fam.kind == "multinomial":
        probs = np.array([[0.75, 0.15, 0.1], [1 / 3, 1 / 3, 1 / 3], [0.1, 0.15, 0.75]])[g]
        beta_k = np.column_stack([beta, np.zeros(d), -beta])
        logits = np.log(probs) + Z @ beta_k
        pr = np.exp(logits - logits.max(axis=1, keepdims=True))
        pr /= pr.sum(axis=1, keepdims=True)
        y = one_hot(np.array([rng.choice(3, p=row) for row in pr]), 3)
        beta = beta_k
    else:
        rates = HAZARD_RATIO ** g.astype(float) * np.exp(shift)
        t = rng.exponential(1.0 / rates)
        c = rng.uniform(0.0, _censor_scale() / rates)
        y = surv((t <= c).astype(float), np.minimum(t, c))
    return SimOutput(X, y, fam, labels, base.centroids, Z=Z, beta=beta)


def gen_survival(scenario="S1", seed=0, censor_rate=CENSOR_RATE) -> SimOutput:
    """Censored survival ``y`` (exponential times, uniform censoring) on S/H data."""
    if scenario in ("S1", "S2"):
        out = gen_spherical(scenario, "gaussian", seed)
    elif scenario in ("H1", "H2"):
        out = gen_halfmoons(scenario, "gaussian", seed)
    else:
        raise FuseclustError(f"survival y is available for S1/S2/H1/H2, not {scenario}")
    rng = np.random.default_rng([seed, 7])
    out.y = _survival(out.labels - 1, rng, censor_rate)
    out.family = Family("cox")
    return out


def simulate(scenario, family="gaussian", seed=0, **kw) -> SimOutput:
    """Dispatch to the generator for ``scenario``."""
    fam = str(family)
    if fam in ("cox", "survival"):
        return gen_survival(scenario, seed, **kw)
    if scenario in ("S1", "S2"):
        return gen_spherical(scenario, family, seed, **kw)
    if scenario in ("H1", "H2"):
        return gen_halfmoons(scenario, family, seed, **kw)
    return gen_additional(scenario, family, seed, **kw)
