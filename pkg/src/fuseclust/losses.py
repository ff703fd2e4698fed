"""Negative log-likelihood losses for the supervising variable.

Every family works on a linear predictor ``eta``:

* gaussian, bernoulli, poisson: ``y`` and ``eta`` are 1-D arrays of length n.
* multinomial: ``y`` is an (n, K) one-hot matrix and ``eta`` is (n, K).
* cox: ``y`` is an (n, 2) array whose columns are (event, time); ``eta`` is
  1-D. Tied times are handled with Breslow's convention.

Losses are summed over observations.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .exceptions import ClippingWarning, DegenerateInputError, FamilyMismatchError

KINDS = ("gaussian", "bernoulli", "poisson", "multinomial", "cox")

# exponentials and logits are clipped to this magnitude
ETA_CLIP = 30.0


@dataclass(frozen=True)
class Family:
    """A loss family. ``n_classes`` is only used by the multinomial family."""

    kind: str
    n_classes: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family {self.kind!r}; expected one of {KINDS}")
        if self.kind == "multinomial":
            if self.n_classes is None or self.n_classes < 2:
                raise ValueError("multinomial family needs n_classes >= 2")
        elif self.n_classes is not None:
            raise ValueError(f"{self.kind} family takes no class count")

    @property
    def width(self):
        """Number of linear-predictor columns per observation."""
        return self.n_classes if self.kind == "multinomial" else 1

    @property
    def has_link(self):
        return self.kind != "cox"

    def __str__(self):
        if self.kind == "multinomial":
            return f"multinomial({self.n_classes})"
        return self.kind


def family(spec, n_classes=None) -> Family:
    """Coerce a string such as ``"poisson"`` or ``"multinomial(3)"`` to a Family."""
    if isinstance(spec, Family):
        return spec
    spec = str(spec).strip().lower()
    if spec.startswith("multinomial") and "(" in spec:
        n_classes = int(spec[spec.index("(") + 1 : spec.rindex(")")])
        spec = "multinomial"
    return Family(spec, n_classes)


def surv(event, time):
    """Stack event indicators and times into the (n, 2) cox layout."""
    event = np.asarray(event, dtype=float)
    time = np.asarray(time, dtype=float)
    if event.shape != time.shape or event.ndim != 1:
        raise ValueError("event and time must be 1-D arrays of equal length")
    return np.column_stack([event, time])


def one_hot(labels, n_classes=None):
    """Encode integer class labels ``0..K-1`` as an (n, K) indicator matrix."""
    labels = np.asarray(labels).astype(int)
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def check_response(fam: Family, y) -> np.ndarray:
    """Validate ``y`` against the family layout and return it as a float array."""
    fam = family(fam)
    y = np.asarray(y, dtype=float)
    kind = fam.kind
    if kind == "multinomial":
        if y.ndim != 2 or y.shape[1] != fam.n_classes:
            raise FamilyMismatchError(
                f"multinomial({fam.n_classes}) expects an (n, {fam.n_classes}) one-hot matrix, "
                f"got shape {y.shape}"
            )
        if not (np.isin(y, (0.0, 1.0)).all() and np.all(y.sum(axis=1) == 1.0)):
            raise FamilyMismatchError("multinomial rows must be one-hot")
    elif kind == "cox":
        if y.ndim != 2 or y.shape[1] != 2:
            raise FamilyMismatchError(f"cox expects an (n, 2) [event, time] array, got {y.shape}")
        if not np.isin(y[:, 0], (0.0, 1.0)).all():
            raise FamilyMismatchError("cox event indicators must be 0 or 1")
        if np.any(y[:, 1] <= 0):
            raise FamilyMismatchError("cox times must be strictly positive")
    else:
        if y.ndim != 1:
            raise FamilyMismatchError(f"{kind} expects a 1-D response, got shape {y.shape}")
        if kind == "bernoulli" and not np.isin(y, (0.0, 1.0)).all():
            raise FamilyMismatchError("bernoulli responses must be 0 or 1")
        if kind == "poisson" and (np.any(y < 0) or np.any(y != np.round(y))):
            raise FamilyMismatchError("poisson responses must be non-negative integers")
    if not np.all(np.isfinite(y)):
        raise FamilyMismatchError("response contains non-finite values")
    return y


def _check_eta(fam: Family, y, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    n = y.shape[0]
    want = (n, fam.n_classes) if fam.kind == "multinomial" else (n,)
    if eta.shape != want:
        raise ValueError(f"linear predictor has shape {eta.shape}, expected {want}")
    if not np.all(np.isfinite(eta)):
        raise ValueError("linear predictor contains non-finite values")
    return eta


class _RiskSets:
    """Sorted-time bookkeeping for Breslow risk sets R(t_i) = {j : t_j >= t_i}."""

    def __init__(self, time):
        self.order = np.argsort(time, kind="stable")
        ts = time[self.order]
        # first/last sorted position sharing each sorted time
        self.first = np.searchsorted(ts, ts, side="left")
        self.last = np.searchsorted(ts, ts, side="right") - 1


def _cox_parts(y, eta):
    event, time = y[:, 0], y[:, 1]
    rs = _RiskSets(time)
    shift = eta.max()
    e_sorted = np.exp(eta[rs.order] - shift)
    # suffix sums give the risk-set denominators
    suffix = np.cumsum(e_sorted[::-1])[::-1]
    denom = suffix[rs.first]
    return rs, event[rs.order], eta[rs.order], e_sorted, denom, shift


def _cox_loss(y, eta):
    if y.shape[0] == 0:
        return 0.0
    _, ev, eta_s, _, denom, shift = _cox_parts(y, eta)
    return float(np.sum(ev * (np.log(denom) + shift - eta_s)))


def _cox_grad(y, eta):
    n = y.shape[0]
    if n == 0:
        return np.zeros(0)
    rs, ev, _, e_sorted, denom, _ = _cox_parts(y, eta)
    acc = np.cumsum(ev / denom)[rs.last]
    g_sorted = e_sorted * acc - ev
    g = np.empty(n)
    g[rs.order] = g_sorted
    return g


def _loss(kind, y, eta):
    if kind == "gaussian":
        return float(0.5 * np.sum((y - eta) ** 2))
    if kind == "bernoulli":
        return float(np.sum(np.logaddexp(0.0, eta) - y * eta))
    if kind == "poisson":
        # linear continuation above the clip keeps the loss convex and
        # consistent with the clipped gradient
        mean = np.exp(np.minimum(eta, ETA_CLIP)) * (1.0 + np.maximum(eta - ETA_CLIP, 0.0))
        return float(np.sum(mean - y * eta))
    if kind == "multinomial":
        return float(np.sum(logsumexp(eta, axis=1)) - np.sum(y * eta))
    return _cox_loss(y, eta)


def _grad(kind, y, eta):
    if kind == "gaussian":
        return eta - y
    if kind == "bernoulli":
        return expit(eta) - y
    if kind == "poisson":
        return np.exp(np.minimum(eta, ETA_CLIP)) - y
    if kind == "multinomial":
        return softmax(eta, axis=1) - y
    return _cox_grad(y, eta)


def eval_loss(fam: Family, y, eta) -> float:
    """Total loss ``sum_i l(y_i; eta_i)``."""
    fam = family(fam)
    y = check_response(fam, y)
    return _loss(fam.kind, y, _check_eta(fam, y, eta))


def eval_grad(fam: Family, y, eta) -> np.ndarray:
    """Gradient of :func:`eval_loss` with respect to ``eta`` (same shape as eta)."""
    fam = family(fam)
    y = check_response(fam, y)
    return _grad(fam.kind, y, _check_eta(fam, y, eta))


def lipschitz(fam: Family, y, eta) -> float:
    """Bound on the curvature of the loss near ``eta``.

    Global constants for gaussian, bernoulli and multinomial; for poisson and
    cox the bound is local to ``eta`` and the caller must guard steps with
    backtracking.
    """
    fam = family(fam)
    kind = fam.kind
    if kind == "gaussian":
        return 1.0
    if kind == "bernoulli":
        return 0.25
    if kind == "multinomial":
        return 0.5
    eta = np.asarray(eta, dtype=float)
    if kind == "poisson":
        return float(np.exp(min(eta.max(), ETA_CLIP))) if eta.size else 0.0
    y = np.asarray(y, dtype=float)
    # Cox Hessian is dominated by diag(grad + event)
    return float(np.max(_cox_grad(y, eta) + y[:, 0])) if eta.size else 0.0


class LossCenter(NamedTuple):
    eta: np.ndarray
    degenerate: bool


def _clip_center(value):
    degenerate = not np.isfinite(value) or abs(value) > ETA_CLIP
    return float(np.clip(np.nan_to_num(value, posinf=ETA_CLIP, neginf=-ETA_CLIP), -ETA_CLIP, ETA_CLIP)), degenerate


def loss_center(fam: Family, y) -> LossCenter:
    """Best constant linear predictor, broadcast to every observation.

    Diverging centers (all-0 or all-1 bernoulli, all-zero poisson, an empty
    multinomial class) are clipped to +/-30 and flagged as degenerate. The cox
    center is the zero predictor because the partial likelihood is invariant
    to constant shifts.
    """
    fam = family(fam)
    y = check_response(fam, y)
    n = y.shape[0]
    kind = fam.kind
    if kind == "gaussian":
        return LossCenter(np.full(n, y.mean()), False)
    if kind == "bernoulli":
        m = y.mean()
        with np.errstate(divide="ignore"):
            value, deg = _clip_center(np.log(m) - np.log1p(-m))
        return LossCenter(np.full(n, value), deg)
    if kind == "poisson":
        with np.errstate(divide="ignore"):
            value, deg = _clip_center(np.log(y.mean()))
        return LossCenter(np.full(n, value), deg)
    if kind == "multinomial":
        freq = y.mean(axis=0)
        with np.errstate(divide="ignore"):
            logits = np.log(freq)
        finite = np.isfinite(logits)
        deg = not finite.all()
        logits[~finite] = -ETA_CLIP
        logits = logits - logits.mean()
        return LossCenter(np.tile(logits, (n, 1)), deg)
    return LossCenter(np.zeros(n), False)


def saturated_loss(fam: Family, y) -> float:
    """Infimum of the loss over per-observation predictors.

    Zero for every family except poisson, whose loss omits ``log y!`` and
    bottoms out at ``sum(y - y log y)``.
    """
    fam = family(fam)
    if fam.kind != "poisson":
        return 0.0
    y = check_response(fam, y)
    pos = y > 0
    return float(np.sum(y[pos] - y[pos] * np.log(y[pos])))


def null_deviance(fam: Family, y) -> float:
    """Loss at the loss-specific center, measured from the saturated loss."""
    fam = family(fam)
    return eval_loss(fam, y, loss_center(fam, y).eta) - saturated_loss(fam, y)


def pi_data(X) -> float:
    """``1 / (0.5 ||X - Xbar||_F^2)``."""
    X = np.asarray(X, dtype=float)
    dev_x = 0.5 * np.sum((X - X.mean(axis=0)) ** 2)
    if dev_x <= 0:
        raise DegenerateInputError("X is constant: its null deviance is zero")
    return 1.0 / dev_x


def default_pi(X, fam: Family, y):
    """Data-driven weights ``(pi_X, pi_y)``: inverse null deviances of each source."""
    fam = family(fam)
    pi_x = pi_data(X)
    dev_y = null_deviance(fam, y)
    if dev_y <= 0:
        raise DegenerateInputError("y is constant at its center: its null deviance is zero")
    return pi_x, 1.0 / dev_y


def link(fam: Family, mu):
    """Map a mean to the linear-predictor scale.

    Values on the boundary of the domain (probabilities 0 or 1, zero counts)
    are clipped to +/-30 with a :class:`ClippingWarning`. For the multinomial
    family ``mu`` holds class probabilities per row and the result is the
    sum-to-zero logit vector.
    """
    fam = family(fam)
    kind = fam.kind
    mu = np.asarray(mu, dtype=float)
    if kind == "cox":
        raise FamilyMismatchError("the cox family has no link function")
    if kind == "gaussian":
        return mu.copy()
    with np.errstate(divide="ignore"):
        if kind == "bernoulli":
            out = np.log(mu) - np.log1p(-mu)
        elif kind == "poisson":
            out = np.log(mu)
        else:
            out = np.log(mu)
    if np.any(~np.isfinite(out) | (np.abs(out) > ETA_CLIP)):
        warnings.warn(f"{kind} link clipped to +/-{ETA_CLIP:g}", ClippingWarning, stacklevel=2)
        out = np.clip(np.nan_to_num(out, posinf=ETA_CLIP, neginf=-ETA_CLIP), -ETA_CLIP, ETA_CLIP)
    if kind == "multinomial":
        out = out - out.mean(axis=-1, keepdims=True)
    return out


def inverse_link(fam: Family, eta):
    """Map a linear predictor back to the mean scale."""
    fam = family(fam)
    kind = fam.kind
    eta = np.asarray(eta, dtype=float)
    if kind == "cox":
        raise FamilyMismatchError("the cox family has no link function")
    if kind == "gaussian":
        return eta.copy()
    if kind == "bernoulli":
        return expit(eta)
    if kind == "poisson":
        return np.exp(np.minimum(eta, ETA_CLIP))
    return softmax(eta, axis=-1)
