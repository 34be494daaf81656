"""Comp-sum and constrained surrogate losses with analytic gradients.

Comp-sum losses are written through the softmax: with ``L_y = -log softmax_y(s)``,

    logistic         L_y
    sum_exponential  exp(L_y) - 1
    mae              1 - exp(-L_y)
    gce(q)           (1 - exp(-q L_y)) / q

and every gradient has the shape ``w_y * (softmax(s) - e_y)``.

Constrained losses act on zero-mean scores; the mean is subtracted before
evaluation and the gradient is pushed back through that projection.
Each is written as ``sum_j weight_j * phi(s_j)`` with ``phi(v) = Phi(-v)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, as_finite, log_softmax

KINK_TOL = 1e-3

COMP_SUM_NAMES = ("logistic", "sum_exponential", "gce", "mae")
CONSTRAINED_NAMES = ("exponential", "hinge", "squared_hinge", "rho_margin")


@dataclass(frozen=True)
class CompSumKind:
    name: str
    q: float | None = None

    def __post_init__(self):
        if self.name not in COMP_SUM_NAMES:
            raise InvalidInputError(f"unknown comp-sum kind {self.name!r}")
        if self.name == "gce":
            if self.q is None or not 0.0 < self.q < 1.0:
                raise InvalidInputError("gce requires 0 < q < 1")
        elif self.q is not None:
            raise InvalidInputError(f"{self.name} takes no parameter")

    def __str__(self):
        return f"gce:{self.q:g}" if self.name == "gce" else self.name


@dataclass(frozen=True)
class ConstrainedKind:
    name: str
    rho: float | None = None

    def __post_init__(self):
        if self.name not in CONSTRAINED_NAMES:
            raise InvalidInputError(f"unknown constrained kind {self.name!r}")
        if self.name == "rho_margin":
            if self.rho is None or not self.rho > 0:
                raise InvalidInputError("rho_margin requires rho > 0")
        elif self.rho is not None:
            raise InvalidInputError(f"{self.name} takes no parameter")

    def __str__(self):
        return f"rho_margin:{self.rho:g}" if self.name == "rho_margin" else self.name


LOGISTIC = CompSumKind("logistic")
SUM_EXPONENTIAL = CompSumKind("sum_exponential")
MAE = CompSumKind("mae")
CSTND_EXP = ConstrainedKind("exponential")
HINGE = ConstrainedKind("hinge")
SQ_HINGE = ConstrainedKind("squared_hinge")


def parse_kind(text: str) -> CompSumKind | ConstrainedKind:
    """Parse ``"logistic"``, ``"gce:0.7"``, ``"rho_margin:1"`` and friends."""
    name, _, param = text.strip().partition(":")
    value = float(param) if param else None
    if name in COMP_SUM_NAMES:
        return CompSumKind(name, value)
    if name in CONSTRAINED_NAMES:
        return ConstrainedKind(name, value)
    raise InvalidInputError(f"unknown surrogate kind {text!r}")


def all_kinds(q: float = 0.5, rho: float = 1.0) -> list[CompSumKind | ConstrainedKind]:
    return [
        LOGISTIC, SUM_EXPONENTIAL, CompSumKind("gce", q), MAE,
        CSTND_EXP, HINGE, SQ_HINGE, ConstrainedKind("rho_margin", rho),
    ]


def _check_label(label, n: int) -> int:
    label = int(label)
    if not 0 <= label < n:
        raise InvalidInputError(f"label {label} out of range for {n} classes")
    return label


# -- comp-sum -----------------------------------------------------------------

def _comp_values(neg_logp: np.ndarray, kind: CompSumKind) -> np.ndarray:
    if kind.name == "logistic":
        return neg_logp
    if kind.name == "sum_exponential":
        return np.expm1(neg_logp)
    if kind.name == "mae":
        return -np.expm1(-neg_logp)
    return -np.expm1(-kind.q * neg_logp) / kind.q


def _comp_weights(neg_logp: np.ndarray, kind: CompSumKind) -> np.ndarray:
    # d loss / d s = w * (softmax - onehot)
    if kind.name == "logistic":
        return np.ones_like(neg_logp)
    if kind.name == "sum_exponential":
        return np.exp(neg_logp)
    if kind.name == "mae":
        return np.exp(-neg_logp)
    return np.exp(-kind.q * neg_logp)


def comp_sum_all(scores, kind: CompSumKind) -> np.ndarray:
    """Comp-sum loss for every candidate label at once (last axis)."""
    return np.maximum(_comp_values(-log_softmax(scores), kind), 0.0)


def comp_sum_loss(scores, label, kind: CompSumKind) -> float:
    s = as_finite(scores, ndim=1)
    y = _check_label(label, s.shape[0])
    return float(comp_sum_all(s, kind)[y])


def comp_sum_grad(scores, label, kind: CompSumKind) -> np.ndarray:
    s = as_finite(scores, ndim=1)
    y = _check_label(label, s.shape[0])
    logp = log_softmax(s)
    w = _comp_weights(-logp[y], kind)
    g = np.exp(logp)
    g[y] -= 1.0
    return w * g


def cost_sensitive_comp_sum_batch(scores, costs, kind: CompSumKind):
    """Per-row ``sum_k (1 - c_k) * comp(scores, k)`` and its gradient.

    ``scores`` and ``costs`` are (m, |K|); returns (values[m], grads[m, |K|]).
    """
    s = as_finite(scores, ndim=2)
    c = _check_costs(costs, s.shape)
    a = 1.0 - c
    logp = log_softmax(s, axis=1)
    neg = -logp
    vals = np.sum(a * np.maximum(_comp_values(neg, kind), 0.0), axis=1)
    aw = a * _comp_weights(neg, kind)
    grads = np.exp(logp) * aw.sum(axis=1, keepdims=True) - aw
    return vals, grads


def cost_sensitive_comp_sum(scores, cost_row, kind: CompSumKind) -> float:
    s = as_finite(scores, ndim=1)
    v, _ = cost_sensitive_comp_sum_batch(s[None, :], np.asarray(cost_row, dtype=float)[None, :], kind)
    return float(v[0])


def cost_sensitive_comp_sum_grad(scores, cost_row, kind: CompSumKind) -> np.ndarray:
    s = as_finite(scores, ndim=1)
    _, g = cost_sensitive_comp_sum_batch(s[None, :], np.asarray(cost_row, dtype=float)[None, :], kind)
    return g[0]


# -- constrained --------------------------------------------------------------

def _phi(v: np.ndarray, kind: ConstrainedKind) -> np.ndarray:
    if kind.name == "exponential":
        return np.exp(v)
    if kind.name == "hinge":
        return np.maximum(0.0, 1.0 + v)
    if kind.name == "squared_hinge":
        return np.maximum(0.0, 1.0 + v) ** 2
    return np.minimum(np.maximum(0.0, 1.0 + v / kind.rho), 1.0)


def _dphi(v: np.ndarray, kind: ConstrainedKind) -> np.ndarray:
    # right-derivatives at kinks
    if kind.name == "exponential":
        return np.exp(v)
    if kind.name == "hinge":
        return (v >= -1.0).astype(np.float64)
    if kind.name == "squared_hinge":
        return 2.0 * np.maximum(0.0, 1.0 + v)
    return np.where((v >= -kind.rho) & (v < 0.0), 1.0 / kind.rho, 0.0)


def _kinks(kind: ConstrainedKind) -> tuple[float, ...]:
    return {
        "exponential": (),
        "hinge": (-1.0,),
        "squared_hinge": (-1.0,),
        "rho_margin": (-kind.rho if kind.rho else 0.0, 0.0),
    }[kind.name]


def center(scores, axis: int = -1) -> np.ndarray:
    s = as_finite(scores)
    return s - s.mean(axis=axis, keepdims=True)


def kink_distance(scores, kind: ConstrainedKind) -> float:
    """Smallest distance of any centered score to a kink of ``phi``."""
    kinks = _kinks(kind)
    if not kinks:
        return float("inf")
    v = center(scores)
    return float(min(np.min(np.abs(v - k)) for k in kinks))


def _weighted_constrained(s: np.ndarray, weights: np.ndarray, kind: ConstrainedKind):
    v = center(s, axis=-1)
    vals = np.sum(weights * _phi(v, kind), axis=-1)
    g = weights * _dphi(v, kind)
    g = g - g.mean(axis=-1, keepdims=True)
    return vals, g


def constrained_loss(scores, label, kind: ConstrainedKind) -> float:
    s = as_finite(scores, ndim=1)
    y = _check_label(label, s.shape[0])
    w = np.ones_like(s)
    w[y] = 0.0
    return float(_weighted_constrained(s, w, kind)[0])


def constrained_grad(scores, label, kind: ConstrainedKind, return_flag: bool = False):
    """Gradient through the centering map; right-derivative at kinks.

    With ``return_flag=True`` also returns whether any centered score lies
    within ``KINK_TOL`` of a kink.
    """
    s = as_finite(scores, ndim=1)
    y = _check_label(label, s.shape[0])
    w = np.ones_like(s)
    w[y] = 0.0
    g = _weighted_constrained(s, w, kind)[1]
    if return_flag:
        return g, kink_distance(s, kind) < KINK_TOL
    return g


def cost_sensitive_constrained_batch(scores, costs, kind: ConstrainedKind):
    s = as_finite(scores, ndim=2)
    c = _check_costs(costs, s.shape)
    return _weighted_constrained(s, c, kind)


def cost_sensitive_constrained(scores, cost_row, kind: ConstrainedKind) -> float:
    s = as_finite(scores, ndim=1)
    v, _ = cost_sensitive_constrained_batch(s[None, :], np.asarray(cost_row, dtype=float)[None, :], kind)
    return float(v[0])


def cost_sensitive_constrained_grad(scores, cost_row, kind: ConstrainedKind) -> np.ndarray:
    s = as_finite(scores, ndim=1)
    _, g = cost_sensitive_constrained_batch(s[None, :], np.asarray(cost_row, dtype=float)[None, :], kind)
    return g[0]


# -- dispatch -----------------------------------------------------------------

def _check_costs(costs, shape) -> np.ndarray:
    c = as_finite(costs, "costs")
    if c.shape != tuple(shape):
        raise InvalidInputError(f"cost shape {c.shape} does not match scores {tuple(shape)}")
    if np.any(c < 0) or np.any(c > 1):
        raise InvalidInputError("costs must lie in [0, 1]")
    return c


def surrogate_loss(scores, label, kind) -> float:
    if isinstance(kind, CompSumKind):
        return comp_sum_loss(scores, label, kind)
    return constrained_loss(scores, label, kind)


def surrogate_grad(scores, label, kind) -> np.ndarray:
    if isinstance(kind, CompSumKind):
        return comp_sum_grad(scores, label, kind)
    return constrained_grad(scores, label, kind)


def cost_sensitive_batch(scores, costs, kind):
    """Values and score-gradients of the cost-sensitive surrogate, row-wise."""
    if isinstance(kind, CompSumKind):
        return cost_sensitive_comp_sum_batch(scores, costs, kind)
    return cost_sensitive_constrained_batch(scores, costs, kind)


def cost_sensitive_loss(scores, cost_row, kind) -> float:
    if isinstance(kind, CompSumKind):
        return cost_sensitive_comp_sum(scores, cost_row, kind)
    return cost_sensitive_constrained(scores, cost_row, kind)


def cost_sensitive_grad(scores, cost_row, kind) -> np.ndarray:
    if isinstance(kind, CompSumKind):
        return cost_sensitive_comp_sum_grad(scores, cost_row, kind)
    return cost_sensitive_constrained_grad(scores, cost_row, kind)
