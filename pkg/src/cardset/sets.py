"""Set predictors: top-k sets, threshold sets and split conformal sets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import InvalidInputError, argmax_last, as_finite, check_score_matrix, rank_desc

CARDINALITY_COSTS = ("linear", "logarithmic")


class CalibrationTooSmallError(InvalidInputError):
    pass


@dataclass(frozen=True)
class PredictionSet:
    labels: frozenset[int]

    def __post_init__(self):
        if not self.labels:
            raise InvalidInputError("prediction sets are never empty")

    @property
    def cardinality(self) -> int:
        return len(self.labels)

    def __contains__(self, y) -> bool:
        return int(y) in self.labels

    def __le__(self, other: PredictionSet) -> bool:
        return self.labels <= other.labels


def _check_k_list(K) -> tuple[int, ...]:
    ks = tuple(int(k) for k in K)
    if not ks or any(k < 1 for k in ks) or any(a >= b for a, b in zip(ks, ks[1:])):
        raise InvalidInputError(f"K must be strictly increasing positive integers, got {K!r}")
    return ks


@dataclass(frozen=True)
class TopKFamily:
    """Top-k sets of a base score matrix for each k in ``K``."""

    base_scores: np.ndarray
    K: tuple[int, ...]
    _ranks: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = check_score_matrix(self.base_scores, "base_scores")
        ks = _check_k_list(self.K)
        if ks[-1] > s.shape[1]:
            raise InvalidInputError(f"k={ks[-1]} exceeds label count {s.shape[1]}")
        object.__setattr__(self, "base_scores", s)
        object.__setattr__(self, "K", ks)
        object.__setattr__(self, "_ranks", rank_desc(s))

    @property
    def n_instances(self) -> int:
        return self.base_scores.shape[0]

    @property
    def n_labels(self) -> int:
        return self.base_scores.shape[1]

    def max_cardinality(self) -> int:
        return self.K[-1]

    def contains(self, labels) -> np.ndarray:
        """Boolean (m, |K|): whether ``labels[i]`` is in set k of instance i."""
        labels = np.asarray(labels)
        pos = np.argmax(self._ranks == labels[:, None], axis=1)  # rank position of y
        return pos[:, None] < np.asarray(self.K)[None, :]

    def cardinalities(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.K, dtype=np.int64), (self.n_instances, len(self.K)))

    def members(self) -> np.ndarray:
        """Boolean (m, |K|, n) membership of every label in every set."""
        pos = np.empty_like(self._ranks)
        rows = np.arange(self.n_instances)[:, None]
        pos[rows, self._ranks] = np.arange(self.n_labels)[None, :]
        return pos[:, None, :] < np.asarray(self.K)[None, :, None]

    def set_at(self, i: int, j: int) -> PredictionSet:
        return PredictionSet(frozenset(int(v) for v in self._ranks[i, : self.K[j]]))


@dataclass(frozen=True)
class ThresholdFamily:
    """Sets ``{y : s(x, y) > tau_k}`` with argmax fallback; tau strictly decreasing."""

    scores: np.ndarray
    thresholds: tuple[float, ...]

    def __post_init__(self):
        s = check_score_matrix(self.scores)
        taus = tuple(float(t) for t in self.thresholds)
        if not taus or any(a <= b for a, b in zip(taus, taus[1:])):
            raise InvalidInputError("thresholds must be strictly decreasing")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "thresholds", taus)

    @property
    def n_instances(self) -> int:
        return self.scores.shape[0]

    @property
    def n_labels(self) -> int:
        return self.scores.shape[1]

    def max_cardinality(self) -> int:
        return self.n_labels

    def members(self) -> np.ndarray:
        # (m, |K|, n) membership with empty-set fallback to the argmax label
        tau = np.asarray(self.thresholds)
        inside = self.scores[:, None, :] > tau[None, :, None]
        empty = ~inside.any(axis=2)
        if empty.any():
            top = argmax_last(self.scores, axis=1)
            rows, cols = np.nonzero(empty)
            inside[rows, cols, top[rows]] = True
        return inside

    def contains(self, labels) -> np.ndarray:
        labels = np.asarray(labels)
        m = self.members()
        return m[np.arange(self.n_instances), :, labels]

    def cardinalities(self) -> np.ndarray:
        return self.members().sum(axis=2)

    def set_at(self, i: int, j: int) -> PredictionSet:
        return threshold_set(self.scores[i], self.thresholds[j])


def topk_set(scores, k: int) -> PredictionSet:
    s = as_finite(scores, ndim=1)
    if not 1 <= k <= s.shape[0]:
        raise InvalidInputError(f"k={k} out of range 1..{s.shape[0]}")
    return PredictionSet(frozenset(int(v) for v in rank_desc(s)[:k]))


def _set_or_argmax(s: np.ndarray, mask: np.ndarray) -> PredictionSet:
    if not mask.any():
        return PredictionSet(frozenset({argmax_last(s)}))
    return PredictionSet(frozenset(int(v) for v in np.flatnonzero(mask)))


def threshold_set(scores, tau: float) -> PredictionSet:
    s = as_finite(scores, ndim=1)
    return _set_or_argmax(s, s > tau)


def conformal_set(scores, qhat: float) -> PredictionSet:
    s = as_finite(scores, ndim=1)
    return _set_or_argmax(s, s >= qhat)


def conformal_sets(scores, qhat: float) -> np.ndarray:
    """Boolean membership matrix for a batch, same rule as ``conformal_set``."""
    s = check_score_matrix(scores)
    inside = s >= qhat
    empty = ~inside.any(axis=1)
    if empty.any():
        rows = np.flatnonzero(empty)
        inside[rows, argmax_last(s[rows], axis=1)] = True
    return inside


def cardinality_cost(card, kind: str = "logarithmic"):
    c = np.asarray(card, dtype=np.float64)
    if np.any(c < 1):
        raise InvalidInputError("cardinality must be >= 1")
    if kind == "linear":
        out = c
    elif kind == "logarithmic":
        out = np.log(c)
    else:
        raise InvalidInputError(f"unknown cardinality cost {kind!r}")
    return float(out) if out.ndim == 0 else out


def conformal_threshold(calibration_scores, alpha: float) -> float:
    """Order statistic ``j = ceil(alpha (m + 1))`` (1-based, ascending) of the scores.

    Scores are conformity scores s(X_i, Y_i): higher means the true label
    looks more plausible.
    """
    s = as_finite(calibration_scores, "calibration_scores", ndim=1)
    m = s.shape[0]
    if m < 1:
        raise CalibrationTooSmallError("need at least one calibration score")
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError("alpha must lie in (0, 1)")
    # guard against alpha*(m+1) landing a hair above an integer
    j = max(1, math.ceil(round(alpha * (m + 1), 9)))
    if j > m:
        raise CalibrationTooSmallError(f"ceil(alpha (m+1)) = {j} exceeds m = {m}")
    return float(np.partition(s, j - 1)[j - 1])
