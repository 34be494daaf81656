"""Numeric primitives shared by every other module.

Ranking follows one tie rule everywhere: among equal scores the larger
label index comes first.
"""
from __future__ import annotations

import numpy as np

PROB_SUM_TOL = 1e-9
IDENTITY_TOL = 1e-12


class InvalidInputError(ValueError):
    """Raised on malformed numeric input (non-finite values, bad shapes)."""


def as_finite(x, name: str = "scores", ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_prob_vector(p, name: str = "p") -> np.ndarray:
    arr = as_finite(p, name, ndim=1)
    if np.any(arr < 0) or np.any(arr > 1):
        raise InvalidInputError(f"{name} entries must lie in [0, 1]")
    if abs(arr.sum() - 1.0) > PROB_SUM_TOL:
        raise InvalidInputError(f"{name} must sum to 1, sums to {arr.sum()!r}")
    return arr


def check_score_matrix(s, name: str = "scores") -> np.ndarray:
    arr = as_finite(s, name, ndim=2)
    if arr.shape[1] < 2:
        raise InvalidInputError(f"{name} needs at least 2 columns")
    return arr


def log_sum_exp(scores, axis: int = -1) -> np.ndarray | float:
    s = as_finite(scores)
    m = np.max(s, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(s - m), axis=axis, keepdims=True)) + m
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


def log_softmax(scores, axis: int = -1) -> np.ndarray:
    s = as_finite(scores)
    m = np.max(s, axis=axis, keepdims=True)
    z = s - m
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def softmax(scores, axis: int = -1) -> np.ndarray:
    """Max-shifted exponential normalization along ``axis``."""
    s = as_finite(scores)
    z = np.exp(s - np.max(s, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def rank_desc(scores) -> np.ndarray:
    """Label indices sorted by decreasing score, larger index first on ties.

    Works row-wise on 2-D input.
    """
    s = as_finite(scores)
    if s.ndim == 1:
        idx = np.arange(s.shape[0])
        # lexsort uses the last key as primary
        return np.lexsort((-idx, -s))
    if s.ndim == 2:
        n = s.shape[1]
        # sort ascending on the reversed columns with a stable sort, then flip:
        # equal scores keep reversed-column order, i.e. larger index first
        rev = s[:, ::-1]
        order = np.argsort(-rev, axis=1, kind="stable")
        return (n - 1) - order
    raise InvalidInputError("scores must be 1-D or 2-D")


def argmax_last(values, axis: int = -1) -> np.ndarray | int:
    """Argmax with ties resolved toward the largest index."""
    v = np.asarray(values, dtype=np.float64)
    n = v.shape[axis]
    flipped = np.flip(v, axis=axis)
    out = (n - 1) - np.argmax(flipped, axis=axis)
    return int(out) if np.ndim(out) == 0 else out
