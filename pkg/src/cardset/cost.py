"""Instance-dependent cost tensor ``c(x, k, y)`` for a set-predictor family."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InvalidInputError, as_finite
from .sets import CARDINALITY_COSTS, ThresholdFamily, TopKFamily, cardinality_cost


@dataclass(frozen=True)
class CostTensor:
    values: np.ndarray  # normalized, (m, |K|), in [0, 1]
    lam: float
    cost_kind: str
    normalizer: float

    @property
    def raw(self) -> np.ndarray:
        return self.values * self.normalizer

    @property
    def n_instances(self) -> int:
        return self.values.shape[0]

    @property
    def n_candidates(self) -> int:
        return self.values.shape[1]

    def permuted(self, order) -> CostTensor:
        return CostTensor(self.values[np.asarray(order)], self.lam, self.cost_kind, self.normalizer)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance_id", "k_index", "cost"])
            for i, row in enumerate(self.values):
                for j, v in enumerate(row):
                    w.writerow([i, j, f"{v:.9g}"])


def normalizer_for(max_cardinality: int, lam: float, kind: str) -> float:
    return 1.0 + lam * cardinality_cost(max_cardinality, kind)


def build_cost(family: TopKFamily | ThresholdFamily, labels, lam: float,
               kind: str = "logarithmic") -> CostTensor:
    """Normalized costs ``(1[y not in g_k(x)] + lam * cost(|g_k(x)|)) / normalizer``.

    The normalizer is the supremum over the domain, ``1 + lam * cost(max |g_k|)``,
    so train and test costs share one scale.
    """
    if not lam > 0 or not np.isfinite(lam):
        raise InvalidInputError(f"lambda must be positive, got {lam!r}")
    if kind not in CARDINALITY_COSTS:
        raise InvalidInputError(f"unknown cardinality cost {kind!r}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != family.n_instances:
        raise InvalidInputError(
            f"{labels.shape[0] if labels.ndim == 1 else labels.shape} labels for "
            f"{family.n_instances} instances")
    if labels.size and (labels.min() < 0 or labels.max() >= family.n_labels):
        raise InvalidInputError("label out of range")
    miss = ~family.contains(labels)
    raw = miss + lam * cardinality_cost(family.cardinalities(), kind)
    norm = normalizer_for(family.max_cardinality(), lam, kind)
    values = np.clip(raw / norm, 0.0, 1.0)
    values.setflags(write=False)
    return CostTensor(values, float(lam), kind, float(norm))


def target_loss(cost: CostTensor | np.ndarray, selected) -> float:
    """Mean of ``c(x_i, selected_i, y_i)`` on the normalized scale."""
    values = cost.values if isinstance(cost, CostTensor) else as_finite(cost, "cost", ndim=2)
    sel = np.asarray(selected)
    if sel.shape != (values.shape[0],):
        raise InvalidInputError("one selected index per instance required")
    if sel.size and (sel.min() < 0 or sel.max() >= values.shape[1]):
        raise InvalidInputError("selected index out of range")
    return float(values[np.arange(values.shape[0]), sel].mean())


def load_cost_csv(path) -> np.ndarray:
    """Normalized cost matrix from the flat ``instance_id,k_index,cost`` layout."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["instance_id", "k_index", "cost"]:
            raise InvalidInputError(f"{path}:1: expected header instance_id,k_index,cost")
        cells = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                i, j, v = int(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError):
                raise InvalidInputError(f"{path}:{lineno}: malformed row") from None
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{path}:{lineno}: cost {v} outside [0, 1]")
            cells[i, j] = v
    if not cells:
        raise InvalidInputError(f"{path}: no cost rows")
    m = max(i for i, _ in cells) + 1
    nk = max(j for _, j in cells) + 1
    if len(cells) != m * nk:
        raise InvalidInputError(f"{path}: expected a full {m} x {nk} grid")
    out = np.empty((m, nk))
    for (i, j), v in cells.items():
        out[i, j] = v
    return out
