"""Synthetic Gaussian-mixture data and CSV ingestion of feature matrices.

CSV schema: header ``f0,...,f{d-1},label``, one row per instance, UTF-8,
no quoting.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import InvalidInputError, PROB_SUM_TOL, as_finite

SPLITS = ("train", "calibration", "test")


class DataError(InvalidInputError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: np.ndarray | None = None  # per-row tag from SPLITS

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DataError(f"features {X.shape} and labels {y.shape} do not align")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite feature values")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, tag: str) -> Dataset:
        if self.split is None:
            raise DataError("dataset has not been split")
        mask = self.split == tag
        return Dataset(self.features[mask], self.labels[mask], self.n_classes, self.split[mask])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{j}" for j in range(self.dim)] + ["label"])
            for x, y in zip(self.features, self.labels):
                w.writerow([repr(float(v)) for v in x] + [int(y)])


def load_csv(path, n_classes: int | None = None) -> Dataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[-1] != "label" or header[:-1] != [f"f{j}" for j in range(len(header) - 1)]:
            raise DataError(f"{path}:1: header must be f0,...,f{{d-1}},label")
        d = len(header) - 1
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise DataError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not all(np.isfinite(feats[-1])):
                raise DataError(f"{path}:{lineno}: non-finite feature")
            if labels[-1] < 0 or (n_classes is not None and labels[-1] >= n_classes):
                raise DataError(f"{path}:{lineno}: label {labels[-1]} out of range")
    y = np.asarray(labels, dtype=np.int64)
    k = n_classes if n_classes is not None else (int(y.max()) + 1 if y.size else 0)
    return Dataset(np.asarray(feats, dtype=np.float64).reshape(len(labels), d), y, k)


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Tag rows train/calibration/test by a seeded shuffle; sizes round down
    except the last split, which takes the remainder."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape[0] not in (2, 3) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise DataError("fractions must be 2 or 3 nonnegative values summing to 1")
    m = len(dataset)
    sizes = [int(np.floor(f * m + 1e-9)) for f in fr[:-1]]
    sizes.append(m - sum(sizes))
    tags = ("train", "test") if fr.shape[0] == 2 else SPLITS
    order = np.random.default_rng(seed).permutation(m)
    split_tags = np.empty(m, dtype=object)
    start = 0
    for tag, size in zip(tags, sizes):
        split_tags[order[start:start + size]] = tag
        start += size
    return Dataset(dataset.features, dataset.labels, dataset.n_classes, split_tags.astype(str))


@dataclass(frozen=True)
class GaussianSpec:
    """Isotropic Gaussian classes; means drawn uniformly on a sphere of ``radius``
    from ``seed`` unless given explicitly."""

    n_classes: int = 10
    dim: int = 100
    sigma: float = 1.0
    radius: float = 2.0
    priors: tuple[float, ...] | None = None
    means: tuple[tuple[float, ...], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2 or self.dim < 1:
            raise DataError("need n_classes >= 2 and dim >= 1")
        if not self.sigma > 0:
            raise DataError("sigma must be positive")
        if self.priors is not None:
            p = np.asarray(self.priors, dtype=np.float64)
            if p.shape != (self.n_classes,) or np.any(p < 0) or abs(p.sum() - 1) > PROB_SUM_TOL:
                raise DataError("priors must be a probability vector over classes")
        if self.means is not None and np.asarray(self.means).shape != (self.n_classes, self.dim):
            raise DataError("means must be (n_classes, dim)")

    def prior_vector(self) -> np.ndarray:
        if self.priors is None:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        return np.asarray(self.priors, dtype=np.float64)

    def mean_matrix(self) -> np.ndarray:
        if self.means is not None:
            return np.asarray(self.means, dtype=np.float64)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0]))
        u = rng.normal(size=(self.n_classes, self.dim))
        return self.radius * u / np.linalg.norm(u, axis=1, keepdims=True)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> GaussianSpec:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        for key in ("priors",):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        if d.get("means") is not None:
            d["means"] = tuple(tuple(r) for r in d["means"])
        return cls(**d)


def generate_gaussian(spec: GaussianSpec, m: int, sample_seed: int = 0) -> Dataset:
    """Draw ``m`` labelled points; ``sample_seed`` separates independent draws
    from the same mixture."""
    if m < 1:
        raise DataError("m must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1, sample_seed]))
    y = rng.choice(spec.n_classes, size=m, p=spec.prior_vector())
    X = spec.mean_matrix()[y] + spec.sigma * rng.normal(size=(m, spec.dim))
    return Dataset(X, y, spec.n_classes)


def true_posterior(spec: GaussianSpec, features) -> np.ndarray:
    """Class posterior under the mixture, computed in the log domain."""
    X = as_finite(features, "features")
    single = X.ndim == 1
    X = np.atleast_2d(X)
    mu = spec.mean_matrix()
    with np.errstate(divide="ignore"):
        log_prior = np.log(spec.prior_vector())
    # -||x - mu||^2 / 2 sigma^2 up to terms constant in the class
    logits = (X @ mu.T - 0.5 * np.sum(mu * mu, axis=1)) / spec.sigma ** 2 + log_prior
    # zero priors give -inf logits, which exponentiate to exactly 0
    z = np.exp(logits - np.max(logits, axis=1, keepdims=True))
    post = z / z.sum(axis=1, keepdims=True)
    return post[0] if single else post
