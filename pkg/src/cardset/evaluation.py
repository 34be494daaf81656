"""Experiment orchestration: curves of accuracy against average set size,
lambda sweeps, baselines, Bayes-selector gaps and bound sweeps."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import InvalidInputError, check_score_matrix, softmax
from .cost import build_cost
from .data import Dataset, DataError, GaussianSpec, generate_gaussian, load_csv, split, true_posterior
from .losses import all_kinds, parse_kind
from .models import LinearModel, MlpModel, TrainConfig, predict_k_index, train_base_n, train_selector
from .sets import (
    CARDINALITY_COSTS, ThresholdFamily, TopKFamily, conformal_sets, conformal_threshold,
)
from .theory import BoundReport, bayes_selector_batch, run_bound_sweep

CURVE_COLUMNS = ("method", "param", "avg_cardinality", "accuracy", "coverage", "n_test", "seed")
BOUND_COLUMNS = ("trial_id", "kind", "k", "lhs", "rhs", "margin", "inner_tolerance")
DEFAULT_K = (1, 2, 4, 8)
DEFAULT_LAMBDAS = tuple(float(v) for v in np.logspace(0.0, -2.0, 20))
DEFAULT_ALPHAS = (0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5)
DOMINANCE_TOL = 0.005
TAU_GRID_SIZE = 15


class ConfigError(InvalidInputError):
    pass


def _fmt(v) -> str:
    return f"{v:.9g}"


@dataclass(frozen=True)
class CurvePoint:
    method: str  # "cardinality_aware", "topk" or "conformal"
    param: float  # lambda, k or alpha
    avg_cardinality: float
    accuracy: float
    n_test: int
    seed: int = 0
    coverage: float | None = None
    n_labels: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise InvalidInputError(f"accuracy {self.accuracy} outside [0, 1]")
        upper = self.n_labels if self.n_labels is not None else math.inf
        if not 1.0 <= self.avg_cardinality <= upper:
            raise InvalidInputError(f"average cardinality {self.avg_cardinality} outside [1, {upper}]")
        if self.n_test < 1:
            raise InvalidInputError("n_test must be positive")

    def as_row(self) -> list[str]:
        return [self.method, _fmt(self.param), _fmt(self.avg_cardinality), _fmt(self.accuracy),
                "" if self.coverage is None else _fmt(self.coverage), str(self.n_test), str(self.seed)]


def write_curve_csv(points, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for p in points:
            w.writerow(p.as_row())


def read_curve_csv(path) -> list[CurvePoint]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [CurvePoint(r["method"], float(r["param"]), float(r["avg_cardinality"]), float(r["accuracy"]),
                       int(r["n_test"]), int(r["seed"]),
                       None if r["coverage"] == "" else float(r["coverage"])) for r in rows]


def write_bound_csv(reports, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUND_COLUMNS)
        for r in reports:
            row = r.as_row()
            w.writerow([row[c] if c in ("trial_id", "kind", "k") else _fmt(row[c]) for c in BOUND_COLUMNS])


# -- configuration ------------------------------------------------------------

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_DATASET_KEYS = {
    "gaussian": {"source", "n_classes", "dim", "sigma", "radius", "priors", "seed",
                 "m_train", "m_calibration", "m_test"},
    "csv": {"source", "path", "n_classes", "fractions"},
}


def train_config_from_dict(d: dict | None, **defaults) -> TrainConfig:
    d = dict(defaults, **(d or {}))
    unknown = set(d) - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    if "surrogate" in d and isinstance(d["surrogate"], str):
        d["surrogate"] = parse_kind(d["surrogate"])
    if "hidden" in d:
        d["hidden"] = tuple(int(v) for v in d["hidden"])
    try:
        return TrainConfig(**d)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to replay a sweep; JSON keys equal these field names."""

    dataset: dict = field(default_factory=lambda: {"source": "gaussian"})
    K: tuple[int, ...] = DEFAULT_K
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    cost_kind: str = "logarithmic"
    surrogate: str = "logistic"
    family: str = "topk"  # or "threshold"
    train: dict = field(default_factory=dict)  # selector TrainConfig overrides
    base_train: dict = field(default_factory=lambda: {"epochs": 20})
    seeds: tuple[int, ...] = (0,)
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    workers: int = 1

    def __post_init__(self):
        src = self.dataset.get("source")
        if src not in _DATASET_KEYS:
            raise ConfigError(f"dataset.source must be one of {sorted(_DATASET_KEYS)}")
        unknown = set(self.dataset) - _DATASET_KEYS[src]
        if unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
        lams = tuple(float(v) for v in self.lambdas)
        if not lams or any(not (v > 0 and math.isfinite(v)) for v in lams):
            raise ConfigError("lambdas must be positive and finite")
        if len(set(lams)) != len(lams):
            raise ConfigError("duplicate lambda entries")
        if any(a <= b for a, b in zip(lams, lams[1:])):
            raise ConfigError("lambdas must be sorted in descending order")
        ks = tuple(int(k) for k in self.K)
        if not ks or ks[0] < 1 or any(a >= b for a, b in zip(ks, ks[1:])):
            raise ConfigError("K must be strictly increasing positive integers")
        if self.cost_kind not in CARDINALITY_COSTS:
            raise ConfigError(f"cost_kind must be one of {CARDINALITY_COSTS}")
        if self.family not in ("topk", "threshold"):
            raise ConfigError("family must be 'topk' or 'threshold'")
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if any(not 0 < a < 1 for a in self.alphas):
            raise ConfigError("alphas must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            parse_kind(self.surrogate)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "K", ks)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        # fail early on bad training keys
        self.selector_config(0)
        train_config_from_dict(self.base_train)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def selector_config(self, seed: int) -> TrainConfig:
        return train_config_from_dict(self.train, surrogate=self.surrogate, seed=seed)

    def base_config(self, seed: int) -> TrainConfig:
        return train_config_from_dict(self.base_train, seed=seed)


def content_hash(config: ExperimentConfig | dict, extra_files=()) -> str:
    """sha256 over the canonical config JSON and the bytes of any input files."""
    d = config.to_dict() if isinstance(config, ExperimentConfig) else config
    h = hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode())
    for path in extra_files:
        data = Path(path).read_bytes()
        h.update(f"blob {len(data)}\0".encode())
        h.update(data)
    return h.hexdigest()


# -- data preparation ---------------------------------------------------------

@dataclass
class Splits:
    train: Dataset
    calibration: Dataset
    test: Dataset
    spec: GaussianSpec | None = None  # set for synthetic data, enables true posteriors


def gaussian_spec_from(dataset_cfg: dict) -> GaussianSpec:
    keys = {"n_classes", "dim", "sigma", "radius", "priors", "seed"}
    kw = {k: v for k, v in dataset_cfg.items() if k in keys}
    if kw.get("priors") is not None:
        kw["priors"] = tuple(kw["priors"])
    return GaussianSpec(**kw)


def prepare_data(config: ExperimentConfig, seed: int) -> Splits:
    """Synthetic splits are independent draws (sample seeds 3s, 3s+1, 3s+2), so the
    test set does not depend on the training size."""
    d = config.dataset
    if d["source"] == "gaussian":
        spec = gaussian_spec_from(d)
        sizes = (d.get("m_train", 50_000), d.get("m_calibration", 1_000), d.get("m_test", 10_000))
        parts = [generate_gaussian(spec, int(m), sample_seed=3 * seed + i) for i, m in enumerate(sizes)]
        return Splits(*parts, spec=spec)
    full = load_csv(d["path"], d.get("n_classes"))
    tagged = split(full, tuple(d.get("fractions", (0.8, 0.1, 0.1))), seed)
    if len(set(tagged.split)) < 3:
        raise DataError("csv source needs three nonempty fractions (train, calibration, test)")
    return Splits(tagged.subset("train"), tagged.subset("calibration"), tagged.subset("test"))


# -- evaluation ---------------------------------------------------------------

def eval_selector(selected, family: TopKFamily | ThresholdFamily, labels, method: str = "cardinality_aware",
                  param: float = 0.0, seed: int = 0) -> CurvePoint:
    """Accuracy and average size of the sets picked by ``selected`` (indices into K)."""
    sel = np.asarray(selected, dtype=np.int64)
    labels = np.asarray(labels)
    m = labels.shape[0]
    if m == 0:
        raise DataError("empty evaluation split")
    if sel.shape != (m,):
        raise InvalidInputError("one selected index per instance required")
    rows = np.arange(m)
    hit = family.contains(labels)[rows, sel]
    card = family.cardinalities()[rows, sel]
    return CurvePoint(method, float(param), float(card.mean()), float(hit.mean()), m, seed,
                      n_labels=family.n_labels)


def select_indices(model: MlpModel, features) -> np.ndarray:
    return np.asarray(predict_k_index(model.scores(features)), dtype=np.int64)


def topk_curve(base: LinearModel | np.ndarray, dataset: Dataset, K, seed: int = 0) -> list[CurvePoint]:
    """One point per k: the fixed top-k baseline."""
    scores = base.scores(dataset.features) if isinstance(base, LinearModel) else check_score_matrix(base)
    fam = TopKFamily(scores, tuple(K))
    acc = fam.contains(dataset.labels).mean(axis=0)
    return [CurvePoint("topk", float(k), float(k), float(a), len(dataset), seed, n_labels=fam.n_labels)
            for k, a in zip(fam.K, acc)]


def tau_grid(calibration_scores, size: int = TAU_GRID_SIZE) -> tuple[float, ...]:
    """Strictly decreasing thresholds log-spaced over the observed score range."""
    s = np.asarray(calibration_scores, dtype=np.float64)
    lo = max(float(s.min()), 1e-12)
    hi = float(s.max())
    if hi <= lo:
        raise DataError("calibration scores have no spread")
    grid = np.unique(np.logspace(np.log10(lo), np.log10(hi), size))[::-1]
    return tuple(float(v) for v in grid)


def conformal_curve(base: LinearModel, splits: Splits, alphas, seed: int = 0) -> list[CurvePoint]:
    """Split conformal sets on softmax probabilities of the base model."""
    cal_p = softmax(base.scores(splits.calibration.features), axis=1)
    cal_s = cal_p[np.arange(len(splits.calibration)), splits.calibration.labels]
    test_p = softmax(base.scores(splits.test.features), axis=1)
    out = []
    y = splits.test.labels
    for a in alphas:
        inside = conformal_sets(test_p, conformal_threshold(cal_s, a))
        cov = float(inside[np.arange(len(y)), y].mean())
        out.append(CurvePoint("conformal", float(a), float(inside.sum(axis=1).mean()), cov,
                              len(y), seed, coverage=cov, n_labels=test_p.shape[1]))
    return out


@dataclass
class SeedArtifacts:
    """Fitted pieces for one seed, shared by the sweep, the baselines and the gap."""

    splits: Splits
    base: LinearModel
    train_family: TopKFamily | ThresholdFamily
    test_family: TopKFamily | ThresholdFamily


def fit_seed(config: ExperimentConfig, seed: int) -> SeedArtifacts:
    splits = prepare_data(config, seed)
    n = splits.train.n_classes
    base = train_base_n(splits.train.features, splits.train.labels, n, config.base_config(seed))
    if config.family == "topk":
        if config.K[-1] > n:
            raise ConfigError(f"max K = {config.K[-1]} exceeds {n} labels")
        fam_tr = TopKFamily(base.scores(splits.train.features), config.K)
        fam_te = TopKFamily(base.scores(splits.test.features), config.K)
    else:
        cal_p = softmax(base.scores(splits.calibration.features), axis=1)
        taus = tau_grid(cal_p[np.arange(len(splits.calibration)), splits.calibration.labels])
        fam_tr = ThresholdFamily(softmax(base.scores(splits.train.features), axis=1), taus)
        fam_te = ThresholdFamily(softmax(base.scores(splits.test.features), axis=1), taus)
    return SeedArtifacts(splits, base, fam_tr, fam_te)


@dataclass
class LambdaResult:
    lam: float
    point: CurvePoint
    target_loss: float  # test target loss of the trained selector (normalized costs)
    bayes_loss: float | None = None  # same for the Bayes selector, synthetic data only


def _run_lambda(config: ExperimentConfig, art: SeedArtifacts, lam: float, seed: int) -> LambdaResult:
    tr, te = art.splits.train, art.splits.test
    cost_tr = build_cost(art.train_family, tr.labels, lam, config.cost_kind)
    model = train_selector(tr.features, cost_tr, config.selector_config(seed))
    sel = select_indices(model, te.features)
    point = eval_selector(sel, art.test_family, te.labels, param=lam, seed=seed)
    cost_te = build_cost(art.test_family, te.labels, lam, config.cost_kind)
    rows = np.arange(len(te))
    loss = float(cost_te.values[rows, sel].mean())
    bayes = None
    if art.splits.spec is not None:
        r_star = bayes_selector_batch(true_posterior(art.splits.spec, te.features),
                                      art.test_family.members(), lam, config.cost_kind)
        bayes = float(cost_te.values[rows, r_star].mean())
    return LambdaResult(lam, point, loss, bayes)


def lambda_sweep(config: ExperimentConfig, seed: int, art: SeedArtifacts | None = None) -> list[LambdaResult]:
    """Train one selector per lambda; results come back in config order (lambda descending)."""
    art = art if art is not None else fit_seed(config, seed)
    lams = config.lambdas
    if config.workers <= 1:
        return [_run_lambda(config, art, lam, seed) for lam in lams]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(lambda lam: _run_lambda(config, art, lam, seed), lams))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    points: list[CurvePoint]
    gaps: dict[int, list[float]]  # seed -> per-lambda target-loss gap to the Bayes selector
    input_hash: str

    def record(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "input_hash": self.input_hash,
            "points": [dict(zip(CURVE_COLUMNS, p.as_row())) for p in self.points],
            "bayes_gap": {str(s): [_fmt(g) for g in v] for s, v in self.gaps.items()},
        }


def run_experiment(config: ExperimentConfig, baselines=("topk",)) -> ExperimentResult:
    """Sweep plus requested baselines for every seed, in a fixed order."""
    points, gaps = [], {}
    for seed in config.seeds:
        art = fit_seed(config, seed)
        res = lambda_sweep(config, seed, art)
        points += [r.point for r in res]
        if all(r.bayes_loss is not None for r in res):
            gaps[seed] = [r.target_loss - r.bayes_loss for r in res]
        if "topk" in baselines:
            points += topk_curve(art.base, art.splits.test, config.K, seed)
        if "conformal" in baselines:
            points += conformal_curve(art.base, art.splits, config.alphas, seed)
    files = [config.dataset["path"]] if config.dataset["source"] == "csv" else []
    return ExperimentResult(config, points, gaps, content_hash(config, files))


def write_record(result: ExperimentResult, path) -> None:
    Path(path).write_text(json.dumps(result.record(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- curve properties ---------------------------------------------------------

def average_curves(points, method: str) -> list[tuple[float, float, float]]:
    """(param, mean cardinality, mean accuracy) across seeds, in first-seen param order."""
    acc: dict[float, list[tuple[float, float]]] = {}
    for p in points:
        if p.method == method:
            acc.setdefault(p.param, []).append((p.avg_cardinality, p.accuracy))
    return [(k, float(np.mean([c for c, _ in v])), float(np.mean([a for _, a in v]))) for k, v in acc.items()]


def dominance_failures(points, tol: float = DOMINANCE_TOL) -> list[tuple[float, float, float]]:
    """Top-k baseline points (k, acc_k, best competing acc) that the averaged
    cardinality-aware curve fails to match within ``tol``."""
    curve = average_curves(points, "cardinality_aware")
    bad = []
    for k, _, acc_k in average_curves(points, "topk"):
        cands = [a for _, c, a in curve if c <= k + 1e-12]
        best = max(cands) if cands else -math.inf
        if best < acc_k - tol:
            bad.append((k, acc_k, best))
    return bad


def interpolate_accuracy(curve, cardinality: float) -> float | None:
    """Linear interpolation of accuracy at ``cardinality`` along a curve sorted by size;
    None outside the covered range."""
    pts = sorted((c, a) for _, c, a in curve)
    cs = np.array([c for c, _ in pts])
    if cardinality < cs[0] or cardinality > cs[-1]:
        return None
    return float(np.interp(cardinality, cs, [a for _, a in pts]))


def max_accuracy_difference(curve_a, curve_b, n_grid: int = 50) -> float:
    """Largest accuracy difference at matched cardinality over the shared range."""
    ca = [c for _, c, _ in curve_a]
    cb = [c for _, c, _ in curve_b]
    lo, hi = max(min(ca), min(cb)), min(max(ca), max(cb))
    if hi < lo:
        raise InvalidInputError("curves share no cardinality range")
    grid = np.linspace(lo, hi, n_grid)
    return float(max(abs(interpolate_accuracy(curve_a, g) - interpolate_accuracy(curve_b, g)) for g in grid))


# -- bound sweeps -------------------------------------------------------------

@dataclass(frozen=True)
class VerifyConfig:
    n_trials: int = 1000
    seed: int = 0
    family: str = "topk"  # or "cost"
    kinds: tuple[str, ...] | None = None
    drop_k_factor: bool = False  # mutation: remove the multiplier k from the top-k bound
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> VerifyConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if d.get("kinds") is not None:
            d = dict(d, kinds=tuple(d["kinds"]))
        return cls(**d)


def verify_bounds_command(config: VerifyConfig) -> list[BoundReport]:
    if config.n_trials < 1:
        raise ConfigError("empty trial list")
    try:
        kinds = [parse_kind(k) for k in config.kinds] if config.kinds else all_kinds()
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    return run_bound_sweep(config.n_trials, seed=config.seed, family=config.family, kinds=kinds,
                           k_factor=not config.drop_k_factor, workers=config.workers)
