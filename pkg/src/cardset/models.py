"""Linear base classifier, MLP cardinality selector and a seeded Adam trainer."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import InvalidInputError, argmax_last, as_finite, log_softmax
from .cost import CostTensor
from .losses import CompSumKind, ConstrainedKind, LOGISTIC, cost_sensitive_batch

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8
EARLY_STOP_TOL = 1e-6
EARLY_STOP_PATIENCE = 5


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    weight_decay: float = 1e-5
    epochs: int = 100
    seed: int = 0
    surrogate: CompSumKind | ConstrainedKind = LOGISTIC
    cost_sensitive: bool = True
    hidden: tuple[int, int] = (64, 64)
    early_stop: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")
        if self.weight_decay < 0:
            raise InvalidInputError("weight_decay must be >= 0")


@dataclass
class LinearModel:
    weights: np.ndarray  # (d, n)
    biases: np.ndarray  # (n,)

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weights, self.biases]

    def scores(self, X) -> np.ndarray:
        X = as_finite(X, "features", ndim=2)
        if X.shape[1] != self.weights.shape[0]:
            raise InvalidInputError(f"expected {self.weights.shape[0]} features, got {X.shape[1]}")
        return X @ self.weights + self.biases


@dataclass
class MlpModel:
    """Two ReLU hidden layers; ``layers`` holds (W, b) pairs input to output."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for wb in self.layers for p in wb]

    @property
    def n_inputs(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1][0].shape[1]

    def _forward(self, X):
        acts = [X]
        h = X
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            z = h @ W + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def scores(self, X) -> np.ndarray:
        X = as_finite(X, "features", ndim=2)
        if X.shape[1] != self.n_inputs:
            raise InvalidInputError(f"expected {self.n_inputs} features, got {X.shape[1]}")
        return self._forward(X)[-1]

    def backward(self, X, grad_out, acts=None) -> list[np.ndarray]:
        """Parameter gradients given d(objective)/d(outputs)."""
        if acts is None:
            acts = self._forward(X)
        per_layer: list[list[np.ndarray]] = [[] for _ in self.layers]
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[i]
            h_in = acts[i]
            per_layer[i] = [h_in.T @ g, g.sum(axis=0)]
            if i:
                g = (g @ W.T) * (h_in > 0)
        return [p for pair in per_layer for p in pair]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_linear(n_features: int, n_labels: int, seed: int) -> LinearModel:
    rng = np.random.default_rng(seed)
    return LinearModel(_glorot(rng, n_features, n_labels), np.zeros(n_labels))


def init_mlp(n_features: int, n_outputs: int, hidden=(64, 64), seed: int = 0) -> MlpModel:
    rng = np.random.default_rng(seed)
    sizes = [n_features, *hidden, n_outputs]
    return MlpModel([(_glorot(rng, a, b), np.zeros(b)) for a, b in zip(sizes, sizes[1:])])


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              config: TrainConfig) -> None:
    """In-place Adam update with bias correction and decoupled weight decay."""
    if len(params) != len(grads):
        raise InvalidInputError("params/grads length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient at step {state.t + 1}")
    state.t += 1
    lr, wd = config.learning_rate, config.weight_decay
    c1 = 1.0 - BETA1 ** state.t
    c2 = 1.0 - BETA2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise InvalidInputError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        step = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        if wd:
            p -= lr * wd * p
        p -= lr * step


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)  # full-data objective, epoch 0 first


def _fit(params, batch_grad, full_loss, n: int, config: TrainConfig) -> TrainHistory:
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(params)
    hist = TrainHistory([full_loss()])
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            adam_step(params, batch_grad(idx), state, config)
        for p in params:
            if not np.all(np.isfinite(p)):
                raise TrainingDivergedError(f"non-finite parameters after epoch {epoch + 1}")
        hist.losses.append(full_loss())
        log.debug("epoch %d loss %.6g", epoch + 1, hist.losses[-1])
        if (config.early_stop and len(hist.losses) > EARLY_STOP_PATIENCE
                and hist.losses[-1 - EARLY_STOP_PATIENCE] - hist.losses[-1] < EARLY_STOP_TOL):
            break
    return hist


def _mean_logistic(scores, y):
    logp = log_softmax(scores, axis=1)
    m = scores.shape[0]
    loss = -logp[np.arange(m), y].mean()
    g = np.exp(logp)
    g[np.arange(m), y] -= 1.0
    return loss, g / m


def train_base(features, labels, config: TrainConfig, return_history: bool = False):
    """Multinomial logistic regression trained with minibatch Adam."""
    X = as_finite(features, "features", ndim=2)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise InvalidInputError(f"{y.shape} labels for {X.shape[0]} rows")
    n_labels = int(y.max()) + 1 if y.size else 0
    if len(np.unique(y)) < 2:
        raise InvalidInputError("need at least two classes present")
    return train_base_n(X, y, n_labels, config, return_history)


def train_base_n(X, y, n_labels: int, config: TrainConfig, return_history: bool = False):
    model = init_linear(X.shape[1], n_labels, config.seed)
    W, b = model.weights, model.biases

    def batch_grad(idx):
        xb = X[idx]
        _, g = _mean_logistic(xb @ W + b, y[idx])
        return [xb.T @ g, g.sum(axis=0)]

    def full_loss():
        return float(_mean_logistic(X @ W + b, y)[0])

    hist = _fit([W, b], batch_grad, full_loss, X.shape[0], config)
    return (model, hist) if return_history else model


def selector_objective(model: MlpModel, X, costs, kind) -> tuple[float, list[np.ndarray]]:
    """Mean cost-sensitive surrogate over rows and its parameter gradients."""
    acts = model._forward(as_finite(X, "features", ndim=2))
    vals, g = cost_sensitive_batch(acts[-1], costs, kind)
    m = X.shape[0]
    return float(vals.mean()), model.backward(X, g / m, acts)


def train_selector(features, cost: CostTensor | np.ndarray, config: TrainConfig,
                   return_history: bool = False):
    """Fit the MLP selector by minimizing the configured cost-sensitive surrogate."""
    X = as_finite(features, "features", ndim=2)
    C = cost.values if isinstance(cost, CostTensor) else as_finite(cost, "cost", ndim=2)
    if C.shape[0] != X.shape[0]:
        raise InvalidInputError(f"{C.shape[0]} cost rows for {X.shape[0]} feature rows")
    if C.shape[1] < 2:
        raise InvalidInputError("selection over a single candidate is vacuous")
    if not config.cost_sensitive:
        raise InvalidInputError("the selector is trained with a cost-sensitive surrogate")
    model = init_mlp(X.shape[1], C.shape[1], config.hidden, config.seed)
    params = model.params
    kind = config.surrogate

    def batch_grad(idx):
        return selector_objective(model, X[idx], C[idx], kind)[1]

    def full_loss():
        vals, _ = cost_sensitive_batch(model.scores(X), C, kind)
        return float(vals.mean())

    hist = _fit(params, batch_grad, full_loss, X.shape[0], config)
    return (model, hist) if return_history else model


def predict_k_index(outputs) -> np.ndarray | int:
    """Index into K of the argmax output, ties toward the larger index."""
    return argmax_last(outputs, axis=-1)


def predict_k(model_or_outputs, feature, K) -> int | np.ndarray:
    """Chosen set index value ``K[argmax]``.

    ``model_or_outputs`` may be an ``MlpModel`` (then ``feature`` is a
    vector or matrix) or ``None`` with ``feature`` holding raw outputs.
    """
    K = np.asarray(K)
    if model_or_outputs is None:
        out = np.asarray(feature, dtype=np.float64)
    else:
        f = np.asarray(feature, dtype=np.float64)
        out = model_or_outputs.scores(f[None, :] if f.ndim == 1 else f)
        if f.ndim == 1:
            out = out[0]
    if out.shape[-1] != K.shape[0]:
        raise InvalidInputError(f"{out.shape[-1]} outputs for |K| = {K.shape[0]}")
    idx = predict_k_index(out)
    return int(K[idx]) if np.ndim(idx) == 0 else K[idx]


# -- checkpoints --------------------------------------------------------------
# layout: b"CARDSET\x01", u32 model code (0 linear, 1 mlp), u32 array count,
# then per array: u32 ndim, ndim x u64 dims, row-major little-endian float64 data

MAGIC = b"CARDSET\x01"


def save_model(model: LinearModel | MlpModel, path) -> None:
    code = 0 if isinstance(model, LinearModel) else 1
    arrays = model.params
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", code, len(arrays)))
        for a in arrays:
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path) -> LinearModel | MlpModel:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise InvalidInputError(f"{path}: not a cardset checkpoint")
    code, count = struct.unpack_from("<II", data, 8)
    off = 16
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays.append(np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64))
        off += 8 * size
    if code == 0:
        return LinearModel(*arrays)
    return MlpModel([(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)])


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)
