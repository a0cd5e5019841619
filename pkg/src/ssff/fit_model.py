"""Founder-idea fit scoring.

Closed-form preliminary fit score, embedding/cosine preprocessing, simple
OLS/Pearson diagnostics, and a small from-scratch MLP regressor (two ReLU
hidden layers with inverted dropout) that predicts the normalized fit score
from embedding features.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ssff.domain import Outcome, SegmentLevel
from ssff.llm_gateway import EmbeddingRequest, Gateway


class ZeroVector(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class EmptyData(ValueError):
    pass


class NonFiniteLoss(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Closed-form fit score
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitScore:
    """Preliminary fit score and its [-1, 1] normalization (pfs / 5)."""

    pfs: int
    normalized: float

    def __post_init__(self) -> None:
        if not -5 <= self.pfs <= 5:
            raise ValueError(f"pfs {self.pfs} outside [-5, 5]")
        if self.normalized != self.pfs / 5:
            raise ValueError("normalized must equal pfs / 5 exactly")


def preliminary_fit_score(level: SegmentLevel, outcome: Outcome) -> FitScore:
    """(6 - F) * O - F * (1 - O), normalized by 5.

    A level-1 founder succeeding scores +1.0 (best possible fit); a level-5
    founder failing scores -1.0 (worst).
    """
    f = level.level
    o = int(outcome)
    pfs = (6 - f) * o - f * (1 - o)
    return FitScore(pfs=pfs, normalized=pfs / 5)


# ---------------------------------------------------------------------------
# Embeddings, cosine, OLS diagnostics
# ---------------------------------------------------------------------------


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    if va.shape != vb.shape or va.ndim != 1:
        raise LengthMismatch(f"vector lengths differ: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for zero-norm vector")
    value = float(np.dot(va, vb) / (na * nb))
    return max(-1.0, min(1.0, value))


@dataclass(frozen=True)
class EmbeddingPair:
    """A startup/founder embedding pair with their cosine similarity."""

    startup_vec: tuple[float, ...]
    founder_vec: tuple[float, ...]
    cosine: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "startup_vec", tuple(float(x) for x in self.startup_vec))
        object.__setattr__(self, "founder_vec", tuple(float(x) for x in self.founder_vec))
        if len(self.startup_vec) != len(self.founder_vec):
            raise LengthMismatch("startup and founder vectors must have equal length")
        recomputed = cosine_similarity(self.startup_vec, self.founder_vec)
        if abs(recomputed - self.cosine) > 1e-9:
            raise ValueError(f"stored cosine {self.cosine} inconsistent with vectors ({recomputed})")

    @classmethod
    def from_vectors(cls, startup_vec: Sequence[float], founder_vec: Sequence[float]) -> "EmbeddingPair":
        return cls(
            startup_vec=tuple(startup_vec),
            founder_vec=tuple(founder_vec),
            cosine=cosine_similarity(startup_vec, founder_vec),
        )

    @property
    def dimension(self) -> int:
        return len(self.startup_vec)


@dataclass(frozen=True)
class OLSDiagnostics:
    slope: float
    intercept: float
    pearson_r: float
    r_squared: float

    def __post_init__(self) -> None:
        if abs(self.r_squared - self.pearson_r**2) > 1e-12:
            raise ValueError("r_squared must equal pearson_r squared")


def ols_and_pearson(xs: Sequence[float], ys: Sequence[float]) -> OLSDiagnostics:
    """Simple least-squares line plus the Pearson correlation of xs and ys."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise DegenerateInput("need two equal-length samples of at least 3 points")
    x_centered = x - x.mean()
    y_centered = y - y.mean()
    ss_x = float(np.dot(x_centered, x_centered))
    ss_y = float(np.dot(y_centered, y_centered))
    if ss_x == 0.0 or ss_y == 0.0:
        raise DegenerateInput("inputs must not be constant")
    cov = float(np.dot(x_centered, y_centered))
    slope = cov / ss_x
    intercept = float(y.mean() - slope * x.mean())
    r = cov / math.sqrt(ss_x * ss_y)
    r = max(-1.0, min(1.0, r))
    return OLSDiagnostics(slope=slope, intercept=intercept, pearson_r=r, r_squared=r * r)


def build_fit_features(pair: EmbeddingPair) -> np.ndarray:
    """Feature layout [startup_vec | founder_vec | cosine], length 2d + 1."""
    return np.concatenate(
        [np.asarray(pair.startup_vec), np.asarray(pair.founder_vec), [pair.cosine]]
    )


# ---------------------------------------------------------------------------
# MLP regressor
# ---------------------------------------------------------------------------

HIDDEN_SIZES = (128, 64)
DROPOUT_RATES = (0.2, 0.3)


@dataclass
class MLPModel:
    """Feed-forward regressor: affine -> ReLU (+dropout) x2 -> affine scalar.

    Dropout uses the inverted convention (activations scaled by 1/keep at
    training time), so inference applies the weights as-is.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rates: tuple[float, ...] = DROPOUT_RATES
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ShapeMismatch("weights and biases must pair up")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatch(f"layer {i}: input size does not match previous layer")
        if len(self.dropout_rates) != len(self.weights) - 1:
            raise ShapeMismatch("one dropout rate per hidden layer required")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[0]

    @classmethod
    def initialize(
        cls,
        input_size: int,
        hidden: tuple[int, ...] = HIDDEN_SIZES,
        dropout: tuple[float, ...] = DROPOUT_RATES,
        seed: int = 0,
    ) -> "MLPModel":
        """He-uniform initialization scaled by fan-in, fully seeded."""
        rng = np.random.default_rng(seed)
        sizes = (input_size,) + tuple(hidden) + (1,)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights=weights, biases=biases, dropout_rates=tuple(dropout), seed=seed)

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def copy(self) -> "MLPModel":
        return MLPModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            dropout_rates=self.dropout_rates,
            seed=self.seed,
        )


def _forward_batch(
    model: MLPModel,
    X: np.ndarray,
    training: bool,
    rng: np.random.Generator | None,
):
    """Forward pass returning output, per-layer (input, preactivation), masks."""
    n_layers = len(model.weights)
    caches = []
    masks: list[np.ndarray | None] = []
    activation = X
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = activation @ w + b
        caches.append((activation, z))
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)
            rate = model.dropout_rates[i]
            if training and rate > 0.0:
                keep = 1.0 - rate
                mask = (rng.random(h.shape) < keep) / keep
                h = h * mask
                masks.append(mask)
            else:
                masks.append(None)
            activation = h
        else:
            activation = z
    return activation, caches, masks


def _backward_batch(model: MLPModel, caches, masks, delta_out: np.ndarray):
    """Gradients of a batch loss given dLoss/dOutput; mirrors _forward_batch."""
    n_layers = len(model.weights)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    delta = delta_out
    for i in reversed(range(n_layers)):
        layer_input, _ = caches[i]
        grads_w[i] = layer_input.T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            _, z_prev = caches[i - 1]
            delta = delta * (z_prev > 0.0)
            if masks[i - 1] is not None:
                delta = delta * masks[i - 1]
    return grads_w, grads_b


def mlp_forward(
    model: MLPModel,
    x: Sequence[float],
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """Scalar prediction for one input; dropout is applied only when training."""
    vec = np.asarray(x, dtype=float)
    if vec.ndim != 1 or len(vec) != model.input_size:
        raise ShapeMismatch(f"input length {vec.shape} does not match model input {model.input_size}")
    if training and rng is None:
        rng = np.random.default_rng(model.seed)
    output, _, _ = _forward_batch(model, vec[None, :], training=training, rng=rng)
    return float(output[0, 0])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    validation_fraction: float = 0.2


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    train_mse: float
    val_mse: float


def _mse(model: MLPModel, X: np.ndarray, y: np.ndarray) -> float:
    output, _, _ = _forward_batch(model, X, training=False, rng=None)
    return float(np.mean((output[:, 0] - y) ** 2))


def mlp_train(
    data: Sequence[tuple[Sequence[float], float]],
    config: TrainConfig = TrainConfig(),
) -> tuple[MLPModel, list[EpochLoss]]:
    """Mini-batch SGD on squared error; deterministic under a fixed seed.

    Returns the trained model plus a per-epoch trace of training and
    validation MSE, both measured in inference mode at epoch end.
    """
    if not data:
        raise EmptyData("training data is empty")
    X = np.asarray([row[0] for row in data], dtype=float)
    y = np.asarray([row[1] for row in data], dtype=float)
    if np.any(y < -1.0) or np.any(y > 1.0):
        raise ValueError("targets must lie in [-1, 1]")

    rng = np.random.default_rng(config.seed)
    permutation = rng.permutation(len(X))
    n_val = int(len(X) * config.validation_fraction)
    val_idx, train_idx = permutation[:n_val], permutation[n_val:]
    if len(train_idx) == 0:
        raise EmptyData("validation fraction leaves no training rows")
    X_train, y_train = X[train_idx], y[train_idx]
    X_val, y_val = X[val_idx], y[val_idx]

    model = MLPModel.initialize(input_size=X.shape[1], seed=config.seed)
    trace: list[EpochLoss] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(X_train))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            xb, yb = X_train[batch], y_train[batch]
            output, caches, masks = _forward_batch(model, xb, training=True, rng=rng)
            delta_out = 2.0 * (output - yb[:, None]) / len(batch)
            grads_w, grads_b = _backward_batch(model, caches, masks, delta_out)
            for i in range(len(model.weights)):
                model.weights[i] -= config.learning_rate * grads_w[i]
                model.biases[i] -= config.learning_rate * grads_b[i]
        train_mse = _mse(model, X_train, y_train)
        val_mse = _mse(model, X_val, y_val) if len(X_val) else train_mse
        if not (math.isfinite(train_mse) and math.isfinite(val_mse)):
            raise NonFiniteLoss(f"loss diverged at epoch {epoch}")
        trace.append(EpochLoss(epoch=epoch, train_mse=train_mse, val_mse=val_mse))
    return model, trace


def _loss_and_gradients(model: MLPModel, x: np.ndarray, target: float):
    output, caches, masks = _forward_batch(model, x[None, :], training=False, rng=None)
    pred = output[0, 0]
    loss = (pred - target) ** 2
    delta_out = np.array([[2.0 * (pred - target)]])
    grads_w, grads_b = _backward_batch(model, caches, masks, delta_out)
    return loss, grads_w, grads_b


def gradient_check(
    model: MLPModel,
    x: Sequence[float],
    target: float,
    h: float = 1e-5,
    corruption: float = 0.0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``corruption`` scales the analytic gradients by (1 + corruption) and is
    the negative control: a correct implementation with corruption > 0 must
    report a correspondingly large error.
    """
    vec = np.asarray(x, dtype=float)
    _, grads_w, grads_b = _loss_and_gradients(model, vec, target)
    analytic: list[np.ndarray] = []
    for gw, gb in zip(grads_w, grads_b):
        analytic.append(gw * (1.0 + corruption))
        analytic.append(gb * (1.0 + corruption))

    work = model.copy()
    max_rel = 0.0
    for p_idx, param in enumerate(work.parameters()):
        flat = param.reshape(-1)
        grad_flat = analytic[p_idx].reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + h
            loss_plus, _, _ = _loss_and_gradients(work, vec, target)
            flat[j] = original - h
            loss_minus, _, _ = _loss_and_gradients(work, vec, target)
            flat[j] = original
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            denom = max(abs(grad_flat[j]), abs(numeric), 1e-8)
            max_rel = max(max_rel, abs(grad_flat[j] - numeric) / denom)
    return max_rel


def predict_fit(
    model: MLPModel,
    startup_text: str,
    founder_text: str,
    gateway: Gateway,
) -> float:
    """Embed both texts, run inference, clamp the prediction into [-1, 1]."""
    if model.input_size % 2 != 1:
        raise ShapeMismatch("fit model input size must be 2d + 1")
    dim = (model.input_size - 1) // 2
    startup_vec = gateway.embed(EmbeddingRequest(text=startup_text, dimension=dim))
    founder_vec = gateway.embed(EmbeddingRequest(text=founder_text, dimension=dim))
    features = build_fit_features(EmbeddingPair.from_vectors(startup_vec, founder_vec))
    prediction = mlp_forward(model, features, training=False)
    return max(-1.0, min(1.0, prediction))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_model(model: MLPModel, path: str | Path) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "dropout_rates": list(model.dropout_rates),
        "seed": model.seed,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    Path(path).write_text(json.dumps(payload))


def load_model(path: str | Path) -> MLPModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {payload.get('format_version')}")
    return MLPModel(
        weights=[np.asarray(w, dtype=float) for w in payload["weights"]],
        biases=[np.asarray(b, dtype=float) for b in payload["biases"]],
        dropout_rates=tuple(payload["dropout_rates"]),
        seed=int(payload["seed"]),
    )


def write_loss_csv(trace: Sequence[EpochLoss], path: str | Path) -> None:
    lines = ["epoch,train_mse,val_mse"]
    for entry in trace:
        lines.append(f"{entry.epoch},{entry.train_mse!r},{entry.val_mse!r}")
    Path(path).write_text("\n".join(lines) + "\n")
