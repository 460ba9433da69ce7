"""From-scratch supervised classifiers with probability outputs.

Logistic regression (full-batch gradient descent), Gaussian naive Bayes, and
a single-hidden-layer MLP trained by SGD with momentum under a weighted or
focal loss. Training is single-threaded and bit-deterministic per seed;
trained models are immutable containers safe to share.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import leakage_guard
from .schema import Schema, load_schema

EPS = 1e-7


class ModelError(ValueError):
    pass


class DivergenceError(ModelError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite at epoch {epoch}")


# Probability-clamp events in focal/CE losses (p outside (0,1) before clamp).
_clamp_counter = {"count": 0}


def clamp_count() -> int:
    return _clamp_counter["count"]


def reset_clamp_count() -> None:
    _clamp_counter["count"] = 0


def _clamp_probs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    out_of_range = np.sum((p < EPS) | (p > 1.0 - EPS))
    if out_of_range:
        _clamp_counter["count"] += int(out_of_range)
    return np.clip(p, EPS, 1.0 - EPS)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LossConfig:
    kind: str = "weighted"  # "weighted" | "focal"
    gamma: float = 2.0
    alpha: float = 0.25

    def __post_init__(self):
        if self.kind not in ("weighted", "focal"):
            raise ModelError(f"unknown loss kind: {self.kind}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma, "alpha": self.alpha}


def focal_loss(p: float | np.ndarray, y: int | np.ndarray, gamma: float, alpha: float):
    """Focal loss terms: -a(1-p)^g log p for y=1, -(1-a)p^g log(1-p) for y=0."""
    p = _clamp_probs(p)
    y = np.asarray(y, dtype=float)
    pos = -alpha * (1.0 - p) ** gamma * np.log(p)
    neg = -(1.0 - alpha) * p**gamma * np.log(1.0 - p)
    out = y * pos + (1.0 - y) * neg
    return float(out) if out.ndim == 0 else out


def weighted_ce(p, y, class_weights: tuple[float, float]):
    p = _clamp_probs(p)
    y = np.asarray(y, dtype=float)
    w = np.where(y == 1, class_weights[1], class_weights[0])
    out = -w * (y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(out) if out.ndim == 0 else out


def loss_values(p, y, loss: LossConfig, class_weights: tuple[float, float]):
    if loss.kind == "focal":
        return focal_loss(p, y, loss.gamma, loss.alpha)
    return weighted_ce(p, y, class_weights)


def loss_grad_z(p, y, loss: LossConfig, class_weights: tuple[float, float]):
    """dL/dz for a sigmoid output z, per sample."""
    p = _clamp_probs(p)
    y = np.asarray(y, dtype=float)
    if loss.kind == "weighted":
        w = np.where(y == 1, class_weights[1], class_weights[0])
        return w * (p - y)
    g, a = loss.gamma, loss.alpha
    grad_pos = a * (1.0 - p) ** g * (g * p * np.log(p) - (1.0 - p))
    grad_neg = (1.0 - a) * p**g * (p - g * (1.0 - p) * np.log(1.0 - p))
    return y * grad_pos + (1.0 - y) * grad_neg


def inverse_prevalence_weights(y: np.ndarray, power: float = 1.0) -> tuple[float, float]:
    """Per-class weights proportional to (1/prevalence)^power, mean-normalized.

    power=1 is full inverse-prevalence weighting; power<1 tempers it toward
    unweighted training (useful when the operating point must keep majority
    recall high).
    """
    y = np.asarray(y)
    p1 = float(np.mean(y))
    if p1 in (0.0, 1.0):
        raise ModelError("both classes required to derive class weights")
    raw = np.array([1.0 / (1.0 - p1), 1.0 / p1]) ** power
    raw = raw / raw.mean()
    return float(raw[0]), float(raw[1])


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_units: int = 400
    activation: str = "relu"

    def __post_init__(self):
        if self.hidden_units < 1:
            raise ModelError("hidden_units must be >= 1")
        if self.activation != "relu":
            raise ModelError(f"unsupported activation: {self.activation}")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 200
    val_fraction: float = 0.1
    patience: int = 20


@dataclass(frozen=True)
class TrainedModel:
    kind: str  # "logreg" | "gnb" | "mlp"
    feature_names: tuple[str, ...]
    params: dict = field(repr=False)
    training_seed: int = 0
    loss_config: LossConfig | None = None
    class_weights: tuple[float, float] = (1.0, 1.0)
    schema_checksum: str = ""
    metadata: dict = field(default_factory=dict)


def _check_training_inputs(X, y, feature_names, schema: Schema):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ModelError("X must be (n, d) aligned with y")
    if X.shape[0] == 0:
        raise ModelError("empty training set")
    if X.shape[1] != len(feature_names):
        raise ModelError("feature_names length does not match X columns")
    if len(np.unique(y)) < 2:
        raise ModelError("training set contains a single class")
    leakage_guard(list(feature_names), schema.blocklist)
    return X, y


def train_logreg(
    X,
    y,
    feature_names,
    class_weights: tuple[float, float] | None = None,
    l2: float = 0.0,
    seed: int = 0,
    schema: Schema | None = None,
    learning_rate: float = 0.5,
    momentum: float = 0.9,
    max_epochs: int = 5000,
    tol: float = 1e-7,
) -> TrainedModel:
    """Full-batch gradient descent on mean weighted cross-entropy + L2.

    Converges when the gradient norm falls below ``tol`` or the epoch budget
    is exhausted; deterministic for a fixed seed (the seed only stamps the
    model, initialization is zeros).
    """
    schema = schema or load_schema()
    X, y = _check_training_inputs(X, y, feature_names, schema)
    weights = class_weights or (1.0, 1.0)
    loss = LossConfig(kind="weighted")
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    vw = np.zeros(d)
    vb = 0.0
    grad_norm = np.inf
    for epoch in range(max_epochs):
        p = sigmoid(X @ w + b)
        gz = loss_grad_z(p, y, loss, weights) / n
        gw = X.T @ gz + l2 * w
        gb = float(np.sum(gz))
        grad_norm = float(np.sqrt(np.sum(gw**2) + gb**2))
        if grad_norm < tol:
            break
        vw = momentum * vw - learning_rate * gw
        vb = momentum * vb - learning_rate * gb
        w = w + vw
        b = b + vb
        if not np.isfinite(w).all():
            raise DivergenceError(epoch)
    final_loss = float(np.mean(loss_values(sigmoid(X @ w + b), y, loss, weights)))
    return TrainedModel(
        kind="logreg",
        feature_names=tuple(feature_names),
        params={"w": w, "b": np.array([b])},
        training_seed=seed,
        loss_config=loss,
        class_weights=weights,
        schema_checksum=schema.checksum,
        metadata={"final_train_loss": final_loss, "grad_norm": grad_norm, "l2": l2},
    )


def train_gnb(
    X, y, feature_names, var_smoothing: float = 1e-9, schema: Schema | None = None
) -> TrainedModel:
    """Gaussian naive Bayes: per-class means/variances plus priors."""
    schema = schema or load_schema()
    X, y = _check_training_inputs(X, y, feature_names, schema)
    means, variances, priors = [], [], []
    for cls in (0, 1):
        Xc = X[y == cls]
        means.append(Xc.mean(axis=0))
        variances.append(np.maximum(Xc.var(axis=0), var_smoothing))
        priors.append(len(Xc) / len(X))
    return TrainedModel(
        kind="gnb",
        feature_names=tuple(feature_names),
        params={
            "means": np.array(means),
            "variances": np.array(variances),
            "priors": np.array(priors),
        },
        schema_checksum=schema.checksum,
        metadata={"var_smoothing": var_smoothing},
    )


def init_mlp_params(arch: MlpArchitecture, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    scale1 = np.sqrt(2.0 / arch.input_dim)
    scale2 = np.sqrt(2.0 / arch.hidden_units)
    return {
        "W1": rng.normal(0.0, scale1, size=(arch.input_dim, arch.hidden_units)),
        "b1": np.zeros(arch.hidden_units),
        "W2": rng.normal(0.0, scale2, size=(arch.hidden_units, 1)),
        "b2": np.zeros(1),
    }


def mlp_forward(params: dict, X: np.ndarray) -> np.ndarray:
    hidden = np.maximum(0.0, X @ params["W1"] + params["b1"])
    return sigmoid(hidden @ params["W2"] + params["b2"]).ravel()


def mlp_loss_and_grads(
    params: dict,
    X: np.ndarray,
    y: np.ndarray,
    loss: LossConfig,
    class_weights: tuple[float, float],
) -> tuple[float, dict]:
    """Mean loss over the batch and analytic gradients for every parameter."""
    n = X.shape[0]
    pre_hidden = X @ params["W1"] + params["b1"]
    hidden = np.maximum(0.0, pre_hidden)
    p = sigmoid(hidden @ params["W2"] + params["b2"]).ravel()
    value = float(np.mean(loss_values(p, y, loss, class_weights)))
    gz = (loss_grad_z(p, y, loss, class_weights) / n)[:, None]
    grads = {
        "W2": hidden.T @ gz,
        "b2": gz.sum(axis=0),
    }
    dhidden = gz @ params["W2"].T
    dhidden[pre_hidden <= 0] = 0.0
    grads["W1"] = X.T @ dhidden
    grads["b1"] = dhidden.sum(axis=0)
    return value, grads


def train_mlp(
    X,
    y,
    feature_names,
    arch: MlpArchitecture | None = None,
    loss: LossConfig | None = None,
    optimizer: OptimizerConfig | None = None,
    class_weights: tuple[float, float] | None = None,
    seed: int = 0,
    schema: Schema | None = None,
) -> TrainedModel:
    """SGD-with-momentum training with early stopping on a validation carve-out.

    The carve-out comes from the training rows only; best-validation weights
    are restored. Deterministic accumulation order per seed.
    """
    schema = schema or load_schema()
    X, y = _check_training_inputs(X, y, feature_names, schema)
    arch = arch or MlpArchitecture(input_dim=X.shape[1])
    if arch.input_dim != X.shape[1]:
        raise ModelError("architecture input_dim does not match X")
    optimizer = optimizer or OptimizerConfig()
    weights = class_weights or inverse_prevalence_weights(y)
    if loss is None:
        loss = LossConfig(kind="weighted")

    rng = np.random.default_rng(seed)
    n = X.shape[0]
    order = rng.permutation(n)
    n_val = max(1, int(round(n * optimizer.val_fraction)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(np.unique(y[train_idx])) < 2:
        raise ModelError("validation carve-out left a single-class training set")
    Xt, yt = X[train_idx], y[train_idx]
    Xv, yv = X[val_idx], y[val_idx]

    params = init_mlp_params(arch, seed)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    best = {k: v.copy() for k, v in params.items()}
    best_val = np.inf
    best_epoch = -1
    patience_left = optimizer.patience
    train_loss = np.nan
    epochs_run = 0

    for epoch in range(optimizer.max_epochs):
        epochs_run = epoch + 1
        perm = rng.permutation(len(Xt))
        batch_losses = []
        for start in range(0, len(Xt), optimizer.batch_size):
            idx = perm[start : start + optimizer.batch_size]
            value, grads = mlp_loss_and_grads(params, Xt[idx], yt[idx], loss, weights)
            if not np.isfinite(value):
                raise DivergenceError(epoch)
            batch_losses.append(value)
            for key in params:
                velocity[key] = optimizer.momentum * velocity[key] - optimizer.learning_rate * grads[key]
                params[key] = params[key] + velocity[key]
        train_loss = float(np.mean(batch_losses))
        val_loss = float(np.mean(loss_values(mlp_forward(params, Xv), yv, loss, weights)))
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best = {k: v.copy() for k, v in params.items()}
            best_epoch = epoch
            patience_left = optimizer.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break

    return TrainedModel(
        kind="mlp",
        feature_names=tuple(feature_names),
        params=best,
        training_seed=seed,
        loss_config=loss,
        class_weights=weights,
        schema_checksum=schema.checksum,
        metadata={
            "hidden_units": arch.hidden_units,
            "final_train_loss": train_loss,
            "final_val_loss": float(best_val),
            "best_epoch": best_epoch,
            "epochs_run": epochs_run,
        },
    )


def predict_proba(model: TrainedModel, X) -> np.ndarray:
    """Probability of class 1 for each row; dimension mismatch is an error."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.feature_names):
        raise ModelError(
            f"input has {X.shape[1]} features, model expects {len(model.feature_names)}"
        )
    if model.kind == "logreg":
        return sigmoid(X @ model.params["w"] + model.params["b"][0])
    if model.kind == "mlp":
        return mlp_forward(model.params, X)
    if model.kind == "gnb":
        means = model.params["means"]
        variances = model.params["variances"]
        priors = model.params["priors"]
        log_post = np.empty((X.shape[0], 2))
        for cls in (0, 1):
            ll = -0.5 * (
                np.log(2.0 * np.pi * variances[cls])
                + (X - means[cls]) ** 2 / variances[cls]
            ).sum(axis=1)
            log_post[:, cls] = ll + np.log(priors[cls])
        log_post -= log_post.max(axis=1, keepdims=True)
        post = np.exp(log_post)
        return post[:, 1] / post.sum(axis=1)
    raise ModelError(f"unknown model kind: {model.kind}")


def predict_hard(model: TrainedModel, X, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(model, X) >= threshold).astype(int)


def save_model(model: TrainedModel, path: str | Path) -> None:
    """Self-describing JSON container: kind, shapes, parameters, provenance."""
    doc = {
        "kind": model.kind,
        "feature_names": list(model.feature_names),
        "training_seed": model.training_seed,
        "loss_config": model.loss_config.to_dict() if model.loss_config else None,
        "class_weights": list(model.class_weights),
        "schema_checksum": model.schema_checksum,
        "metadata": model.metadata,
        "params": {
            k: {"shape": list(v.shape), "data": v.ravel().tolist()}
            for k, v in model.params.items()
        },
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path: str | Path, schema: Schema | None = None) -> TrainedModel:
    """Load a model container; a schema checksum mismatch is a hard error."""
    schema = schema or load_schema()
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc["schema_checksum"] and doc["schema_checksum"] != schema.checksum:
        raise ModelError(
            "model was trained under a different schema/dictionary version: "
            f"{doc['schema_checksum'][:12]} != {schema.checksum[:12]}"
        )
    params = {
        k: np.array(v["data"], dtype=float).reshape(v["shape"])
        for k, v in doc["params"].items()
    }
    loss = LossConfig(**doc["loss_config"]) if doc["loss_config"] else None
    return TrainedModel(
        kind=doc["kind"],
        feature_names=tuple(doc["feature_names"]),
        params=params,
        training_seed=doc["training_seed"],
        loss_config=loss,
        class_weights=tuple(doc["class_weights"]),
        schema_checksum=doc["schema_checksum"],
        metadata=doc["metadata"],
    )
