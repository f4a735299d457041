"""Small numpy classifiers, AdamW, the cosine schedule and the training loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

from .data import Dataset
from .hierarchy import ClassTaxonomy
from .losses import LossConfig, batch_loss
from .metrics import NoMalignantSamplesError, cer, confusion_matrix, accuracy

ARCHITECTURES = ("linear", "mlp1")
SCHEDULES = ("constant", "cosine")


class TrainingError(RuntimeError):
    pass


@dataclass
class Classifier:
    """Parameters live in ``params``: W, b for ``linear``; W1, b1, W2, b2 for
    ``mlp1``. Weight matrices are (out, in)."""

    architecture: str
    input_dim: int
    num_classes: int
    hidden_dim: Optional[int] = None
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}"
            )
        if self.architecture == "mlp1" and not self.hidden_dim:
            raise ValueError("mlp1 needs hidden_dim >= 1")
        if self.architecture == "linear" and self.hidden_dim is not None:
            raise ValueError("linear model takes no hidden_dim")
        if not self.params:
            self.params = {
                name: np.zeros(shape) for name, shape in self.param_shapes().items()
            }
        for name, shape in self.param_shapes().items():
            arr = np.asarray(self.params.get(name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"parameter {name} must have shape {shape}, got {arr.shape}")
            self.params[name] = arr

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d, k, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.architecture == "linear":
            return {"W": (k, d), "b": (k,)}
        return {"W1": (h, d), "b1": (h,), "W2": (k, h), "b2": (k,)}

    @property
    def num_parameters(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "architecture": self.architecture,
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "num_classes": self.num_classes,
            "params": {name: self.params[name].tolist() for name in self.param_shapes()},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Classifier":
        return cls(
            architecture=data["architecture"],
            input_dim=int(data["input_dim"]),
            num_classes=int(data["num_classes"]),
            hidden_dim=data.get("hidden_dim"),
            params={k: np.asarray(v, dtype=np.float64) for k, v in data["params"].items()},
        )


def init_classifier(
    architecture: str,
    input_dim: int,
    num_classes: int,
    rng: np.random.Generator,
    hidden_dim: Optional[int] = None,
) -> Classifier:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    model = Classifier(architecture, input_dim, num_classes, hidden_dim)
    for name, shape in model.param_shapes().items():
        if len(shape) == 2:
            bound = 1.0 / math.sqrt(shape[1])
            model.params[name] = rng.uniform(-bound, bound, size=shape)
    return model


def _as_batch(model: Classifier, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != model.input_dim:
        raise ValueError(
            f"expected features of length {model.input_dim}, got shape {np.shape(x)}"
        )
    return arr, single


def forward(model: Classifier, x) -> np.ndarray:
    """Logits for one feature vector (K,) or a batch (B, K)."""
    xb, single = _as_batch(model, x)
    p = model.params
    if model.architecture == "linear":
        logits = xb @ p["W"].T + p["b"]
    else:
        hidden = np.maximum(xb @ p["W1"].T + p["b1"], 0.0)
        logits = hidden @ p["W2"].T + p["b2"]
    return logits[0] if single else logits


def backward(model: Classifier, x, grad_logits) -> dict[str, np.ndarray]:
    """Parameter gradients given dLoss/dlogits; batches are summed over rows."""
    xb, _ = _as_batch(model, x)
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (xb.shape[0], model.num_classes):
        raise ValueError(
            f"grad_logits must be ({xb.shape[0]}, {model.num_classes}), got {g.shape}"
        )
    p = model.params
    if model.architecture == "linear":
        return {"W": g.T @ xb, "b": g.sum(axis=0)}
    pre = xb @ p["W1"].T + p["b1"]
    hidden = np.maximum(pre, 0.0)
    grad_hidden = (g @ p["W2"]) * (pre > 0.0)
    return {
        "W1": grad_hidden.T @ xb,
        "b1": grad_hidden.sum(axis=0),
        "W2": g.T @ hidden,
        "b2": g.sum(axis=0),
    }


def predict(model: Classifier, features_batch) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    logits = forward(model, features_batch)
    return np.argmax(np.atleast_2d(logits), axis=1)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )


def adamw_step(
    state: OptimizerState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    weight_decay: float,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One AdamW update with bias correction and decoupled weight decay.

    Returns new parameter and state objects; the inputs are left untouched.
    """
    if set(grads) != set(params):
        raise ValueError(f"gradient keys {sorted(grads)} != parameter keys {sorted(params)}")
    for name, g in grads.items():
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient for {name} has shape {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name} at step {state.t + 1}")

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = p - lr * (m_hat / (np.sqrt(v_hat) + state.eps) + weight_decay * p)
        new_m[name], new_v[name] = m, v
    new_state = OptimizerState(m=new_m, v=new_v, t=t, beta1=b1, beta2=b2, eps=state.eps)
    return new_params, new_state


def cosine_lr(t: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= t <= total_steps:
        raise ValueError(f"step {t} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total_steps))


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig
    epochs: int
    learning_rate: float = 1e-4
    batch_size: int = 32
    weight_decay: float = 0.01
    schedule: str = "cosine"
    seed: int = 0
    architecture: str = "linear"
    hidden_dim: Optional[int] = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["loss"] = self.loss.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        data = dict(data)
        loss = data.pop("loss")
        if not isinstance(loss, LossConfig):
            loss = LossConfig.from_dict(loss)
        return cls(loss=loss, **data)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_cer: Optional[float]
    learning_rate: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_list(self) -> list[dict[str, Any]]:
        return [asdict(r) for r in self.records]


def _evaluate_split(
    model: Classifier, features: np.ndarray, labels: np.ndarray, taxonomy: ClassTaxonomy
) -> tuple[float, Optional[float]]:
    cm = confusion_matrix(labels, predict(model, features), taxonomy.k)
    try:
        val_cer = cer(cm, taxonomy)
    except NoMalignantSamplesError:
        val_cer = None
    return accuracy(cm), val_cer


def train(dataset: Dataset, config: TrainConfig) -> tuple[Classifier, TrainHistory]:
    """Minibatch AdamW training; every random draw comes from ``config.seed``.

    The learning rate is annealed per optimizer step over the whole run
    (T = epochs * steps_per_epoch). History records the rate at the first
    step of each epoch.
    """
    if dataset.split is None:
        raise ValueError("dataset has no train/val/test split")
    train_idx = np.asarray(dataset.split["train"], dtype=np.int64)
    val_idx = np.asarray(dataset.split["val"], dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("training split is empty")
    if val_idx.size == 0:
        raise ValueError("validation split is empty")

    taxonomy = dataset.taxonomy
    x_train = dataset.features[train_idx]
    y_train = dataset.labels[train_idx]
    counts = np.bincount(y_train, minlength=taxonomy.k)
    loss = config.loss.build(taxonomy, counts)

    rng = np.random.default_rng(config.seed)
    model = init_classifier(
        config.architecture, dataset.features.shape[1], taxonomy.k, rng, config.hidden_dim
    )
    state = OptimizerState.zeros_like(model.params)

    n = train_idx.size
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    history = TrainHistory()
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_lr = None
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            xb, yb = x_train[batch], y_train[batch]
            if config.schedule == "cosine":
                lr = cosine_lr(step, total_steps, config.learning_rate)
            else:
                lr = config.learning_rate
            if epoch_lr is None:
                epoch_lr = lr
            result = batch_loss(loss, forward(model, xb), yb)
            if not math.isfinite(result.value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}, step {step + 1}"
                )
            grads = backward(model, xb, result.grad_logits)
            try:
                model.params, state = adamw_step(
                    state, model.params, grads, lr, config.weight_decay
                )
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch + 1}: {exc}") from None
            loss_sum += result.value * batch.size
            step += 1
        val_acc, val_cer = _evaluate_split(
            model, dataset.features[val_idx], dataset.labels[val_idx], taxonomy
        )
        history.records.append(
            EpochRecord(
                epoch=epoch + 1,
                train_loss=loss_sum / n,
                val_accuracy=val_acc,
                val_cer=val_cer,
                learning_rate=epoch_lr,
            )
        )
    return model, history


def model_document(model: Classifier, config: TrainConfig) -> dict[str, Any]:
    doc = model.to_dict()
    doc["config"] = config.to_dict()
    return doc


def save_model(path, model: Classifier, config: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_document(model, config), fh, indent=2)
        fh.write("\n")


def load_model(path) -> tuple[Classifier, TrainConfig]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return Classifier.from_dict(doc), TrainConfig.from_dict(doc["config"])
