"""Training objectives with analytic gradients w.r.t. the logits.

All five objectives share one shape of computation: a per-sample value and a
per-sample gradient row. The single-sample functions (``ce_loss`` etc.) take a
length-K logits vector; the ``*_rows`` functions take a (B, K) array and
return per-sample values (B,) and gradients (B, K). Logs are natural.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .hierarchy import ClassTaxonomy, SeverityMatrix, build_severity_matrix

KINDS = ("ce", "wce", "focal", "label_smoothing", "rcl")

_KIND_ALIASES = {
    "ce": "ce",
    "wce": "wce",
    "focal": "focal",
    "fl": "focal",
    "labelsmoothing": "label_smoothing",
    "label_smoothing": "label_smoothing",
    "ls": "label_smoothing",
    "rcl": "rcl",
}

DEFAULT_GAMMA = 2.0
DEFAULT_ALPHA_F = 1.0
DEFAULT_EPSILON = 0.1
DEFAULT_RCL_ALPHA = 5.0
DEFAULT_RCL_BETA = 20.0


@dataclass(frozen=True)
class LossResult:
    value: float
    grad_logits: np.ndarray


def _normalize_kind(kind: str) -> str:
    key = str(kind).strip().lower().replace("-", "_")
    if key not in _KIND_ALIASES:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {KINDS}")
    return _KIND_ALIASES[key]


def _as_rows(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] < 1:
        raise ValueError(f"logits must be (B, K), got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite values")
    return z


def _check_labels(labels, batch: int, k: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim == 0:
        y = y[None]
    if y.shape != (batch,):
        raise ValueError(f"expected {batch} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError("labels must be integer class indices")
        y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= k):
        bad = int(y[(y < 0) | (y >= k)][0])
        raise IndexError(f"label {bad} out of range [0, {k})")
    return y


def _log_softmax_parts(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (shifted logits z - max, log of the shifted partition sum)."""
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return shifted, log_norm


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax; accepts a vector or a (B, K) array."""
    arr = np.asarray(logits, dtype=np.float64)
    z = _as_rows(arr)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if arr.ndim == 1 else p


def argmax_lowest(logits) -> np.ndarray:
    # np.argmax already returns the first maximal index.
    z = np.asarray(logits, dtype=np.float64)
    return np.argmax(z, axis=-1)


def _onehot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def ce_rows(logits, labels) -> tuple[np.ndarray, np.ndarray]:
    z = _as_rows(logits)
    y = _check_labels(labels, z.shape[0], z.shape[1])
    shifted, log_norm = _log_softmax_parts(z)
    values = log_norm - shifted[np.arange(z.shape[0]), y]
    grad = np.exp(shifted - log_norm[:, None]) - _onehot(y, z.shape[1])
    return values, grad


def wce_rows(logits, labels, weights) -> tuple[np.ndarray, np.ndarray]:
    z = _as_rows(logits)
    w = _check_weights(weights, z.shape[1])
    values, grad = ce_rows(z, labels)
    y = _check_labels(labels, z.shape[0], z.shape[1])
    wy = w[y]
    return wy * values, wy[:, None] * grad


def focal_rows(
    logits, labels, gamma: float = DEFAULT_GAMMA, alpha_f: float = DEFAULT_ALPHA_F
) -> tuple[np.ndarray, np.ndarray]:
    gamma, alpha_f = _check_focal(gamma, alpha_f)
    z = _as_rows(logits)
    y = _check_labels(labels, z.shape[0], z.shape[1])
    ce, ce_grad = ce_rows(z, y)
    # ce = -log p_t; 1 - p_t via expm1 keeps precision when p_t is near 1.
    one_minus_pt = -np.expm1(-ce)
    modulator = one_minus_pt**gamma
    values = alpha_f * modulator * ce
    # d/dz_j = alpha_f * [(1-p)^g + g (1-p)^(g-1) p ce] * (p_j - delta_jy)
    if gamma == 0.0:
        scale = alpha_f * modulator
    else:
        pt = np.exp(-ce)
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = gamma * one_minus_pt ** (gamma - 1.0) * pt * ce
        # p_t == 1 exactly: ce == 0, the product's limit is 0.
        extra = np.where(ce == 0.0, 0.0, extra)
        scale = alpha_f * (modulator + extra)
    return values, scale[:, None] * ce_grad


def label_smoothing_rows(
    logits, labels, epsilon: float = DEFAULT_EPSILON
) -> tuple[np.ndarray, np.ndarray]:
    epsilon = _check_epsilon(epsilon)
    z = _as_rows(logits)
    k = z.shape[1]
    y = _check_labels(labels, z.shape[0], k)
    q = smoothed_targets(y, k, epsilon)
    shifted, log_norm = _log_softmax_parts(z)
    # sum(q) == 1, so -sum q log p = log_norm - sum q * shifted.
    values = log_norm - (q * shifted).sum(axis=1)
    grad = np.exp(shifted - log_norm[:, None]) - q
    return values, grad


def smoothed_targets(labels, k: int, epsilon: float) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    q = np.full((y.shape[0], k), epsilon / k)
    q[np.arange(y.shape[0]), y] = 1.0 - epsilon + epsilon / k
    return q


def rcl_multipliers(logits, labels, severity: SeverityMatrix) -> np.ndarray:
    z = _as_rows(logits)
    if z.shape[1] != severity.k:
        raise ValueError(
            f"logits have K={z.shape[1]} but severity matrix is {severity.k}x{severity.k}"
        )
    y = _check_labels(labels, z.shape[0], z.shape[1])
    return severity.entries[y, argmax_lowest(z)]


def rcl_rows(logits, labels, severity: SeverityMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy scaled by M[y, argmax(logits)].

    The multiplier is held constant for the gradient: argmax is piecewise
    constant, so no gradient flows through the prediction itself.
    """
    m = rcl_multipliers(logits, labels, severity)
    values, grad = ce_rows(logits, labels)
    return m * values, m[:, None] * grad


def _single(rows_fn, logits, y, *args) -> LossResult:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"expected a logits vector, got shape {z.shape}")
    values, grad = rows_fn(z, [y], *args)
    return LossResult(value=float(values[0]), grad_logits=grad[0])


def ce_loss(logits, y: int) -> LossResult:
    return _single(ce_rows, logits, y)


def wce_loss(logits, y: int, weights) -> LossResult:
    return _single(wce_rows, logits, y, weights)


def focal_loss(
    logits, y: int, gamma: float = DEFAULT_GAMMA, alpha_f: float = DEFAULT_ALPHA_F
) -> LossResult:
    return _single(focal_rows, logits, y, gamma, alpha_f)


def label_smoothing_loss(logits, y: int, epsilon: float = DEFAULT_EPSILON) -> LossResult:
    return _single(label_smoothing_rows, logits, y, epsilon)


def rcl_loss(logits, y: int, severity: SeverityMatrix) -> LossResult:
    return _single(rcl_rows, logits, y, severity)


def class_weights_from_counts(counts) -> np.ndarray:
    """Inverse-frequency class weights, rescaled so their mean is 1."""
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("counts must be a non-empty vector")
    if np.any(c < 1):
        raise ValueError(f"every class needs at least one sample, got counts {c.tolist()}")
    inv = 1.0 / c
    return inv * (c.size / inv.sum())


def _check_weights(weights, k: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ValueError(f"expected {k} class weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("class weights must be positive and finite")
    return w


def _check_focal(gamma, alpha_f) -> tuple[float, float]:
    gamma, alpha_f = float(gamma), float(alpha_f)
    if not np.isfinite(gamma) or gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if not np.isfinite(alpha_f) or alpha_f <= 0:
        raise ValueError(f"alpha_f must be > 0, got {alpha_f}")
    return gamma, alpha_f


def _check_epsilon(epsilon) -> float:
    epsilon = float(epsilon)
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    return epsilon


@dataclass(frozen=True)
class LossSpec:
    """A concrete objective: kind plus exactly the hyperparameters it uses.

    Omitted hyperparameters take their defaults for the kind; supplying one
    that the kind does not use is an error.
    """

    kind: str
    weights: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    alpha_f: Optional[float] = None
    epsilon: Optional[float] = None
    severity: Optional[SeverityMatrix] = None

    def __post_init__(self):
        kind = _normalize_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        allowed = {
            "ce": set(),
            "wce": {"weights"},
            "focal": {"gamma", "alpha_f"},
            "label_smoothing": {"epsilon"},
            "rcl": {"severity"},
        }[kind]
        for name in ("weights", "gamma", "alpha_f", "epsilon", "severity"):
            if name not in allowed and getattr(self, name) is not None:
                raise ValueError(f"{name!r} is not a parameter of the {kind} loss")
        if kind == "wce":
            if self.weights is None:
                raise ValueError("wce loss requires class weights")
            w = np.array(self.weights, dtype=np.float64)
            if w.ndim != 1:
                raise ValueError(f"class weights must be a vector, got shape {w.shape}")
            _check_weights(w, w.shape[0])
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        elif kind == "focal":
            g = DEFAULT_GAMMA if self.gamma is None else self.gamma
            a = DEFAULT_ALPHA_F if self.alpha_f is None else self.alpha_f
            g, a = _check_focal(g, a)
            object.__setattr__(self, "gamma", g)
            object.__setattr__(self, "alpha_f", a)
        elif kind == "label_smoothing":
            e = DEFAULT_EPSILON if self.epsilon is None else self.epsilon
            object.__setattr__(self, "epsilon", _check_epsilon(e))
        elif kind == "rcl" and self.severity is None:
            raise ValueError("rcl loss requires a severity matrix")

    def rows(self, logits, labels) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "ce":
            return ce_rows(logits, labels)
        if self.kind == "wce":
            return wce_rows(logits, labels, self.weights)
        if self.kind == "focal":
            return focal_rows(logits, labels, self.gamma, self.alpha_f)
        if self.kind == "label_smoothing":
            return label_smoothing_rows(logits, labels, self.epsilon)
        return rcl_rows(logits, labels, self.severity)

    def __call__(self, logits, y: int) -> LossResult:
        return _single(self.rows, logits, y)


def batch_loss(loss: LossSpec, logits_batch, labels_batch) -> LossResult:
    """Mean loss over the batch; the gradient rows carry the 1/B factor."""
    z = np.asarray(logits_batch, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"logits batch must be (B, K), got shape {z.shape}")
    if z.shape[0] == 0:
        raise ValueError("empty batch")
    if len(labels_batch) != z.shape[0]:
        raise ValueError(
            f"{z.shape[0]} logit rows but {len(labels_batch)} labels"
        )
    values, grad = loss.rows(z, labels_batch)
    n = z.shape[0]
    return LossResult(value=float(values.sum() / n), grad_logits=grad / n)


WEIGHTS_MODES = ("uniform", "inverse_frequency")


@dataclass(frozen=True)
class LossConfig:
    """Serializable loss description; ``build`` binds it to a taxonomy and the
    training-split class counts to get a :class:`LossSpec`."""

    kind: str
    alpha: Optional[float] = None
    beta: Optional[float] = None
    gamma: Optional[float] = None
    alpha_f: Optional[float] = None
    epsilon: Optional[float] = None
    weights_mode: Optional[str] = None

    def __post_init__(self):
        kind = _normalize_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        allowed = {
            "ce": set(),
            "wce": {"weights_mode"},
            "focal": {"gamma", "alpha_f"},
            "label_smoothing": {"epsilon"},
            "rcl": {"alpha", "beta"},
        }[kind]
        for name in ("alpha", "beta", "gamma", "alpha_f", "epsilon", "weights_mode"):
            if name not in allowed and getattr(self, name) is not None:
                raise ValueError(f"{name!r} is not a parameter of the {kind} loss")
        defaults = {
            "wce": {"weights_mode": "inverse_frequency"},
            "focal": {"gamma": DEFAULT_GAMMA, "alpha_f": DEFAULT_ALPHA_F},
            "label_smoothing": {"epsilon": DEFAULT_EPSILON},
            "rcl": {"alpha": DEFAULT_RCL_ALPHA, "beta": DEFAULT_RCL_BETA},
        }.get(kind, {})
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        for name in ("alpha", "beta", "gamma", "alpha_f", "epsilon"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, float(getattr(self, name)))
        if kind == "wce" and self.weights_mode not in WEIGHTS_MODES:
            raise ValueError(
                f"weights_mode must be one of {WEIGHTS_MODES}, got {self.weights_mode!r}"
            )
        if kind == "focal":
            _check_focal(self.gamma, self.alpha_f)
        if kind == "label_smoothing":
            _check_epsilon(self.epsilon)
        if kind == "rcl":
            if self.alpha < 1.0:
                raise ValueError(f"alpha must be >= 1, got {self.alpha}")
            if self.beta < self.alpha:
                raise ValueError(f"beta must be >= alpha, got {self.beta} < {self.alpha}")

    def build(self, taxonomy: ClassTaxonomy, class_counts=None) -> LossSpec:
        if self.kind == "ce":
            return LossSpec("ce")
        if self.kind == "wce":
            if self.weights_mode == "uniform":
                return LossSpec("wce", weights=np.ones(taxonomy.k))
            if class_counts is None:
                raise ValueError("inverse_frequency weights need training class counts")
            return LossSpec("wce", weights=class_weights_from_counts(class_counts))
        if self.kind == "focal":
            return LossSpec("focal", gamma=self.gamma, alpha_f=self.alpha_f)
        if self.kind == "label_smoothing":
            return LossSpec("label_smoothing", epsilon=self.epsilon)
        return LossSpec(
            "rcl", severity=build_severity_matrix(taxonomy, self.alpha, self.beta)
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        for name in ("alpha", "beta", "gamma", "alpha_f", "epsilon", "weights_mode"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LossConfig":
        if "kind" not in data:
            raise ValueError("loss config needs a 'kind' field")
        known = {"kind", "alpha", "beta", "gamma", "alpha_f", "epsilon", "weights_mode"}
        unknown = sorted(set(data) - known - {"name"})
        if unknown:
            raise ValueError(f"unknown loss config fields: {', '.join(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in known})
