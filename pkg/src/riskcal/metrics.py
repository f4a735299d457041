"""Confusion matrices, safety metrics and the three-tier error breakdown.

All metrics are computed from integer confusion counts. Rows index the true
class, columns the predicted class.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Optional

import numpy as np

from .hierarchy import BENIGN, MALIGNANT, ClassTaxonomy, ErrorKind, classify_confusion


class NoMalignantSamplesError(ValueError):
    """CER is undefined when the evaluated set has no critical-class samples."""


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion counts must be square, got shape {c.shape}")
        if np.any(c < 0):
            raise ValueError("confusion counts must be non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion_matrix(true_labels, predicted_labels, k: int) -> ConfusionMatrix:
    y = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted_labels, dtype=np.int64).reshape(-1)
    if y.shape != p.shape:
        raise ValueError(f"{y.size} true labels but {p.size} predictions")
    for arr in (y, p):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise IndexError(f"labels must lie in [0, {k})")
    counts = np.bincount(y * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts)


def _check_dims(cm: ConfusionMatrix, taxonomy: ClassTaxonomy) -> None:
    if cm.k != taxonomy.k:
        raise ValueError(f"confusion matrix is {cm.k}x{cm.k} but taxonomy has {taxonomy.k} classes")


def fatal_count(cm: ConfusionMatrix, taxonomy: ClassTaxonomy) -> int:
    _check_dims(cm, taxonomy)
    s = taxonomy.superclass_array
    return int(cm.counts[np.ix_(s == MALIGNANT, s == BENIGN)].sum())


def cer(cm: ConfusionMatrix, taxonomy: ClassTaxonomy) -> float:
    """Critical error rate: percent of malignant samples predicted benign."""
    _check_dims(cm, taxonomy)
    s = taxonomy.superclass_array
    n_malignant = int(cm.counts[s == MALIGNANT].sum())
    if n_malignant == 0:
        raise NoMalignantSamplesError("CER is undefined: no malignant samples evaluated")
    return 100.0 * fatal_count(cm, taxonomy) / n_malignant


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def precision_recall(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    tp = np.diag(cm.counts)
    return _safe_div(tp, cm.counts.sum(axis=0)), _safe_div(tp, cm.counts.sum(axis=1))


def f1_per_class(cm: ConfusionMatrix) -> np.ndarray:
    p, r = precision_recall(cm)
    return _safe_div(2.0 * p * r, p + r)


def f1_macro(cm: ConfusionMatrix) -> float:
    if cm.k < 2:
        raise ValueError("f1_macro needs at least 2 classes")
    return float(f1_per_class(cm).mean())


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("accuracy is undefined on an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


@dataclass(frozen=True)
class TaxonomyReport:
    correct_count: int
    visual_ambiguity_count: int
    type1_count: int
    type2_count: int
    n_malignant: int
    n_benign: int
    cer: Optional[float]
    f1_macro: float
    accuracy: float
    precision: list[float]
    recall: list[float]

    @property
    def total(self) -> int:
        return (
            self.correct_count
            + self.visual_ambiguity_count
            + self.type1_count
            + self.type2_count
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TaxonomyReport":
        return cls(**data)


def taxonomy_report(cm: ConfusionMatrix, taxonomy: ClassTaxonomy) -> TaxonomyReport:
    _check_dims(cm, taxonomy)
    tallies = {kind: 0 for kind in ErrorKind}
    for y in range(cm.k):
        for p in range(cm.k):
            tallies[classify_confusion(taxonomy, y, p)] += int(cm.counts[y, p])
    s = taxonomy.superclass_array
    n_malignant = int(cm.counts[s == MALIGNANT].sum())
    precision, recall = precision_recall(cm)
    return TaxonomyReport(
        correct_count=tallies[ErrorKind.CORRECT],
        visual_ambiguity_count=tallies[ErrorKind.VISUAL_AMBIGUITY],
        type1_count=tallies[ErrorKind.TYPE_I],
        type2_count=tallies[ErrorKind.TYPE_II],
        n_malignant=n_malignant,
        n_benign=int(cm.counts[s == BENIGN].sum()),
        cer=cer(cm, taxonomy) if n_malignant > 0 else None,
        f1_macro=f1_macro(cm),
        accuracy=accuracy(cm),
        precision=[float(v) for v in precision],
        recall=[float(v) for v in recall],
    )
