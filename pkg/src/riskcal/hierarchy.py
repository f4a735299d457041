"""Class-to-superclass hierarchies and the clinical severity matrix.

Every fine-grained class belongs to one of two superclasses: 0 (benign,
non-critical) or 1 (malignant, critical). A misclassification is graded by
where the true and predicted classes sit in that split:

    same superclass          -> visual ambiguity, multiplier 1
    benign  -> malignant     -> Type I (false positive), multiplier alpha
    malignant -> benign      -> Type II (fatal miss), multiplier beta
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BENIGN = 0
MALIGNANT = 1


class TaxonomyError(ValueError):
    pass


class ErrorKind(str, enum.Enum):
    CORRECT = "correct"
    VISUAL_AMBIGUITY = "visual_ambiguity"
    TYPE_I = "type1"
    TYPE_II = "type2"


@dataclass(frozen=True)
class ClassTaxonomy:
    class_names: tuple[str, ...]
    superclass: tuple[int, ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.class_names)
        flags = tuple(int(s) for s in self.superclass)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "superclass", flags)
        if len(names) < 2:
            raise TaxonomyError(f"need at least 2 classes, got {len(names)}")
        if any(not n.strip() for n in names):
            raise TaxonomyError("class names must be non-empty")
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise TaxonomyError(f"duplicate class names: {', '.join(dupes)}")
        if len(flags) != len(names):
            raise TaxonomyError(
                f"superclass has {len(flags)} entries for {len(names)} classes"
            )
        bad = [s for s in flags if s not in (BENIGN, MALIGNANT)]
        if bad:
            raise TaxonomyError(f"superclass flags must be 0 or 1, got {bad[0]}")
        if BENIGN not in flags:
            raise TaxonomyError("taxonomy is missing the benign superclass (S=0)")
        if MALIGNANT not in flags:
            raise TaxonomyError("taxonomy is missing the critical superclass (S=1)")

    @property
    def k(self) -> int:
        return len(self.class_names)

    @property
    def superclass_array(self) -> np.ndarray:
        return np.asarray(self.superclass, dtype=np.int64)

    def index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise TaxonomyError(f"unknown class {name!r}") from None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "superclass"])
        for name, s in zip(self.class_names, self.superclass):
            writer.writerow([name, s])
        return buf.getvalue()


@dataclass(frozen=True)
class SeverityMatrix:
    k: int
    alpha: float
    beta: float
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        if entries.shape != (self.k, self.k):
            raise ValueError(f"entries must be {self.k}x{self.k}, got {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def multiplier(self, y: int, y_hat: int) -> float:
        return float(self.entries[y, y_hat])


def build_severity_matrix(
    taxonomy: ClassTaxonomy, alpha: float, beta: float
) -> SeverityMatrix:
    """Block-structured penalty table: 1 within a superclass, ``alpha`` on
    benign->malignant cells and ``beta`` on malignant->benign cells."""
    alpha = float(alpha)
    beta = float(beta)
    if not np.isfinite(alpha) or alpha < 1.0:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    if not np.isfinite(beta) or beta < alpha:
        raise ValueError(f"beta must be >= alpha ({alpha}), got {beta}")
    s = taxonomy.superclass_array
    true_s = s[:, None]
    pred_s = s[None, :]
    entries = np.ones((taxonomy.k, taxonomy.k))
    entries[(true_s == BENIGN) & (pred_s == MALIGNANT)] = alpha
    entries[(true_s == MALIGNANT) & (pred_s == BENIGN)] = beta
    return SeverityMatrix(k=taxonomy.k, alpha=alpha, beta=beta, entries=entries)


def classify_confusion(taxonomy: ClassTaxonomy, y: int, y_hat: int) -> ErrorKind:
    for idx in (y, y_hat):
        if not 0 <= idx < taxonomy.k:
            raise IndexError(f"class index {idx} out of range [0, {taxonomy.k})")
    if y == y_hat:
        return ErrorKind.CORRECT
    s_true = taxonomy.superclass[y]
    s_pred = taxonomy.superclass[y_hat]
    if s_true == s_pred:
        return ErrorKind.VISUAL_AMBIGUITY
    if s_true == BENIGN:
        return ErrorKind.TYPE_I
    return ErrorKind.TYPE_II


# Class order: benign block first, then critical; alphabetical within each.
PRESETS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "brainmri": (
        ("no_tumor",),
        ("glioma", "meningioma", "pituitary"),
    ),
    "isic2018": (
        ("BKL", "DF", "NV", "VASC"),
        ("AKIEC", "BCC", "MEL"),
    ),
    "breakhis": (
        ("adenosis", "fibroadenoma", "phyllodes_tumor", "tubular_adenoma"),
        (
            "ductal_carcinoma",
            "lobular_carcinoma",
            "mucinous_carcinoma",
            "papillary_carcinoma",
        ),
    ),
    "sicapv2": (
        ("NC",),
        ("G3", "G4", "G5"),
    ),
}


def preset_taxonomy(name: str) -> ClassTaxonomy:
    key = name.lower().replace("-", "").replace("_", "")
    if key not in PRESETS:
        raise TaxonomyError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        )
    benign, critical = PRESETS[key]
    return ClassTaxonomy(
        class_names=benign + critical,
        superclass=(BENIGN,) * len(benign) + (MALIGNANT,) * len(critical),
    )


def load_taxonomy(source: str) -> ClassTaxonomy:
    """Parse ``class,superclass`` CSV text, or return a built-in preset when
    ``source`` is one of the preset names."""
    key = source.strip().lower().replace("-", "").replace("_", "")
    if key in PRESETS:
        return preset_taxonomy(key)

    rows = list(csv.reader(io.StringIO(source.lstrip("\ufeff"))))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise TaxonomyError("taxonomy file is empty")
    header = [c.strip().lower() for c in rows[0]]
    if "class" not in header:
        raise TaxonomyError("taxonomy header must contain a 'class' column")
    if "superclass" not in header:
        raise TaxonomyError("taxonomy header is missing the 'superclass' column")
    ci, si = header.index("class"), header.index("superclass")

    names, flags = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise TaxonomyError(
                f"line {lineno}: expected {len(header)} fields, got {len(row)}"
            )
        try:
            flag = int(row[si].strip())
        except ValueError:
            raise TaxonomyError(
                f"line {lineno}: superclass {row[si]!r} is not 0 or 1"
            ) from None
        names.append(row[ci].strip())
        flags.append(flag)
    return ClassTaxonomy(class_names=tuple(names), superclass=tuple(flags))


def read_taxonomy(path: str | Path) -> ClassTaxonomy:
    return load_taxonomy(Path(path).read_text(encoding="utf-8"))
