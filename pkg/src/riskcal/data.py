"""Datasets: synthetic hierarchical Gaussians, CSV I/O and stratified splits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .hierarchy import ClassTaxonomy

SPLIT_NAMES = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    taxonomy: ClassTaxonomy
    split: Optional[dict[str, np.ndarray]] = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DataError(f"features must be an N x d matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DataError(f"{x.shape[0]} feature rows but {y.size} labels")
        if y.size and (y.min() < 0 or y.max() >= self.taxonomy.k):
            raise DataError(f"labels must lie in [0, {self.taxonomy.k})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if self.split is not None:
            object.__setattr__(self, "split", _check_split(self.split, x.shape[0], y, self.taxonomy))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self, part: Optional[str] = None) -> np.ndarray:
        y = self.labels if part is None else self.labels[self.split[part]]
        return np.bincount(y, minlength=self.taxonomy.k)

    def subset(self, part: str) -> tuple[np.ndarray, np.ndarray]:
        if self.split is None:
            raise DataError("dataset has no split")
        idx = self.split[part]
        return self.features[idx], self.labels[idx]


def _check_split(split, n: int, labels: np.ndarray, taxonomy: ClassTaxonomy):
    missing = [name for name in SPLIT_NAMES if name not in split]
    if missing:
        raise DataError(f"split is missing parts: {', '.join(missing)}")
    parts = {}
    for name in SPLIT_NAMES:
        idx = np.array(split[name], dtype=np.int64).reshape(-1)
        idx.setflags(write=False)
        parts[name] = idx
    merged = np.concatenate([parts[name] for name in SPLIT_NAMES])
    if merged.size != n or not np.array_equal(np.sort(merged), np.arange(n)):
        raise DataError("split indices must partition [0, N) without overlap")
    absent = set(range(taxonomy.k)) - set(labels[parts["train"]].tolist())
    if absent:
        names = ", ".join(taxonomy.class_names[c] for c in sorted(absent))
        raise DataError(f"classes missing from the training split: {names}")
    return parts


@dataclass(frozen=True)
class SynthConfig:
    taxonomy: ClassTaxonomy
    counts: Sequence[int]
    means: Sequence[Sequence[float]]
    sigma: float
    seed: int = 0

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) == 0:
            raise DataError("counts must not be empty")
        if len(counts) != self.taxonomy.k:
            raise DataError(f"{len(counts)} counts for {self.taxonomy.k} classes")
        if any(c < 1 for c in counts):
            raise DataError("every class needs at least one sample")
        means = np.array(self.means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] != self.taxonomy.k:
            raise DataError(f"means must be K x d, got shape {means.shape}")
        if not self.sigma > 0:
            raise DataError(f"sigma must be > 0, got {self.sigma}")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "means", means)


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Draw counts[c] points from N(mean_c, sigma^2 I) per class, then shuffle."""
    rng = np.random.default_rng(config.seed)
    d = config.means.shape[1]
    blocks, labels = [], []
    for c, (count, mean) in enumerate(zip(config.counts, config.means)):
        blocks.append(mean + config.sigma * rng.standard_normal((count, d)))
        labels.append(np.full(count, c, dtype=np.int64))
    x = np.concatenate(blocks)
    y = np.concatenate(labels)
    order = rng.permutation(y.size)
    return Dataset(features=x[order], labels=y[order], taxonomy=config.taxonomy)


OVERLAP_TAXONOMY = ClassTaxonomy(("B1", "B2", "M1", "M2"), (0, 0, 1, 1))
OVERLAP_MEANS = ((0.0, 0.0), (1.0, 0.0), (0.5, 1.0), (1.5, 1.0))
OVERLAP_COUNTS = (400, 400, 60, 60)
OVERLAP_SIGMA = 0.6
DEFAULT_FRACTIONS = (0.7, 0.15, 0.15)


def default_overlap_scenario(seed: int) -> Dataset:
    """Four overlapping blobs, two benign and two rare malignant, split 70/15/15."""
    ds = generate_synthetic(
        SynthConfig(
            taxonomy=OVERLAP_TAXONOMY,
            counts=OVERLAP_COUNTS,
            means=OVERLAP_MEANS,
            sigma=OVERLAP_SIGMA,
            seed=seed,
        )
    )
    return stratified_split(ds, DEFAULT_FRACTIONS, seed)


SCENARIOS = {"default-overlap": default_overlap_scenario}


def _allocate(n: int, fractions: np.ndarray) -> np.ndarray:
    # Largest remainder: every part stays within one sample of n * fraction.
    exact = n * fractions
    alloc = np.floor(exact).astype(np.int64)
    remainder = n - int(alloc.sum())
    if remainder:
        order = np.argsort(-(exact - alloc), kind="stable")
        alloc[order[:remainder]] += 1
    return alloc


def stratified_split(dataset: Dataset, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> Dataset:
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,):
        raise DataError("fractions must be (train, val, test)")
    if np.any(fr <= 0):
        raise DataError(f"every split fraction must be positive, got {fr.tolist()}")
    if abs(fr.sum() - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fr.sum()}")
    rng = np.random.default_rng(seed)
    parts: dict[str, list[np.ndarray]] = {name: [] for name in SPLIT_NAMES}
    for c in range(dataset.taxonomy.k):
        members = np.flatnonzero(dataset.labels == c)
        if members.size < len(SPLIT_NAMES):
            raise DataError(
                f"class {dataset.taxonomy.class_names[c]!r} has {members.size} samples, "
                f"need at least {len(SPLIT_NAMES)} to split"
            )
        members = rng.permutation(members)
        alloc = _allocate(members.size, fr)
        bounds = np.cumsum(alloc)[:-1]
        for name, chunk in zip(SPLIT_NAMES, np.split(members, bounds)):
            parts[name].append(chunk)
    split = {name: np.sort(np.concatenate(chunks)) for name, chunks in parts.items()}
    return replace(dataset, split=split)


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"f{j}" for j in range(dataset.dim)] + ["label"])
    names = dataset.taxonomy.class_names
    for row, label in zip(dataset.features, dataset.labels):
        writer.writerow([repr(float(v)) for v in row] + [names[label]])
    return buf.getvalue()


def write_csv(dataset: Dataset, path) -> None:
    Path(path).write_text(dataset_to_csv(dataset), encoding="utf-8")


def parse_csv(text: str, taxonomy: ClassTaxonomy) -> Dataset:
    rows = list(csv.reader(io.StringIO(text.lstrip("\ufeff"))))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError("dataset file is empty")
    header = [c.strip() for c in rows[0]]
    if not header or header[-1] != "label":
        raise DataError("last header column must be 'label'")
    d = len(header) - 1
    if d < 1:
        raise DataError("dataset has no feature columns")
    expected = [f"f{j}" for j in range(d)]
    if header[:-1] != expected:
        raise DataError(f"feature columns must be named {','.join(expected)}")
    if len(rows) == 1:
        raise DataError("dataset file has a header but no rows")

    x = np.empty((len(rows) - 1, d))
    y = np.empty(len(rows) - 1, dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        lineno = i + 2
        if len(row) != d + 1:
            raise DataError(f"line {lineno}: expected {d + 1} fields, got {len(row)}")
        try:
            x[i] = [float(v) for v in row[:-1]]
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric feature value") from None
        label = row[-1].strip()
        if label not in taxonomy.class_names:
            raise DataError(f"line {lineno}: label {label!r} is not in the taxonomy")
        y[i] = taxonomy.class_names.index(label)
    return Dataset(features=x, labels=y, taxonomy=taxonomy)


def load_csv(path, taxonomy: ClassTaxonomy) -> Dataset:
    return parse_csv(Path(path).read_text(encoding="utf-8"), taxonomy)
