"""Dataset synthesis, persistence, CSV ingestion and label corruption.

All randomness goes through numpy's PCG64 generator seeded from the spec, so
datasets reproduce bit-identically across machines.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,)
    train_ids: np.ndarray
    test_ids: np.ndarray
    class_count: int
    consistency: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_ids = np.asarray(self.train_ids, dtype=np.int64)
        self.test_ids = np.asarray(self.test_ids, dtype=np.int64)
        n = len(self.labels)
        if self.features.shape[0] != n:
            raise DataFormatError(f"{self.features.shape[0]} feature rows but {n} labels")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataFormatError(f"labels must lie in [0, {self.class_count})")
        if np.intersect1d(self.train_ids, self.test_ids).size:
            raise DataFormatError("train and test splits overlap")
        if len(self.train_ids) + len(self.test_ids) != n or (
            n and not np.array_equal(np.sort(np.concatenate([self.train_ids, self.test_ids])), np.arange(n))
        ):
            raise DataFormatError("train and test splits must partition all sample ids")
        if self.consistency is not None:
            self.consistency = np.asarray(self.consistency, dtype=np.float64)
            if self.consistency.shape != (n,):
                raise DataFormatError("consistency must have one entry per sample")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def train(self):
        return self.features[self.train_ids], self.labels[self.train_ids]

    def test(self):
        return self.features[self.test_ids], self.labels[self.test_ids]

    def equals(self, other: "Dataset") -> bool:
        same_cons = (self.consistency is None and other.consistency is None) or (
            self.consistency is not None and other.consistency is not None
            and np.array_equal(self.consistency, other.consistency)
        )
        return (
            same_cons
            and self.class_count == other.class_count
            and self.source == other.source
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.train_ids, other.train_ids)
            and np.array_equal(self.test_ids, other.test_ids)
        )


@dataclass
class MixtureSpec:
    # centers[c] lists the component centers belonging to class c
    centers: Sequence[Sequence[Sequence[float]]]
    std: float | Sequence[Sequence[float]] = 0.5
    count: int | Sequence[Sequence[int]] = 100
    seed: int = 0
    test_fraction: float = 0.0

    def component_table(self):
        rows = []
        for c, comps in enumerate(self.centers):
            for j, center in enumerate(comps):
                std = self.std if np.isscalar(self.std) else self.std[c][j]
                count = self.count if np.isscalar(self.count) else self.count[c][j]
                if count < 1 or std <= 0:
                    raise ValueError(f"component {c}/{j}: need count >= 1 and std > 0")
                rows.append((c, np.asarray(center, dtype=np.float64), float(std), int(count)))
        return rows


@dataclass
class NoiseSpec:
    flip_rate: float = 0.2
    seed: int = 0
    consistency_noise_std: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.flip_rate < 1.0:
            raise ValueError(f"flip_rate must be in [0, 1), got {self.flip_rate}")
        if self.consistency_noise_std < 0:
            raise ValueError("consistency_noise_std must be >= 0")


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _split_per_group(groups: np.ndarray, test_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Seeded split stratified by ``groups``.

    The total test size is round(test_fraction * N); it is shared out across
    groups by largest remainder so each group keeps its proportion as far as
    integer counts allow.
    """
    keys = np.unique(groups)
    members = [np.flatnonzero(groups == g) for g in keys]
    total = int(math.floor(test_fraction * len(groups) + 0.5))
    quotas = np.array([test_fraction * len(m) for m in members])
    take = np.floor(quotas).astype(int)
    remainder = quotas - take
    for j in np.argsort(-remainder, kind="stable")[: total - take.sum()]:
        take[j] += 1
    train, test = [], []
    for ids, k in zip(members, take):
        ids = ids[rng.permutation(len(ids))]
        test.append(ids[:k])
        train.append(ids[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def gen_mixture(spec: MixtureSpec) -> Dataset:
    rng = _rng(spec.seed)
    feats, labels, comp_ids = [], [], []
    for k, (c, center, std, count) in enumerate(spec.component_table()):
        feats.append(center + std * rng.standard_normal((count, center.shape[0])))
        labels.append(np.full(count, c))
        comp_ids.append(np.full(count, k))
    features = np.concatenate(feats)
    labels = np.concatenate(labels)
    comp_ids = np.concatenate(comp_ids)
    train, test = _split_per_group(comp_ids, spec.test_fraction, rng)
    return Dataset(features, labels, train, test, len(spec.centers),
                   source=f"mixture(seed={spec.seed})")


def default_benchmark_spec(seed: int = 0) -> MixtureSpec:
    """8 classes in 2-D, 1000 train + 250 test per class.

    Each class owns one dense, easy cluster on an outer ring (650 points)
    plus two tight cells in a shared 4x4 grid at the origin (300 points
    each). The grid cells sit close together, so the boundary region is
    where extra training pays off while the outer clusters are learned
    within a few epochs.
    """
    classes, cells, side, spacing = 8, 2, 4, 2.0
    radius, core_std, cell_std, n_core = 7.0, 0.6, 0.45, 650
    n_cell = (1250 - n_core) // cells
    # fixed assignment of grid cells to classes, independent of the data seed
    order = np.random.default_rng(1234).permutation(side * side)[: classes * cells]
    centers, stds, counts = [], [], []
    for c in range(classes):
        a = 2 * math.pi * c / classes
        cs, ss, ns = [[radius * math.cos(a), radius * math.sin(a)]], [core_std], [n_core]
        for j in range(cells):
            row, col = divmod(int(order[c * cells + j]), side)
            cs.append([(row - (side - 1) / 2) * spacing, (col - (side - 1) / 2) * spacing])
            ss.append(cell_std)
            ns.append(n_cell)
        centers.append(cs)
        stds.append(ss)
        counts.append(ns)
    return MixtureSpec(centers, stds, counts, seed=seed, test_fraction=0.2)


def gen_default_benchmark(seed: int = 0) -> Dataset:
    ds = gen_mixture(default_benchmark_spec(seed))
    ds.source = f"default-mixture(seed={seed})"
    return ds


def gen_rings(classes: int = 3, per_class: int = 500, noise: float = 0.15, seed: int = 0,
              test_fraction: float = 0.2) -> Dataset:
    """Concentric rings, class c at radius c + 1; boundaries are non-linear."""
    rng = _rng(seed)
    feats, labels = [], []
    for c in range(classes):
        theta = rng.uniform(0, 2 * math.pi, per_class)
        radius = (c + 1) + noise * rng.standard_normal(per_class)
        feats.append(np.column_stack([radius * np.cos(theta), radius * np.sin(theta)]))
        labels.append(np.full(per_class, c))
    labels = np.concatenate(labels)
    train, test = _split_per_group(labels, test_fraction, rng)
    return Dataset(np.concatenate(feats), labels, train, test, classes, source=f"rings(seed={seed})")


def inject_label_noise(dataset: Dataset, noise: NoiseSpec, feature_noise_std: float = 0.0):
    """Flip round(flip_rate * N_train) train labels to a different class.

    Returns (new dataset, sorted flipped ids). Every sample gets a consistency
    score near 1 when its label is intact and near 0 when it was flipped.
    With ``feature_noise_std`` > 0 the flipped samples' features are also
    perturbed by Gaussian noise (a stand-in for input corruption).
    """
    if dataset.class_count < 2:
        raise ValueError("label noise needs at least two classes")
    rng = _rng(noise.seed)
    labels = dataset.labels.copy()
    n_flip = int(round(noise.flip_rate * len(dataset.train_ids)))
    flipped = np.sort(rng.choice(dataset.train_ids, size=n_flip, replace=False))
    # offset in [1, C-1] keeps the new label uniform over the other classes
    offsets = rng.integers(1, dataset.class_count, size=n_flip)
    labels[flipped] = (labels[flipped] + offsets) % dataset.class_count
    indicator = np.zeros(dataset.n)
    indicator[flipped] = 1.0
    consistency = np.clip(1.0 - indicator + noise.consistency_noise_std * rng.standard_normal(dataset.n), 0.0, 1.0)
    features = dataset.features.copy()
    if feature_noise_std > 0:
        features[flipped] += feature_noise_std * rng.standard_normal((n_flip, dataset.dim))
    out = Dataset(features, labels, dataset.train_ids, dataset.test_ids, dataset.class_count,
                  consistency, f"{dataset.source}+noise({noise.flip_rate},seed={noise.seed})")
    return out, flipped


def split_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".train")


def save(dataset: Dataset, path) -> None:
    path = Path(path)
    has_c = dataset.consistency is not None
    lines = [f"# dims: {dataset.n} {dataset.dim} {dataset.class_count} {int(has_c)}"]
    if dataset.source:
        lines.append(f"# source: {dataset.source}")
    for i in range(dataset.n):
        cells = [str(i), str(int(dataset.labels[i]))]
        if has_c:
            cells.append(repr(float(dataset.consistency[i])))
        cells.extend(repr(float(v)) for v in dataset.features[i])
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    split_path(path).write_text("".join(f"{i}\n" for i in dataset.train_ids), encoding="utf-8")


def load(path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read ({exc})") from exc
    if not text or not text[0].startswith("# dims:"):
        raise DataFormatError(f"{path}:1: missing '# dims: N d C has_consistency' header")
    try:
        n, d, c, has_c = (int(t) for t in text[0][len("# dims:"):].split())
    except ValueError as exc:
        raise DataFormatError(f"{path}:1: malformed dims header {text[0]!r}") from exc
    source = ""
    features = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64)
    consistency = np.empty(n) if has_c else None
    expected = 2 + bool(has_c) + d
    row = 0
    for lineno, line in enumerate(text[1:], start=2):
        if line.startswith("#"):
            if line.startswith("# source:"):
                source = line[len("# source:"):].strip()
            continue
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != expected:
            raise DataFormatError(f"{path}:{lineno}: expected {expected} fields, got {len(cells)}")
        if row >= n:
            raise DataFormatError(f"{path}:{lineno}: more rows than the declared N={n}")
        try:
            sid = int(cells[0])
            label = int(cells[1])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: id/label must be integers") from exc
        if sid != row:
            raise DataFormatError(f"{path}:{lineno}: expected id {row}, got {sid}")
        if not 0 <= label < c:
            raise DataFormatError(f"{path}:{lineno}: row {sid} has label {label} outside [0, {c})")
        labels[row] = label
        offset = 2
        try:
            if has_c:
                consistency[row] = float(cells[2])
                offset = 3
            features[row] = [float(v) for v in cells[offset:]]
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from exc
        row += 1
    if row != n:
        raise DataFormatError(f"{path}: declared N={n} rows but found {row}")
    try:
        train_ids = np.array([int(t) for t in split_path(path).read_text(encoding="utf-8").split()], dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"{split_path(path)}: unreadable split file ({exc})") from exc
    test_ids = np.setdiff1d(np.arange(n), train_ids)
    return Dataset(features, labels, train_ids, test_ids, c, consistency, source)


def load_csv(path, label_column: str, split_fraction: float = 0.8, seed: int = 0,
             zscore: bool = False) -> Dataset:
    """Read a headed CSV of numeric features plus an integer label column.

    ``split_fraction`` is the train share; the split is stratified by label.
    With ``zscore`` the columns are standardized with train-split statistics.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataFormatError(f"{path}:1: no column named {label_column!r}")
        li = header.index(label_column)
        feats, labels = [], []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}")
            row = []
            for j, cell in enumerate(cells):
                try:
                    if j == li:
                        labels.append(int(cell))
                    else:
                        row.append(float(cell))
                except ValueError:
                    raise DataFormatError(
                        f"{path}:{lineno}: column {header[j]!r} has non-numeric value {cell!r}"
                    ) from None
            feats.append(row)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.min() < 0:
        raise DataFormatError(f"{path}: negative label")
    features = np.asarray(feats, dtype=np.float64).reshape(len(labels), len(header) - 1)
    train, test = _split_per_group(labels, 1.0 - split_fraction, _rng(seed))
    if zscore:
        mu = features[train].mean(axis=0)
        sd = features[train].std(axis=0)
        sd[sd < 1e-12] = 1.0
        features = (features - mu) / sd
    classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(features, labels, train, test, max(classes, 2), source=f"csv({path.name})")
