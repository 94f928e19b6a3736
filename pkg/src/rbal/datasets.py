"""Datasets: synthetic degradation cycles, labelled CSV import and train/test splitting.

Labels are always in ``1..K``. Observations are kept as arrays (``features`` is
``(n, D)``) rather than lists of objects; :class:`Observation` is a thin view used
when iterating.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np


class ConfigurationError(ValueError):
    pass


class DatasetImportError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    features: np.ndarray
    time_index: int


def _check_labels(labels: np.ndarray, K: int) -> None:
    if labels.size and (labels.min() < 1 or labels.max() > K):
        raise ValueError(f"labels must lie in 1..{K}")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    K: int
    time_index: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise ValueError("features must be a 2-D array (n, D)")
        y = np.asarray(self.labels, dtype=int)
        if y.shape != (X.shape[0],):
            raise ValueError("features and labels must have equal lengths")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        _check_labels(y, self.K)
        t = np.arange(len(y)) if self.time_index is None else np.asarray(self.time_index, dtype=int)
        if t.shape != y.shape or np.any(np.diff(t) <= 0) or (t.size and t[0] < 0):
            raise ValueError("time_index must be nonnegative and strictly increasing")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "time_index", t)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def D(self) -> int:
        return self.features.shape[1]

    def observations(self) -> Iterator[Observation]:
        for x, t in zip(self.features, self.time_index):
            yield Observation(x, int(t))


@dataclass(frozen=True)
class LabelledSet:
    features: np.ndarray
    labels: np.ndarray
    time_index: np.ndarray
    K: int

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class UnlabelledPool:
    """Pool observations in time order. Ground truth is kept for simulated inspection."""

    features: np.ndarray
    time_index: np.ndarray
    K: int
    _hidden_labels: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.time_index)

    def reveal(self, position: int) -> int:
        """Inspect the structure at pool ``position``: return its true label."""
        return int(self._hidden_labels[position])

    def hidden_labels(self) -> np.ndarray:
        return self._hidden_labels.copy()


@dataclass(frozen=True)
class SyntheticConfig:
    """Repeated class 1 -> K degradation sweeps drawn from per-class Gaussians.

    ``first_cycle_points`` overrides the per-class counts of the first sweep
    (the default reproduces an 11997-point set: 1997 + 5 x 2000).
    """

    cycles: int = 6
    points_per_cycle_per_class: tuple = (500, 500, 500, 500)
    class_means: tuple = ((-2.0, -2.0), (-0.5, -0.5), (1.0, 1.0), (2.0, 2.0))
    class_covariances: tuple = (
        ((0.30, 0.12), (0.12, 0.30)),
        ((0.30, 0.12), (0.12, 0.30)),
        ((0.30, 0.12), (0.12, 0.30)),
        ((0.30, 0.12), (0.12, 0.30)),
    )
    seed: int = 0
    first_cycle_points: Optional[tuple] = (500, 500, 500, 497)

    @property
    def K(self) -> int:
        return len(self.class_means)

    def validate(self) -> None:
        if self.cycles < 1:
            raise ConfigurationError("cycles must be >= 1")
        K = self.K
        if len(self.points_per_cycle_per_class) != K or len(self.class_covariances) != K:
            raise ConfigurationError("per-class settings must all have length K")
        counts = list(self.points_per_cycle_per_class)
        if self.first_cycle_points is not None:
            if len(self.first_cycle_points) != K:
                raise ConfigurationError("first_cycle_points must have length K")
            counts += list(self.first_cycle_points)
        if any(int(c) < 1 for c in counts):
            raise ConfigurationError("point counts must be positive")
        D = len(self.class_means[0])
        for k, (m, c) in enumerate(zip(self.class_means, self.class_covariances)):
            c = np.asarray(c, dtype=float)
            if len(m) != D or c.shape != (D, D):
                raise ConfigurationError(f"class {k + 1}: mean/covariance shape mismatch")
            if not np.allclose(c, c.T):
                raise ConfigurationError(f"class {k + 1}: covariance is not symmetric")
            try:
                np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                raise ConfigurationError(f"class {k + 1}: covariance is not positive-definite") from None

    def cycle_counts(self, cycle: int) -> tuple:
        if cycle == 0 and self.first_cycle_points is not None:
            return tuple(self.first_cycle_points)
        return tuple(self.points_per_cycle_per_class)


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    config.validate()
    rng = np.random.default_rng(config.seed)
    chol = [np.linalg.cholesky(np.asarray(c, dtype=float)) for c in config.class_covariances]
    means = [np.asarray(m, dtype=float) for m in config.class_means]
    blocks, labels = [], []
    for c in range(config.cycles):
        for k, n in enumerate(config.cycle_counts(c)):
            z = rng.standard_normal((int(n), len(means[k])))
            blocks.append(means[k] + z @ chol[k].T)
            labels.append(np.full(int(n), k + 1))
    return Dataset(np.vstack(blocks), np.concatenate(labels), config.K)


def import_labelled_csv(
    path,
    expected_dims: Optional[int] = None,
    n_classes: Optional[int] = None,
    label_column: str = "label",
) -> Dataset:
    """Read a header-first CSV of feature columns followed by a ``label`` column.

    Row order is time order. ``K`` is ``n_classes`` when given, otherwise the
    largest label present.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetImportError(f"{path}: empty file (no header)") from None
        if label_column not in header:
            raise DatasetImportError(f"{path}: missing '{label_column}' column")
        li = header.index(label_column)
        feat_cols = [i for i in range(len(header)) if i != li]
        if expected_dims is not None and len(feat_cols) != expected_dims:
            raise DatasetImportError(
                f"{path}: expected {expected_dims} feature columns, found {len(feat_cols)}"
            )
        rows, labels = [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DatasetImportError(f"{path}: row {rownum}: expected {len(header)} cells, got {len(row)}")
            try:
                feats = [float(row[i]) for i in feat_cols]
                lab_f = float(row[li])
            except ValueError:
                raise DatasetImportError(f"{path}: row {rownum}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in feats):
                raise DatasetImportError(f"{path}: row {rownum}: non-finite feature")
            if not lab_f.is_integer():
                raise DatasetImportError(f"{path}: row {rownum}: label must be an integer")
            lab = int(lab_f)
            if lab < 1 or (n_classes is not None and lab > n_classes):
                upper = n_classes if n_classes is not None else "K"
                raise DatasetImportError(f"{path}: row {rownum}: label {lab} outside 1..{upper}")
            rows.append(feats)
            labels.append(lab)
    if not rows:
        raise DatasetImportError(f"{path}: no rows")
    K = n_classes if n_classes is not None else max(labels)
    return Dataset(np.asarray(rows, dtype=float), np.asarray(labels), K)


def write_labelled_csv(data: Dataset, path, feature_names: Optional[Sequence[str]] = None) -> None:
    names = list(feature_names) if feature_names else [f"x{i + 1}" for i in range(data.D)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["label"])
        for x, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def derive_damage_split(data: Dataset, damage_start: int = 3475,
                        incipient: int = 3, advanced: int = 4) -> Dataset:
    """Relabel rows from ``damage_start`` (0-based; observation 3476 in 1-based
    numbering) onwards: first half ``incipient``, second half ``advanced``.

    Earlier rows keep their labels, so cold-temperature labels must already be
    present in the file.
    """
    n = len(data)
    if not 0 <= damage_start < n:
        raise ValueError(f"damage_start {damage_start} outside 0..{n - 1}")
    y = data.labels.copy()
    n_dmg = n - damage_start
    half = n_dmg // 2
    y[damage_start:damage_start + half] = incipient
    y[damage_start + half:] = advanced
    return Dataset(data.features, y, max(data.K, incipient, advanced), data.time_index)


def split_and_init(data: Dataset, test_fraction: float, init_label_fraction: float, seed: int):
    """Random test split, then a random labelled subset of the (time-ordered) training rows.

    Returns ``(labelled, pool, test)``.
    """
    if len(data) == 0:
        raise SplitError("dataset is empty")
    if not 0.0 < test_fraction < 1.0:
        raise SplitError("test_fraction must lie in (0, 1)")
    if not 0.0 < init_label_fraction < 1.0:
        raise SplitError("init_label_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n = len(data)
    n_test = int(round(test_fraction * n))
    perm = rng.permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    n_train = len(train_idx)
    n_lab = int(round(init_label_fraction * n_train))
    if n_lab < 1:
        raise SplitError("init_label_fraction leaves no labelled points (at least one required)")
    if n_lab >= n_train:
        raise SplitError("init_label_fraction leaves the unlabelled pool empty")
    lab_mask = np.zeros(n_train, dtype=bool)
    lab_mask[rng.choice(n_train, size=n_lab, replace=False)] = True
    lab_idx, pool_idx = train_idx[lab_mask], train_idx[~lab_mask]

    X, y, t = data.features, data.labels, data.time_index
    labelled = LabelledSet(X[lab_idx], y[lab_idx], t[lab_idx], data.K)
    pool = UnlabelledPool(X[pool_idx], t[pool_idx], data.K, y[pool_idx])
    test = Dataset(X[test_idx], y[test_idx], data.K, t[test_idx])
    return labelled, pool, test


def standardize(labelled: LabelledSet, pool: UnlabelledPool, test: Dataset):
    """Z-score all three sets with the mean/std of the training features (labelled + pool)."""
    train = np.vstack([labelled.features, pool.features])
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd == 0] = 1.0
    f = lambda A: (A - mu) / sd  # noqa: E731
    return (
        LabelledSet(f(labelled.features), labelled.labels, labelled.time_index, labelled.K),
        UnlabelledPool(f(pool.features), pool.time_index, pool.K, pool._hidden_labels),
        Dataset(f(test.features), test.labels, test.K, test.time_index),
    )
