"""Datasets, CSV ingestion, Gaussian-mixture generation and open-set scenarios.

Labels are always dense ``0..n_classes-1`` inside the library. In an open-set
scenario the known classes occupy ``0..m-1`` and every unknown-unknown class is
folded into the single id ``m`` (the dummy id used during rectification).
"""

from __future__ import annotations

import csv
import math
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import openness


class DataError(ValueError):
    """Base class for dataset construction and ingestion failures."""


class CsvParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CsvStructureError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class StratificationWarning(UserWarning):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Dense feature matrix with dense integer labels.

    ``n_classes`` is the size of the label space, which may exceed the number
    of labels actually present (for example after augmenting with an empty
    sample, the dummy class exists but has no rows).
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, copy=True)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        y = np.array(self.labels, copy=True)
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integers")
        y = y.astype(np.int64).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise DataError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if x.shape[1] < 1:
            raise DataError("need at least one feature column")
        if not np.all(np.isfinite(x)):
            bad = int(np.argwhere(~np.isfinite(x))[0, 0])
            raise DataError(f"row {bad} contains a non-finite value")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes}); got [{y.min()}, {y.max()}]")
        if self.label_names is not None and len(self.label_names) != self.n_classes:
            raise DataError("label_names length must equal n_classes")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "n_classes", int(self.n_classes))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, idx, n_classes: int | None = None) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.n_classes if n_classes is None else n_classes,
            self.label_names if n_classes is None else None,
        )


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _canonical_label_order(raw: Sequence[str]) -> list[str]:
    seen = list(dict.fromkeys(raw))
    try:
        ints = [int(v) for v in seen]
    except ValueError:
        return seen
    # integer-coded classes keep their numeric order (digit 3 stays id 3 for pendigits)
    return [v for _, v in sorted(zip(ints, seen))]


def load_csv(
    path,
    label_column: int | str = -1,
    header: bool = False,
    ignore_columns: Iterable[int | str] = (),
) -> tuple[Dataset, dict[str, int]]:
    """Read a numeric CSV with one label column.

    Returns the dataset and the mapping from label text to internal id.
    String labels are numbered by first appearance; labels that all parse as
    integers keep their numeric order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if any(c.strip() for c in r)]
    if not rows:
        raise EmptyInputError(f"{path}: empty file")

    names: list[str] | None = None
    if header:
        names = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
        if not rows:
            raise EmptyInputError(f"{path}: header only, no data rows")

    width = len(rows[0][1])

    def resolve(col: int | str) -> int:
        if isinstance(col, str):
            if names is None:
                raise CsvStructureError("column names require header=True")
            if col not in names:
                raise CsvStructureError(f"no column named {col!r}")
            return names.index(col)
        if not -width <= col < width:
            raise CsvStructureError(f"column index {col} out of range for {width} columns")
        return col % width

    lab = resolve(label_column)
    skip = {resolve(c) for c in ignore_columns} | {lab}
    feat_cols = [j for j in range(width) if j not in skip]
    if not feat_cols:
        raise CsvStructureError("no feature columns left")

    feats = np.empty((len(rows), len(feat_cols)))
    raw_labels = []
    for r, (line, row) in enumerate(rows):
        if len(row) != width:
            raise CsvStructureError(f"line {line}: expected {width} columns, found {len(row)}")
        for c, j in enumerate(feat_cols):
            try:
                feats[r, c] = float(row[j])
            except ValueError:
                raise CsvParseError(line, f"non-numeric value {row[j]!r} in column {j}") from None
        raw_labels.append(row[lab].strip())

    order = _canonical_label_order(raw_labels)
    mapping = {name: i for i, name in enumerate(order)}
    labels = np.array([mapping[v] for v in raw_labels], dtype=np.int64)
    return Dataset(feats, labels, len(order), tuple(order)), mapping


def format_number(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def save_csv(dataset: Dataset, path, header: bool = True) -> None:
    """Write features plus a trailing ``label`` column (internal ids)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"x{j}" for j in range(dataset.dim)] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            w.writerow([format_number(v) for v in x] + [int(y)])


# ---------------------------------------------------------------------------
# Synthetic Gaussian mixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianComponent:
    mean: tuple[float, ...]
    variance: float
    weight: float
    class_id: int


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Isotropic Gaussian components, each tagged with a class id."""

    components: tuple[GaussianComponent, ...]
    seed: int = 0

    def __post_init__(self):
        comps = tuple(
            c if isinstance(c, GaussianComponent) else GaussianComponent(**c) for c in self.components
        )
        comps = tuple(
            GaussianComponent(tuple(float(v) for v in c.mean), float(c.variance), float(c.weight), int(c.class_id))
            for c in comps
        )
        object.__setattr__(self, "components", comps)
        if not comps:
            raise DataError("mixture needs at least one component")
        dims = {len(c.mean) for c in comps}
        if len(dims) != 1 or 0 in dims:
            raise DataError(f"component means must share a positive dimension, got {sorted(dims)}")
        for c in comps:
            if not c.variance > 0 or not math.isfinite(c.variance):
                raise DataError(f"variance must be positive, got {c.variance}")
            if c.weight < 0:
                raise DataError(f"weight must be non-negative, got {c.weight}")
            if c.class_id < 0:
                raise DataError("class ids must be non-negative")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-9:
            raise DataError(f"weights sum to {total}, expected 1")
        ids = sorted({c.class_id for c in comps})
        if ids != list(range(len(ids))):
            raise DataError(f"class ids must be dense 0..K-1, got {ids}")

    @property
    def dim(self) -> int:
        return len(self.components[0].mean)

    @property
    def n_classes(self) -> int:
        return max(c.class_id for c in self.components) + 1

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "components": [
                {"mean": list(c.mean), "variance": c.variance, "weight": c.weight, "class_id": c.class_id}
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> GaussianMixtureSpec:
        return cls(tuple(GaussianComponent(**c) for c in d["components"]), int(d.get("seed", 0)))


def generate_gaussian(spec: GaussianMixtureSpec, n_per_component: int | Sequence[int]) -> Dataset:
    """Draw ``n_per_component`` points from every component (deterministic in ``spec.seed``)."""
    comps = spec.components
    counts = [n_per_component] * len(comps) if np.isscalar(n_per_component) else list(n_per_component)
    if len(counts) != len(comps) or any(int(n) < 1 for n in counts):
        raise DataError("need a positive sample count per component")
    rng = np.random.default_rng(spec.seed)
    xs, ys = [], []
    for comp, n in zip(comps, counts):
        z = rng.standard_normal((int(n), spec.dim))
        xs.append(np.asarray(comp.mean) + math.sqrt(comp.variance) * z)
        ys.append(np.full(int(n), comp.class_id))
    return Dataset(np.vstack(xs), np.concatenate(ys), spec.n_classes)


# ---------------------------------------------------------------------------
# Open-set scenarios
# ---------------------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-12))


@dataclass(frozen=True)
class OpenSetScenario:
    """Known-class training set and a test set containing unknown-unknowns.

    ``train`` labels are ``0..m-1``; ``test`` labels are ``0..m`` with every
    u.u. class mapped to ``m``. ``test_source_labels`` keeps the original ids.
    """

    train: Dataset
    test: Dataset
    known_class_ids: tuple[int, ...]
    uu_class_ids: tuple[int, ...]
    test_source_labels: np.ndarray = field(repr=False)

    @property
    def n_known(self) -> int:
        return len(self.known_class_ids)

    @property
    def openness_target_is_train(self) -> float:
        """Openness with |target| = |training|; the convention used for the shipped openness targets."""
        n = self.n_known + len(self.uu_class_ids)
        return openness(self.n_known, n, self.n_known)

    @property
    def openness_target_is_test(self) -> float:
        n = self.n_known + len(self.uu_class_ids)
        return openness(self.n_known, n, n)


def make_scenario(full: Dataset, uu_class_ids: Iterable[int], split_fraction: float, seed: int) -> OpenSetScenario:
    """Stratified train/test split, then drop the u.u. classes from training."""
    uu = tuple(sorted({int(c) for c in uu_class_ids}))
    present = sorted(np.unique(full.labels).tolist())
    if not 0 < split_fraction < 1:
        raise DataError(f"split_fraction must be in (0, 1), got {split_fraction}")
    missing = [c for c in uu if c not in present]
    if missing:
        raise DataError(f"u.u. classes {missing} not present in dataset")
    known = tuple(c for c in present if c not in uu)
    if not known:
        raise DataError("u.u. selection covers every class; no known classes left")

    rng = np.random.default_rng([seed, 0x5C3])
    train_idx, test_idx = [], []
    for c in present:
        idx = np.flatnonzero(full.labels == c)
        idx = idx[rng.permutation(idx.size)]
        cut = _round_half_up(split_fraction * idx.size)
        if c in known:
            train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))

    m = len(known)
    remap = np.full(full.n_classes, m, dtype=np.int64)
    remap[list(known)] = np.arange(m)
    names = None
    if full.label_names is not None:
        names = tuple(full.label_names[c] for c in known)
    train = Dataset(full.features[train_idx], remap[full.labels[train_idx]], m, names)
    test = Dataset(
        full.features[test_idx],
        remap[full.labels[test_idx]],
        m + 1,
        None if names is None else names + ("unknown",),
    )
    return OpenSetScenario(train, test, known, uu, _frozen(full.labels[test_idx].copy()))


def sample_indices(n: int, c: float, seed: int) -> np.ndarray:
    """Uniform draw without replacement of round(c*n) indices, sorted."""
    if not 0 < c <= 1:
        raise DataError(f"sample rate c must be in (0, 1], got {c}")
    size = min(n, _round_half_up(c * n))
    if n > 0:
        size = max(size, 1)
    rng = np.random.default_rng([seed, 0x7E57])
    return np.sort(rng.choice(n, size=size, replace=False)) if size else np.empty(0, dtype=np.int64)


def sample_test(test: Dataset, c: float, seed: int) -> tuple[Dataset, Dataset]:
    idx = sample_indices(len(test), c, seed)
    rest = np.setdiff1d(np.arange(len(test)), idx)
    return test.subset(idx), test.subset(rest)


@dataclass(frozen=True)
class AugmentedDataset:
    """Training set plus a test sample relabelled as the dummy class.

    Rows ``0..n_train-1`` are the original training rows, the remaining rows
    come from the sample in order.
    """

    data: Dataset
    from_sample: np.ndarray
    source_index: np.ndarray
    dummy_label: int

    def provenance(self, row: int) -> tuple[str, int]:
        return ("sample" if self.from_sample[row] else "train", int(self.source_index[row]))

    @property
    def sample_rows(self) -> np.ndarray:
        return np.flatnonzero(self.from_sample)


def augment(train: Dataset, sample: Dataset, dummy_label: int | None = None) -> AugmentedDataset:
    if dummy_label is None:
        dummy_label = train.n_classes
    if dummy_label != train.n_classes:
        raise DataError(f"dummy label must be the next free id {train.n_classes}, got {dummy_label}")
    if len(sample) and sample.dim != train.dim:
        raise DataError(f"sample has {sample.dim} features, training set has {train.dim}")
    feats = np.vstack([train.features, sample.features.reshape(-1, train.dim)])
    labels = np.concatenate([train.labels, np.full(len(sample), dummy_label, dtype=np.int64)])
    from_sample = np.concatenate([np.zeros(len(train), bool), np.ones(len(sample), bool)])
    source = np.concatenate([np.arange(len(train)), np.arange(len(sample))])
    data = Dataset(feats, labels, train.n_classes + 1)
    return AugmentedDataset(data, _frozen(from_sample), _frozen(source), dummy_label)


def can_stratify(labels: np.ndarray, k: int) -> bool:
    counts = np.bincount(np.asarray(labels))
    counts = counts[counts > 0]
    return bool(counts.size) and bool(np.all(counts >= k))


def kfold_indices(n: int, k: int, stratify_labels=None, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold partition of ``range(n)``.

    Stratified when every class has at least ``k`` members; otherwise falls
    back to a plain shuffled split and emits :class:`StratificationWarning`.
    """
    if k < 2:
        raise DataError(f"need at least 2 folds, got {k}")
    if k > n:
        raise DataError(f"cannot make {k} folds from {n} rows")
    rng = np.random.default_rng([seed, 0xF01D])
    fold_of = np.empty(n, dtype=np.int64)
    labels = None if stratify_labels is None else np.asarray(stratify_labels)
    if labels is not None and len(labels) != n:
        raise DataError("stratify_labels length must equal n")
    if labels is not None and can_stratify(labels, k):
        # deal each class round-robin, continuing the cursor across classes so totals stay balanced
        order = np.concatenate(
            [rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)]
        )
        fold_of[order] = np.arange(n) % k
    else:
        if labels is not None:
            warnings.warn(f"a class has fewer than {k} members; using unstratified folds", StratificationWarning)
        fold_of[rng.permutation(n)] = np.arange(n) % k
    all_idx = np.arange(n)
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]


def holdout_indices(n: int, holdout_fraction: float, stratify_labels=None, seed: int = 0):
    """Single split; returns ``(fit_idx, holdout_idx)``."""
    if not 0 < holdout_fraction < 1:
        raise DataError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    rng = np.random.default_rng([seed, 0x401D])
    labels = np.zeros(n, dtype=np.int64) if stratify_labels is None else np.asarray(stratify_labels)
    held = []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        held.append(idx[: _round_half_up(holdout_fraction * idx.size)])
    held = np.sort(np.concatenate(held))
    return np.setdiff1d(np.arange(n), held), held
