"""Random test sampling and cross-validation (RTSCV).

``rectify`` adds a random test-set sample to the training set as one extra
"dummy" class, cross-validates the augmented set, keeps the sample rows that
are still predicted as dummy (the unknown-unknowns ``X_u``) and refits on the
training set plus ``X_u``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ._parallel import parallel_map
from .classifiers import Classifier, normalized_scores
from .dataset import (
    AugmentedDataset,
    Dataset,
    DataError,
    StratificationWarning,
    augment,
    can_stratify,
    holdout_indices,
    kfold_indices,
    sample_indices,
)
from .metrics import EvalReport, evaluate, macro_f_measure

log = logging.getLogger(__name__)

ClassifierFactory = Callable[[], Classifier]


@dataclass(frozen=True)
class RtscvConfig:
    c: float = 0.08
    k: int = 3
    seed: int = 0
    mode: str = "kfold"
    holdout_fraction: float = 0.3
    restrict_uu_to_sample: bool = True

    def __post_init__(self):
        if not 0 < self.c <= 1:
            raise DataError(f"c must be in (0, 1], got {self.c}")
        if self.mode not in ("kfold", "holdout"):
            raise DataError(f"mode must be 'kfold' or 'holdout', got {self.mode!r}")
        if self.mode == "kfold" and self.k < 2:
            raise DataError(f"k must be >= 2, got {self.k}")
        if self.mode == "holdout" and not 0 < self.holdout_fraction < 1:
            raise DataError(f"holdout_fraction must be in (0, 1), got {self.holdout_fraction}")


@dataclass
class RtscvOutcome:
    """Result of one rectification run.

    ``uu_set`` indexes the test sample (``sample_index``) and ``cv_predictions``
    holds one label per row of ``augmented.data``.
    """

    rectified_model: Classifier
    uu_set: np.ndarray
    rectified_train: Dataset
    cv_predictions: np.ndarray
    sample_index: np.ndarray
    augmented: AugmentedDataset
    config: RtscvConfig
    diagnostics: dict = field(default_factory=dict)
    engine: str = "rtscv"

    @property
    def n_known(self) -> int:
        return self.augmented.dummy_label

    def to_json(self, model_path: str | None = None) -> dict:
        return {
            "engine": self.engine,
            "config": asdict(self.config),
            "diagnostics": self.diagnostics,
            "sample_index": self.sample_index.tolist(),
            "uu_set": self.uu_set.tolist(),
            "model": model_path,
        }


def _fit_predict(factory: ClassifierFactory, data: Dataset, fit_idx, pred_idx) -> tuple[np.ndarray, bool]:
    """Fit on ``fit_idx`` and predict ``pred_idx``; the flag marks a degenerate fold.

    A class too small for the model in this fold's training part is dropped
    from that fold only, so the fold can still vote.
    """
    model = factory()
    part = data.subset(fit_idx)
    counts = part.class_counts()
    small = (counts > 0) & (counts < model.min_class_size)
    if small.any():
        part = part.subset(np.flatnonzero(~small[part.labels]))
    return model.fit(part).predict(data.features[pred_idx]), bool(small.any())


def _cross_validate(aug: AugmentedDataset, factory, k: int, seed: int):
    data = aug.data
    stratified = can_stratify(data.labels, k)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StratificationWarning)
        folds = kfold_indices(len(data), k, data.labels, seed)
    preds = np.full(len(data), -1, dtype=np.int64)
    fold_preds = parallel_map(lambda f: _fit_predict(factory, data, f[0], f[1]), folds)
    info = {"stratified": stratified, "fold_sizes": [], "folds_without_dummy": 0, "degenerate_folds": 0}
    for (fit_idx, valid_idx), (p, degenerate) in zip(folds, fold_preds):
        preds[valid_idx] = p
        info["degenerate_folds"] += degenerate
        info["fold_sizes"].append(int(valid_idx.size))
        if not np.any(data.labels[fit_idx] == aug.dummy_label):
            info["folds_without_dummy"] += 1
    return preds, info


def cv_relabel(augmented: AugmentedDataset, factory: ClassifierFactory, k: int, seed: int) -> np.ndarray:
    """One out-of-fold prediction per augmented row, using a fresh model per fold."""
    return _cross_validate(augmented, factory, k, seed)[0]


def _holdout_relabel(aug: AugmentedDataset, factory, fraction: float, seed: int):
    data = aug.data
    fit_idx, held = holdout_indices(len(data), fraction, data.labels, seed)
    preds = data.labels.copy()
    preds[held], degenerate = _fit_predict(factory, data, fit_idx, held)
    no_dummy = int(not np.any(data.labels[fit_idx] == aug.dummy_label))
    info = {"stratified": True, "fold_sizes": [int(held.size)], "folds_without_dummy": no_dummy}
    return preds, dict(info, degenerate_folds=int(degenerate))


def _relabel(aug, factory, cfg: RtscvConfig):
    if cfg.mode == "holdout":
        return _holdout_relabel(aug, factory, cfg.holdout_fraction, cfg.seed)
    return _cross_validate(aug, factory, cfg.k, cfg.seed)


def _draw_sample(train: Dataset, test: Dataset, cfg: RtscvConfig):
    if len(train) == 0 or train.n_classes < 1:
        raise DataError("training set is empty")
    if len(test) == 0:
        raise DataError("test set is empty")
    idx = sample_indices(len(test), cfg.c, cfg.seed)
    if idx.size == 0:
        raise DataError(f"sample rate c={cfg.c} yields an empty sample")
    # only the features of the sample are used; its test labels stay unread
    sample = Dataset(test.features[idx], np.zeros(idx.size, dtype=np.int64), 1)
    return idx, augment(train, sample)


def finish(
    train: Dataset,
    aug: AugmentedDataset,
    sample_idx: np.ndarray,
    uu_rows: np.ndarray,
    factory: ClassifierFactory,
    cfg: RtscvConfig,
    preds: np.ndarray,
    diagnostics: dict,
    engine: str,
) -> RtscvOutcome:
    """Shared tail of both engines: label ``X_u`` as dummy, form ``X ∪ X_u`` and fit the rectified model."""
    m = aug.dummy_label
    proto = factory()
    if 0 < uu_rows.size < proto.min_class_size:
        diagnostics["warnings"].append(
            f"|X_u|={uu_rows.size} below the {proto.min_class_size} rows {type(proto).__name__} needs; "
            "dummy class left empty"
        )
        uu_rows = uu_rows[:0]
    rectified = Dataset(
        np.vstack([train.features, aug.data.features[uu_rows]]),
        np.concatenate([train.labels, np.full(uu_rows.size, m, dtype=np.int64)]),
        m + 1,
    )
    model = proto.fit(rectified)
    from_sample = aug.from_sample[uu_rows]
    uu_set = aug.source_index[uu_rows[from_sample]]
    diagnostics.update(
        n_sample=int(sample_idx.size),
        n_uu=int(uu_rows.size),
        n_uu_from_train=int(np.count_nonzero(~from_sample)),
        n_rectified=len(rectified),
    )
    return RtscvOutcome(model, uu_set, rectified, preds, sample_idx, aug, cfg, diagnostics, engine)


def rectify(train: Dataset, test: Dataset, factory: ClassifierFactory, cfg: RtscvConfig) -> RtscvOutcome:
    """Run the full rectification; ``test`` labels are never read."""
    sample_idx, aug = _draw_sample(train, test, cfg)
    preds, info = _relabel(aug, factory, cfg)
    diagnostics = dict(info, warnings=[])
    if info["folds_without_dummy"]:
        diagnostics["warnings"].append(f"{info['folds_without_dummy']} fold(s) trained without dummy rows")
    if info["degenerate_folds"]:
        diagnostics["warnings"].append(f"{info['degenerate_folds']} fold(s) dropped a class too small for the model")
    if not info["stratified"]:
        diagnostics["warnings"].append("unstratified folds (a class smaller than k)")
    flagged = preds == aug.dummy_label
    if cfg.restrict_uu_to_sample:
        flagged &= aug.from_sample
    uu_rows = np.flatnonzero(flagged)
    for w in diagnostics["warnings"]:
        log.warning(w)
    return finish(train, aug, sample_idx, uu_rows, factory, cfg, preds, diagnostics, "rtscv")


# ---------------------------------------------------------------------------
# Hyperparameter searches
# ---------------------------------------------------------------------------


def known_misclassification(train: Dataset, test: Dataset, factory, cfg: RtscvConfig) -> float:
    """Fraction of original training rows predicted as dummy during cross-validation."""
    _, aug = _draw_sample(train, test, cfg)
    preds, _ = _relabel(aug, factory, cfg)
    known = ~aug.from_sample
    return float(np.mean(preds[known] == aug.dummy_label))


def search_sample_rate(
    train: Dataset,
    test: Dataset,
    factory: ClassifierFactory,
    candidate_rates,
    k: int = 3,
    seed: int = 0,
    tolerance: float = 0.005,
):
    """Pick c from the known-data misclassification curve.

    Among candidates whose proxy is within ``tolerance`` of the minimum, the
    largest c wins (more u.u. representatives at equal cost to known data).
    """
    rates = [float(c) for c in candidate_rates]
    if not rates:
        raise DataError("need at least one candidate rate")
    curve = [(c, known_misclassification(train, test, factory, RtscvConfig(c=c, k=k, seed=seed))) for c in rates]
    best = min(v for _, v in curve)
    best_c = max(c for c, v in curve if v <= best + tolerance)
    return best_c, curve


def _validation_split(train: Dataset, fraction: float, seed: int):
    fit_idx, val_idx = holdout_indices(len(train), fraction, train.labels, seed)
    return train.subset(fit_idx), train.subset(val_idx)


def rectified_macro_f(outcome: RtscvOutcome, test: Dataset, extra: Dataset | None = None) -> float:
    """Macro F of the rectified model on the unsampled test rows (plus ``extra`` labelled rows)."""
    rest = np.setdiff1d(np.arange(len(test)), outcome.sample_index)
    x, y = test.features[rest], test.labels[rest]
    if extra is not None:
        x = np.vstack([x, extra.features])
        y = np.concatenate([y, extra.labels])
    return macro_f_measure(y, outcome.rectified_model.predict(x), outcome.n_known + 1)


def search_folds(
    train: Dataset,
    test: Dataset,
    factory: ClassifierFactory,
    c: float,
    candidate_ks,
    seed: int = 0,
    validation_fraction: float = 0.2,
):
    """Score each k by rectified macro F on a held-out training slice plus the unsampled test rows.

    Needs ``test`` labels in the open-set convention (u.u. rows = n_known); this
    is an evaluation-harness search, not something a deployment can run.
    """
    ks = [int(k) for k in candidate_ks]
    if not ks:
        raise DataError("need at least one candidate k")
    fit_part, val_part = _validation_split(train, validation_fraction, seed)
    curve = []
    for k in ks:
        out = rectify(fit_part, test, factory, RtscvConfig(c=c, k=k, seed=seed))
        curve.append((k, rectified_macro_f(out, test, val_part)))
    best = max(v for _, v in curve)
    best_k = min(k for k, v in curve if v == best)
    return best_k, curve


# ---------------------------------------------------------------------------
# Evaluation on the unsampled test rows
# ---------------------------------------------------------------------------


def unsampled_rows(outcome: RtscvOutcome, n_test: int) -> np.ndarray:
    return np.setdiff1d(np.arange(n_test), outcome.sample_index)


def evaluate_model(model: Classifier, test: Dataset, n_known: int, rows=None, openness_value: float = 0.0) -> EvalReport:
    """Score ``model`` on labelled open-set test rows (u.u. truth = ``n_known``).

    The u.u. score for AUROC is the normalized dummy-class score when the model
    has a dummy class, otherwise one minus its top normalized score.
    """
    rows = np.arange(len(test)) if rows is None else np.asarray(rows)
    x, y = test.features[rows], test.labels[rows]
    probs = normalized_scores(model, x)
    pred = probs.argmax(axis=1)
    if model.n_classes_ > n_known:
        uu_score = probs[:, n_known]
    else:
        uu_score = 1.0 - probs.max(axis=1)
    return evaluate(y, pred, n_known, uu_score, openness_value)


def evaluate_rectified(outcome: RtscvOutcome, test: Dataset, openness_value: float = 0.0) -> EvalReport:
    return evaluate_model(
        outcome.rectified_model, test, outcome.n_known, unsampled_rows(outcome, len(test)), openness_value
    )
