"""Scatter matrices and the J1 trace criterion, plus separability sweeps.

Two conventions, selected explicitly by ``mode``:

* ``"known"``: reference point is the unweighted mean of the known-class
  means, within-class scatter is the weighted sum of known covariances.
* ``"uu"``: reference point is the u.u. mean, within-class scatter is the
  u.u. covariance alone.

In both modes the class weights are renormalized over the known classes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset, GaussianComponent, GaussianMixtureSpec, generate_gaussian, make_scenario
from .rtscv import RtscvConfig, evaluate_rectified, rectify

log = logging.getLogger(__name__)

MODES = ("known", "uu")


class SingularScatterError(ValueError):
    pass


@dataclass(frozen=True)
class ScatterSummary:
    s_b: np.ndarray
    s_w: np.ndarray
    j1: float
    mode: str


def between_scatter(class_means, weights, reference) -> np.ndarray:
    means = np.atleast_2d(np.asarray(class_means, dtype=float))
    w = np.asarray(weights, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if ref.shape != means.shape[1:] or w.shape != means.shape[:1]:
        raise ValueError("dimension mismatch between means, weights and reference")
    diff = means - ref
    return (w[:, None] * diff).T @ diff


def within_scatter(class_covs, weights) -> np.ndarray:
    covs = np.asarray(class_covs, dtype=float)
    w = np.asarray(weights, dtype=float)
    if covs.ndim != 3 or covs.shape[1] != covs.shape[2] or w.shape != covs.shape[:1]:
        raise ValueError("class_covs must be (n, d, d) with one weight per class")
    return np.einsum("i,ijk->jk", w, covs)


def j1(s_b: np.ndarray, s_w: np.ndarray) -> float:
    tw = float(np.trace(s_w))
    if tw <= 0:
        raise SingularScatterError("within-class scatter has zero trace")
    return 1.0 + float(np.trace(s_b)) / tw


def _summary(means, covs, weights, uu_mean, uu_cov, mode) -> ScatterSummary:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    if mode == "known":
        s_b = between_scatter(means, w, np.mean(means, axis=0))
        s_w = within_scatter(covs, w)
    else:
        s_b = between_scatter(means, w, uu_mean)
        s_w = np.asarray(uu_cov, dtype=float)
    return ScatterSummary(s_b, s_w, j1(s_b, s_w), mode)


def scatter_from_spec(spec: GaussianMixtureSpec, uu_class_ids, mode: str) -> ScatterSummary:
    """Scatter of the generating distribution; one component per class assumed."""
    uu_ids = set(uu_class_ids)
    d = spec.dim
    known = [c for c in spec.components if c.class_id not in uu_ids]
    uu = [c for c in spec.components if c.class_id in uu_ids]
    means = np.array([c.mean for c in known])
    covs = np.array([c.variance * np.eye(d) for c in known])
    uu_mean = uu_cov = None
    if mode == "uu":
        if len(uu) != 1:
            raise ValueError("u.u. mode needs exactly one u.u. component")
        uu_mean, uu_cov = np.asarray(uu[0].mean), uu[0].variance * np.eye(d)
    return _summary(means, covs, [c.weight for c in known], uu_mean, uu_cov, mode)


def scatter_from_data(data: Dataset, uu_class_ids, mode: str) -> ScatterSummary:
    """Empirical scatter with population (divide-by-n) covariances."""
    uu_ids = sorted(set(uu_class_ids))
    present = np.unique(data.labels)
    known = [c for c in present if c not in uu_ids]

    def moments(mask):
        x = data.features[mask]
        return x.mean(axis=0), np.cov(x, rowvar=False, bias=True).reshape(data.dim, data.dim)

    stats = [moments(data.labels == c) for c in known]
    means = np.array([s[0] for s in stats])
    covs = np.array([s[1] for s in stats])
    weights = [np.count_nonzero(data.labels == c) for c in known]
    uu_mean = uu_cov = None
    if mode == "uu":
        uu_mean, uu_cov = moments(np.isin(data.labels, uu_ids))
    return _summary(means, covs, weights, uu_mean, uu_cov, mode)


def scaled_spec(base: GaussianMixtureSpec, uu_ids, mode: str, axis: str, level: float) -> GaussianMixtureSpec:
    known = [c for c in base.components if c.class_id not in uu_ids]
    centroid = np.mean([c.mean for c in known], axis=0)
    out = []
    for c in base.components:
        target = (c.class_id in uu_ids) == (mode == "uu")
        if not target:
            out.append(c)
        elif axis == "mean-spread":
            mean = centroid + level * (np.asarray(c.mean) - centroid)
            out.append(replace(c, mean=tuple(mean)))
        else:
            out.append(replace(c, variance=c.variance * level))
    return GaussianMixtureSpec(tuple(out), base.seed)


@dataclass(frozen=True)
class SweepPoint:
    level: float
    j1: float | None
    accuracy: float | None
    note: str = ""


def sweep_separability(
    base_spec: GaussianMixtureSpec,
    mode: str,
    axis: str,
    levels,
    factory,
    cfg: RtscvConfig,
    uu_class_ids=None,
    n_per_component: int = 200,
    split_fraction: float = 0.5,
) -> list[SweepPoint]:
    """Regenerate data at each level, rectify, and pair achieved J1 with overall accuracy.

    ``axis`` is ``"mean-spread"`` (scale means about the known centroid) or
    ``"covariance"`` (scale variances); ``mode`` picks which classes are
    scaled and which J1 convention is reported.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if axis not in ("mean-spread", "covariance"):
        raise ValueError(f"axis must be 'mean-spread' or 'covariance', got {axis!r}")
    levels = list(levels)
    if not levels:
        raise ValueError("need at least one level")
    uu_ids = {base_spec.n_classes - 1} if uu_class_ids is None else set(uu_class_ids)
    points = []
    for level in levels:
        try:
            spec = scaled_spec(base_spec, uu_ids, mode, axis, float(level))
        except ValueError as exc:
            points.append(SweepPoint(float(level), None, None, f"invalid level: {exc}"))
            continue
        full = generate_gaussian(spec, n_per_component)
        try:
            score = scatter_from_data(full, uu_ids, mode).j1
        except SingularScatterError as exc:
            log.warning("level %s skipped: %s", level, exc)
            points.append(SweepPoint(float(level), None, None, str(exc)))
            continue
        scen = make_scenario(full, uu_ids, split_fraction, cfg.seed)
        out = rectify(scen.train, scen.test, factory, cfg)
        report = evaluate_rectified(out, scen.test)
        points.append(SweepPoint(float(level), score, report.overall_acc))
    return points
