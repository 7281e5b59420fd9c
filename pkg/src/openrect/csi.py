"""Clustering with side information: Seeded-KMeans instead of cross-validation.

The test sample is clustered into ``M + 1`` groups with Lloyd iterations
seeded at the ``M`` known-class means and at the sample's own mean. Each
cluster inherits the label of its seed; the cluster seeded by the sample mean
is the u.u. cluster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, DataError
from .rtscv import ClassifierFactory, RtscvConfig, RtscvOutcome, _draw_sample, finish


@dataclass(frozen=True)
class SeededKmeansResult:
    assignments: np.ndarray
    centers: np.ndarray
    iterations: int
    converged: bool
    inertia_trace: tuple[float, ...] = ()

    @property
    def uu_cluster(self) -> int:
        return self.centers.shape[0] - 1


def _assign(x: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = np.sum(x ** 2, axis=1)[:, None] - 2 * x @ centers.T + np.sum(centers ** 2, axis=1)[None, :]
    d2 = np.maximum(d2, 0.0)
    lab = np.argmin(d2, axis=1)
    return lab, d2[np.arange(x.shape[0]), lab]


def seeded_kmeans(sample, known_class_means, max_iter: int = 300, tol: float = 1e-6) -> SeededKmeansResult:
    """Lloyd's algorithm from the prescribed seeds; Euclidean distance, ties to the lowest cluster id.

    Stops when the largest center move is below ``tol`` times the scale of the
    centers (at least 1). Empty clusters keep their previous center.
    """
    x = sample.features if isinstance(sample, Dataset) else np.asarray(sample, dtype=float)
    seeds = np.atleast_2d(np.asarray(known_class_means, dtype=float))
    if x.shape[0] == 0:
        raise DataError("sample is empty")
    if seeds.shape[0] < 1 or seeds.shape[1] != x.shape[1]:
        raise DataError("need at least one known-class mean with the sample's dimension")
    if max_iter < 0:
        raise DataError("max_iter must be >= 0")
    centers = np.vstack([seeds, x.mean(axis=0)])
    k = centers.shape[0]
    scale = max(1.0, float(np.abs(centers).max()))
    converged = False
    it = 0
    inertia = []
    for it in range(1, max_iter + 1):
        lab, dist = _assign(x, centers)
        inertia.append(float(dist.sum()))
        new = centers.copy()
        for c in range(k):
            members = lab == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new - centers, axis=1)))
        centers = new
        if shift < tol * scale:
            converged = True
            break
    lab, dist = _assign(x, centers)
    inertia.append(float(dist.sum()))
    return SeededKmeansResult(lab, centers, it, converged, tuple(inertia))


def csi_rectify(train: Dataset, test: Dataset, factory: ClassifierFactory, cfg: RtscvConfig, max_iter: int = 300, tol: float = 1e-6) -> RtscvOutcome:
    """Same contract as :func:`openrect.rtscv.rectify` with clustering in place of cross-validation."""
    sample_idx, aug = _draw_sample(train, test, cfg)
    counts = train.class_counts()
    present = np.flatnonzero(counts)
    means = np.array([train.features[train.labels == c].mean(axis=0) for c in present])
    sample_rows = aug.sample_rows
    result = seeded_kmeans(aug.data.features[sample_rows], means, max_iter, tol)
    cluster_label = np.append(present, aug.dummy_label)

    preds = aug.data.labels.copy()
    preds[sample_rows] = cluster_label[result.assignments]
    uu_rows = sample_rows[result.assignments == result.uu_cluster]
    diagnostics = {
        "iterations": result.iterations,
        "converged": result.converged,
        "warnings": [] if result.converged else [f"seeded k-means stopped at max_iter={max_iter}"],
    }
    return finish(train, aug, sample_idx, uu_rows, factory, cfg, preds, diagnostics, "csi")
