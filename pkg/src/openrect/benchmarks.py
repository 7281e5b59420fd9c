"""Shipped synthetic Gaussian benchmarks."""

from __future__ import annotations

import math

from .dataset import GaussianComponent, GaussianMixtureSpec


def ring_benchmark(
    n_known: int = 10,
    radius: float = 6.0,
    known_variance: float = 0.5,
    uu_mean=(15.0, 15.0),
    uu_variance: float = 1.0,
    seed: int = 0,
) -> GaussianMixtureSpec:
    """Known classes evenly spaced on a circle plus one u.u. component (the last class id)."""
    w = 1.0 / (n_known + 1)
    comps = [
        GaussianComponent(
            (radius * math.cos(2 * math.pi * i / n_known), radius * math.sin(2 * math.pi * i / n_known)),
            known_variance,
            w,
            i,
        )
        for i in range(n_known)
    ]
    comps.append(GaussianComponent(tuple(uu_mean), uu_variance, 1.0 - w * n_known, n_known))
    return GaussianMixtureSpec(tuple(comps), seed)


def csi_benchmark(n_uu_clusters: int = 1, distance: float = 100.0, n_known: int = 10, seed: int = 0) -> GaussianMixtureSpec:
    """Ring of known classes with one or several far, compact u.u. clusters sharing one class id.

    With two clusters they sit on opposite sides of the ring, so a single
    seeded u.u. center lands between them.
    """
    base = ring_benchmark(n_known=n_known, seed=seed)
    known = list(base.components[:n_known])
    w_known = 1.0 / (n_known + 1)
    w_uu = (1.0 - w_known * n_known) / n_uu_clusters
    uu = []
    for j in range(n_uu_clusters):
        ang = math.pi / 4 + 2 * math.pi * j / n_uu_clusters
        uu.append(GaussianComponent((distance * math.cos(ang), distance * math.sin(ang)), 1.0, w_uu, n_known))
    return GaussianMixtureSpec(tuple(known + uu), seed)
