"""Gaussian model of the relabelling step: densities, closed-form expectations,
the sufficient conditions for correct relabelling, and Monte-Carlo oracles.

Notation used in names: ``known`` is the class a point is drawn from when it
is a known-class point, ``uu`` is the unknown-unknown class and ``sample`` is
the dummy class built from the test sample. ``mixture_weight`` is a class's
share of the test set, ``train_prior`` its share of the augmented training set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class TheoryError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianClassSpec:
    """Gaussian class with covariance ``variance * I`` (or ``diag(variance)``)."""

    mean: np.ndarray
    variance: float | np.ndarray
    mixture_weight: float = 1.0
    train_prior: float = 0.0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.asarray(self.variance, dtype=float)
        if var.ndim > 1 or (var.ndim == 1 and var.shape != mu.shape):
            raise TheoryError("variance must be a scalar or one value per dimension")
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise TheoryError(f"variance must be positive, got {self.variance}")
        for name in ("mixture_weight", "train_prior"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise TheoryError(f"{name} must lie in [0, 1], got {v}")
        mu.setflags(write=False)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "variance", float(var) if var.ndim == 0 else var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def iso_variance(self) -> float:
        """Isotropic summary: trace(Σ)/d."""
        return float(np.mean(self.variance))

    def diag(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.variance, dtype=float), self.mean.shape)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        x = rng.standard_normal((n, self.dim))
        x *= np.sqrt(self.diag())
        x += self.mean
        return x

    def to_dict(self) -> dict:
        var = self.variance if np.isscalar(self.variance) else list(map(float, self.variance))
        return {
            "mean": self.mean.tolist(),
            "variance": var,
            "mixture_weight": self.mixture_weight,
            "train_prior": self.train_prior,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GaussianClassSpec:
        return cls(d["mean"], d["variance"], d.get("mixture_weight", 1.0), d.get("train_prior", 0.0))


@dataclass(frozen=True)
class TheoremVerdict:
    lhs: float
    rhs: float
    vacuous: bool = False

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    @property
    def satisfied(self) -> bool:
        return self.vacuous or self.margin >= 0


def _check_dims(*specs: GaussianClassSpec) -> int:
    dims = {s.dim for s in specs}
    if len(dims) != 1:
        raise TheoryError(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()


def _as_points(spec: GaussianClassSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x) if x.ndim <= 1 else x
    if spec.dim == 1 and x.ndim == 1 and x.size > 1:
        pts = x.reshape(-1, 1)
    if pts.shape[-1] != spec.dim:
        raise TheoryError(f"point has dimension {pts.shape[-1]}, spec has {spec.dim}")
    return pts


def log_likelihood(spec: GaussianClassSpec, x) -> np.ndarray | float:
    pts = _as_points(spec, x)
    var = spec.diag()
    out = -0.5 * np.sum((pts - spec.mean) ** 2 / var, axis=-1) - 0.5 * np.sum(np.log(2 * np.pi * var))
    return float(out[0]) if np.ndim(x) <= 1 else out


def likelihood(spec: GaussianClassSpec, x):
    """Gaussian density of ``x`` under ``spec``."""
    return np.exp(log_likelihood(spec, x))


def _check_weights(specs) -> None:
    total = sum(s.mixture_weight for s in specs)
    if abs(total - 1.0) > 1e-9:
        raise TheoryError(f"mixture weights sum to {total}, expected 1")


def mixture_likelihood(specs, x):
    """Density of the test-sample mixture: sum of weight * class density, u.u. included."""
    specs = list(specs)
    _check_weights(specs)
    _check_dims(*specs)
    return sum(s.mixture_weight * likelihood(s, x) for s in specs)


def mahalanobis_sq(spec: GaussianClassSpec, x):
    pts = _as_points(spec, x)
    out = np.sum((pts - spec.mean) ** 2 / spec.diag(), axis=-1)
    return float(out[0]) if np.ndim(x) <= 1 else out


def expected_cross_likelihood(source: GaussianClassSpec, target: GaussianClassSpec) -> float:
    """E_{x~source}[L_target(x)] = N(mu_target; mu_source, Σ_source + Σ_target)."""
    _check_dims(source, target)
    var = source.diag() + target.diag()
    delta = target.mean - source.mean
    return float(np.exp(-0.5 * np.sum(delta ** 2 / var) - 0.5 * np.sum(np.log(2 * np.pi * var))))


def mmd_expected(source: GaussianClassSpec, target: GaussianClassSpec) -> float:
    """E_{x~source}[squared Mahalanobis distance to target]."""
    _check_dims(source, target)
    tv = target.diag()
    return float(np.sum(source.diag() / tv) + np.sum((source.mean - target.mean) ** 2 / tv))


def _sqdist(a: GaussianClassSpec, b: GaussianClassSpec) -> float:
    return float(np.sum((a.mean - b.mean) ** 2))


# -- maximum likelihood ----------------------------------------------------


def mle_condition(known_k: GaussianClassSpec, other_i: GaussianClassSpec, d: int | None = None) -> TheoremVerdict:
    """Pairwise condition that keeps a known-class point's own likelihood on top."""
    d = d or _check_dims(known_k, other_i)
    sk, si = known_k.iso_variance, other_i.iso_variance
    rhs = d * (sk + si) * math.log(2 * sk / (sk + si))
    return TheoremVerdict(_sqdist(known_k, other_i), rhs)


def mle_condition_uu(known_k: GaussianClassSpec, uu: GaussianClassSpec, d: int | None = None) -> TheoremVerdict:
    d = d or _check_dims(known_k, uu)
    pk, pu = known_k.mixture_weight, uu.mixture_weight
    if pu <= 0:
        raise TheoryError("u.u. mixture weight must be > 0")
    if pk >= 1:
        raise TheoryError("known mixture weight must be < 1")
    sk, su = known_k.iso_variance, uu.iso_variance
    rhs = 2 * math.log((1 - pk) / pu) + d * math.log(2 * su / (sk + su))
    return TheoremVerdict(_sqdist(known_k, uu) / (sk + su), rhs)


# -- Bayes classifier -------------------------------------------------------


def _check_prior(p: float, name: str) -> None:
    if not 0 < p < 1:
        raise TheoryError(f"{name} must lie in (0, 1), got {p}")


def bayes_condition(
    known_k: GaussianClassSpec,
    other_i: GaussianClassSpec,
    sample_prior: float,
    known_prior: float | None = None,
    d: int | None = None,
) -> TheoremVerdict:
    d = d or _check_dims(known_k, other_i)
    known_prior = known_k.train_prior if known_prior is None else known_prior
    _check_prior(sample_prior, "sample_prior")
    _check_prior(known_prior, "known_prior")
    sk, si = known_k.iso_variance, other_i.iso_variance
    rhs = 2 * math.log(sample_prior / known_prior) + d * math.log(2 * sk / (sk + si))
    return TheoremVerdict(_sqdist(known_k, other_i) / (sk + si), rhs)


def bayes_condition_uu(
    known_k: GaussianClassSpec,
    uu: GaussianClassSpec,
    sample_prior: float,
    known_prior: float | None = None,
    d: int | None = None,
) -> TheoremVerdict:
    """Condition for a u.u. point to stay in the dummy class under a Bayes rule.

    When ``known_prior - sample_prior * P(known)`` is not positive the
    competing term is non-positive and the conclusion holds outright; the
    verdict is then flagged ``vacuous`` with ``rhs = -inf``.
    """
    d = d or _check_dims(known_k, uu)
    known_prior = known_k.train_prior if known_prior is None else known_prior
    _check_prior(sample_prior, "sample_prior")
    _check_prior(known_prior, "known_prior")
    denom = sample_prior * uu.mixture_weight
    if denom <= 0:
        raise TheoryError("sample_prior * P(uu) must be > 0")
    sk, su = known_k.iso_variance, uu.iso_variance
    lhs = _sqdist(known_k, uu) / (sk + su)
    numer = known_prior - sample_prior * known_k.mixture_weight
    if numer <= 0:
        return TheoremVerdict(lhs, -math.inf, vacuous=True)
    rhs = 2 * math.log(numer / denom) + d * math.log(2 * su / (sk + su))
    return TheoremVerdict(lhs, rhs)


# -- minimum Mahalanobis distance -------------------------------------------


def mmd_condition(known_k: GaussianClassSpec, sample_s: GaussianClassSpec, d: int | None = None) -> TheoremVerdict:
    d = d or _check_dims(known_k, sample_s)
    sk, ss = known_k.iso_variance, sample_s.iso_variance
    return TheoremVerdict(_sqdist(known_k, sample_s), d * ss * (1 - sk / ss))


def mmd_condition_uu(
    uu: GaussianClassSpec, known_k: GaussianClassSpec, sample_s: GaussianClassSpec, d: int | None = None
) -> TheoremVerdict:
    d = d or _check_dims(uu, known_k, sample_s)
    su, sk, ss = uu.iso_variance, known_k.iso_variance, sample_s.iso_variance
    lhs = _sqdist(uu, known_k) / sk - _sqdist(uu, sample_s) / ss
    return TheoremVerdict(lhs, d * (su / ss - su / sk))


def fit_sample_mixture(known, uu: GaussianClassSpec) -> GaussianClassSpec:
    """Moment-matched isotropic Gaussian for the test-sample mixture.

    Mean is the weighted mean; variance is trace(mixture covariance)/d.
    """
    comps = list(known) + [uu]
    _check_weights(comps)
    d = _check_dims(*comps)
    w = np.array([c.mixture_weight for c in comps])
    means = np.array([c.mean for c in comps])
    mu = w @ means
    spread = np.sum((means - mu) ** 2, axis=1)
    var = float(w @ np.array([c.iso_variance for c in comps]) + (w @ spread) / d)
    prior = sum(c.train_prior for c in known)
    return GaussianClassSpec(mu, var, 1.0, max(0.0, min(1.0, 1.0 - prior)))


# ---------------------------------------------------------------------------
# Spec families and Monte-Carlo verification
# ---------------------------------------------------------------------------


@dataclass
class SpecFamily:
    """Known classes plus one u.u. class, with test shares and training priors.

    ``sample_prior`` is the dummy class's share of the augmented training set;
    each known spec carries its own ``train_prior``.
    """

    known: list[GaussianClassSpec]
    uu: GaussianClassSpec
    sample_prior: float
    name: str = ""

    @property
    def dim(self) -> int:
        return self.uu.dim

    @property
    def components(self) -> list[GaussianClassSpec]:
        return self.known + [self.uu]

    def sample_class(self) -> GaussianClassSpec:
        return fit_sample_mixture(self.known, self.uu)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "sample_prior": self.sample_prior,
            "known": [s.to_dict() for s in self.known],
            "uu": self.uu.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SpecFamily:
        return cls(
            [GaussianClassSpec.from_dict(s) for s in d["known"]],
            GaussianClassSpec.from_dict(d["uu"]),
            float(d["sample_prior"]),
            d.get("name", ""),
        )


def random_family(rng: np.random.Generator, d: int, m: int | None = None, name: str = "") -> SpecFamily:
    """Random isotropic family; spreads vary over orders of magnitude so both verdicts occur."""
    m = m or int(rng.integers(2, 5))
    spread = float(np.exp(rng.uniform(np.log(0.3), np.log(12.0))))
    means = rng.normal(0.0, spread, (m + 1, d))
    variances = np.exp(rng.uniform(np.log(0.3), np.log(3.0), m + 1))
    weights = rng.dirichlet(np.full(m + 1, 2.0))
    sample_prior = float(rng.uniform(0.03, 0.3))
    known_share = rng.dirichlet(np.full(m, 3.0)) * (1 - sample_prior)
    known = [GaussianClassSpec(means[i], variances[i], weights[i], known_share[i]) for i in range(m)]
    uu = GaussianClassSpec(means[m], variances[m], weights[m], 0.0)
    return SpecFamily(known, uu, sample_prior, name)


@dataclass
class ConditionCheck:
    """One theorem case for one focal known class, with its Monte-Carlo check."""

    theorem: str
    case: str
    k: int
    verdict: TheoremVerdict
    mc_diff: float
    mc_se: float
    exact_diff: float
    extra: dict = field(default_factory=dict)

    @property
    def conclusion_holds(self) -> bool:
        """Conclusion not violated beyond three standard errors."""
        return self.mc_diff >= -3.0 * self.mc_se

    @property
    def agrees(self) -> bool:
        return (not self.verdict.satisfied) or self.conclusion_holds


def _all_pairs(verdicts) -> TheoremVerdict:
    # a "for all i" condition holds iff its tightest pair does
    return min(verdicts, key=lambda v: v.margin)


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def _sq_mahalanobis_matrix(specs, x) -> np.ndarray:
    """Column j holds the squared Mahalanobis distance of each row of ``x`` to ``specs[j]``.

    Expanded as x²·(1/v) − 2x·(μ/v) + μ²·(1/v) so the work is two matrix products.
    """
    inv = np.column_stack([1.0 / s.diag() for s in specs])
    mu = np.column_stack([s.mean for s in specs])
    d2 = (x * x) @ inv
    d2 -= 2.0 * (x @ (mu * inv))
    d2 += np.sum(mu * mu * inv, axis=0)
    return np.maximum(d2, 0.0, out=d2)


def _lik_from_sq(specs, d2: np.ndarray) -> np.ndarray:
    log_norm = np.array([np.sum(np.log(2 * np.pi * s.diag())) for s in specs])
    out = d2 + log_norm
    out *= -0.5
    return np.exp(out, out=out)


def verify_family(family: SpecFamily, n_samples: int = 1_000_000, seed: int = 0) -> list[ConditionCheck]:
    """Evaluate every condition for every focal known class and check its conclusion by simulation.

    Draws are shared: one batch from each known class and one from the u.u.
    class, reused by all three theorems.
    """
    known, uu = family.known, family.uu
    comps = family.components
    d = family.dim
    w = np.array([c.mixture_weight for c in comps])
    ps = family.sample_prior
    s_cls = family.sample_class()
    rng = np.random.default_rng(seed)
    checks: list[ConditionCheck] = []

    x_uu = uu.sample(n_samples, rng)
    md_uu = _sq_mahalanobis_matrix(comps + [s_cls], x_uu)
    lik_uu = _lik_from_sq(comps, md_uu[:, :-1])
    ls_uu = lik_uu @ w
    md_uu_s = md_uu[:, -1]

    for k, spec_k in enumerate(known):
        x_k = spec_k.sample(n_samples, rng)
        md_k = _sq_mahalanobis_matrix(comps + [s_cls], x_k)
        lik_k = _lik_from_sq(comps, md_k[:, :-1])
        ls_k = lik_k @ w
        pk = spec_k.train_prior

        # maximum likelihood: E[L_k] >= E[L_s] for x ~ X_k, and E[L_s] >= E[L_k] for x ~ X_u
        v = _all_pairs([mle_condition(spec_k, o, d) for o in comps])
        exact = expected_cross_likelihood(spec_k, spec_k) - sum(
            wi * expected_cross_likelihood(spec_k, o) for wi, o in zip(w, comps)
        )
        checks.append(ConditionCheck("mle", "known", k, v, *_mean_se(lik_k[:, k] - ls_k), exact))
        v = mle_condition_uu(spec_k, uu, d)
        exact = sum(wi * expected_cross_likelihood(uu, o) for wi, o in zip(w, comps)) - expected_cross_likelihood(
            uu, spec_k
        )
        checks.append(ConditionCheck("mle", "uu", k, v, *_mean_se(ls_uu - lik_uu[:, k]), exact))

        # Bayes rule on unnormalized posteriors; the pairwise condition ranges over every class, k included
        v = _all_pairs([bayes_condition(spec_k, o, ps, pk, d) for o in comps])
        exact = pk * expected_cross_likelihood(spec_k, spec_k) - ps * sum(
            wi * expected_cross_likelihood(spec_k, o) for wi, o in zip(w, comps)
        )
        checks.append(ConditionCheck("bayes", "known", k, v, *_mean_se(pk * lik_k[:, k] - ps * ls_k), exact))
        v = bayes_condition_uu(spec_k, uu, ps, pk, d)
        exact = ps * sum(wi * expected_cross_likelihood(uu, o) for wi, o in zip(w, comps)) - pk * (
            expected_cross_likelihood(uu, spec_k)
        )
        checks.append(ConditionCheck("bayes", "uu", k, v, *_mean_se(ps * ls_uu - pk * lik_uu[:, k]), exact))

        # Mahalanobis: E[D2(x, s)] - E[D2(x, k)] >= 0 for x ~ X_k; reversed for x ~ X_u
        v = mmd_condition(spec_k, s_cls, d)
        diff = md_k[:, -1] - md_k[:, k]
        exact = mmd_expected(spec_k, s_cls) - mmd_expected(spec_k, spec_k)
        checks.append(ConditionCheck("mmd", "known", k, v, *_mean_se(diff), exact))
        v = mmd_condition_uu(uu, spec_k, s_cls, d)
        diff = md_uu[:, k] - md_uu_s
        exact = mmd_expected(uu, spec_k) - mmd_expected(uu, s_cls)
        checks.append(ConditionCheck("mmd", "uu", k, v, *_mean_se(diff), exact))
    return checks
