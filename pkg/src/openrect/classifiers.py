"""Base classifiers behind one fit/scores/predict interface.

Every model is trained on a :class:`~openrect.dataset.Dataset` and learns the
full label space ``0..n_classes-1`` even when some classes have no rows; such
empty classes score ``-inf`` and are never predicted. Ties in ``predict`` go to
the smallest class id (``np.argmax`` semantics).

A *classifier factory* is any zero-argument callable returning an unfitted
model, e.g. ``GDA`` or ``functools.partial(LinearSVM, lam=1e-3)``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, ClassVar

import numpy as np

from .dataset import Dataset


class ClassifierError(ValueError):
    pass


class InsufficientDataError(ClassifierError):
    pass


class NotFittedError(ClassifierError):
    pass


_REGISTRY: dict[str, type[Classifier]] = {}


class Classifier:
    kind: ClassVar[str]
    # smallest non-empty class the model can be fit on
    min_class_size: ClassVar[int] = 1

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if "kind" in cls.__dict__:
            _REGISTRY[cls.kind] = cls

    n_classes_: int | None = None
    dim_: int | None = None
    present_: np.ndarray | None = None

    def fit(self, data: Dataset) -> Classifier:
        raise NotImplementedError

    def _raw_scores(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_x(self, x) -> np.ndarray:
        if self.n_classes_ is None:
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.dim_:
            raise ClassifierError(f"expected {self.dim_} features, got {x.shape[1]}")
        return x

    def scores(self, x) -> np.ndarray:
        """Per-class scores, higher means more confident; shape ``(n, n_classes)``."""
        s = self._raw_scores(self._check_x(x))
        s[:, ~self.present_] = -np.inf
        return s

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.scores(x), axis=1)

    def _begin_fit(self, data: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        counts = data.class_counts()
        if len(data) == 0:
            raise InsufficientDataError("cannot fit on an empty dataset")
        small = np.flatnonzero((counts > 0) & (counts < self.min_class_size))
        if small.size:
            raise InsufficientDataError(
                f"class {int(small[0])} has {int(counts[small[0]])} sample(s); "
                f"{type(self).__name__} needs at least {self.min_class_size}"
            )
        self.n_classes_ = data.n_classes
        self.dim_ = data.dim
        self.present_ = counts > 0
        return data.features, data.labels, counts

    # -- serialization ----------------------------------------------------

    def get_params(self) -> dict:
        return {}

    def _state(self) -> dict:
        return {}

    def _load_state(self, state: dict) -> None:
        pass

    def to_dict(self) -> dict:
        if self.n_classes_ is None:
            raise NotFittedError("only fitted models are serialized")
        state = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self._state().items()}
        return {
            "kind": self.kind,
            "params": self.get_params(),
            "n_classes": self.n_classes_,
            "dim": self.dim_,
            "present": self.present_.tolist(),
            "state": state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Classifier:
        model_cls = _REGISTRY[d["kind"]]
        model = model_cls(**d["params"])
        model.n_classes_ = int(d["n_classes"])
        model.dim_ = int(d["dim"])
        model.present_ = np.asarray(d["present"], dtype=bool)
        model._load_state(d["state"])
        return model


def normalized_scores(model: Classifier, x) -> np.ndarray:
    """Softmax-normalize score rows (exact posteriors for GDA)."""
    s = model.scores(x)
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def save_model(model: Classifier, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1, sort_keys=True))


def load_model(path) -> Classifier:
    return Classifier.from_dict(json.loads(Path(path).read_text()))


def make_classifier(kind: str, **params) -> Callable[[], Classifier]:
    """Factory for a registered model kind with fixed hyperparameters."""
    if kind not in _REGISTRY:
        raise ClassifierError(f"unknown classifier kind {kind!r}; choose from {sorted(_REGISTRY)}")
    cls = _REGISTRY[kind]
    cls(**params)  # fail early on bad hyperparameters

    def factory() -> Classifier:
        return cls(**params)

    factory.kind = kind
    factory.params = dict(params)
    return factory


# ---------------------------------------------------------------------------
# Gaussian discriminant analysis
# ---------------------------------------------------------------------------


class GDA(Classifier):
    """Gaussian discriminant analysis with isotropic or diagonal class covariances.

    Scores are ``log L_i(x) + log prior_i``; the evidence term shared by all
    classes is omitted, so ``normalized_scores`` gives exact posteriors.
    """

    kind = "gda"
    min_class_size = 2

    def __init__(self, mode: str = "isotropic"):
        if mode not in ("isotropic", "diagonal"):
            raise ClassifierError(f"mode must be 'isotropic' or 'diagonal', got {mode!r}")
        self.mode = mode

    def get_params(self):
        return {"mode": self.mode}

    def fit(self, data: Dataset) -> GDA:
        x, y, counts = self._begin_fit(data)
        k, d = data.n_classes, data.dim
        self.variance_floor_ = 1e-6 * (float(x.var(axis=0).mean()) + 1e-12)
        self.means_ = np.zeros((k, d))
        self.variances_ = np.ones((k, d))
        for c in np.flatnonzero(counts):
            xc = x[y == c]
            self.means_[c] = xc.mean(axis=0)
            v = xc.var(axis=0)
            if self.mode == "isotropic":
                v = np.full(d, v.mean())
            self.variances_[c] = np.maximum(v, self.variance_floor_)
        with np.errstate(divide="ignore"):
            self.log_priors_ = np.log(counts / counts.sum())
        return self

    @property
    def priors_(self) -> np.ndarray:
        return np.exp(self.log_priors_)

    def _raw_scores(self, x):
        out = np.empty((x.shape[0], self.n_classes_))
        for c in range(self.n_classes_):
            var = self.variances_[c]
            out[:, c] = (
                -0.5 * np.sum((x - self.means_[c]) ** 2 / var, axis=1)
                - 0.5 * np.sum(np.log(2 * np.pi * var))
                + self.log_priors_[c]
            )
        return out

    def _state(self):
        return {
            "means": self.means_,
            "variances": self.variances_,
            "log_priors": [v if np.isfinite(v) else None for v in self.log_priors_],
            "variance_floor": self.variance_floor_,
        }

    def _load_state(self, s):
        self.means_ = np.asarray(s["means"], dtype=float)
        self.variances_ = np.asarray(s["variances"], dtype=float)
        self.log_priors_ = np.array([-np.inf if v is None else v for v in s["log_priors"]], dtype=float)
        self.variance_floor_ = float(s["variance_floor"])


def gda_fit(train: Dataset, mode: str = "isotropic") -> GDA:
    return GDA(mode).fit(train)


# ---------------------------------------------------------------------------
# Linear SVM, one-vs-rest, Pegasos
# ---------------------------------------------------------------------------


class LinearSVM(Classifier):
    """One-vs-rest linear SVM trained by stochastic subgradient descent.

    Step size ``1/(lam*t)`` with the Pegasos projection onto the ball of
    radius ``1/sqrt(lam)``. Features are standardized internally and a
    constant feature stands in for the bias.
    """

    kind = "svm"

    def __init__(self, lam: float = 1e-4, epochs: int = 10, seed: int = 0, batch_size: int = 1):
        if not lam > 0:
            raise ClassifierError(f"regularizer lam must be > 0, got {lam}")
        if epochs < 1 or batch_size < 1:
            raise ClassifierError("epochs and batch_size must be >= 1")
        self.lam = float(lam)
        self.epochs = int(epochs)
        self.seed = int(seed)
        self.batch_size = int(batch_size)

    def get_params(self):
        return {"lam": self.lam, "epochs": self.epochs, "seed": self.seed, "batch_size": self.batch_size}

    def _design(self, x):
        z = (x - self.center_) / self.scale_
        return np.hstack([z, np.ones((z.shape[0], 1))])

    def fit(self, data: Dataset) -> LinearSVM:
        x, y, counts = self._begin_fit(data)
        if np.count_nonzero(counts) < 2:
            raise InsufficientDataError("SVM needs at least two classes with data")
        self.center_ = x.mean(axis=0)
        sd = x.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        z = self._design(x)
        n, k = z.shape[0], data.n_classes
        targets = np.where(y[:, None] == np.arange(k)[None, :], 1.0, -1.0)

        rng = np.random.default_rng(self.seed)
        w = np.zeros((k, z.shape[1]))
        radius = 1.0 / math.sqrt(self.lam)
        b = self.batch_size
        t = 0
        self.objective_trace_ = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, b):
                batch = order[start:start + b]
                t += 1
                eta = 1.0 / (self.lam * t)
                zb, tb = z[batch], targets[batch]
                active = (tb * (zb @ w.T)) < 1.0
                grad_hinge = (active * tb).T @ zb / len(batch)
                w *= 1.0 - eta * self.lam
                w += eta * grad_hinge
                norms = np.linalg.norm(w, axis=1, keepdims=True)
                w *= np.minimum(1.0, radius / np.maximum(norms, 1e-300))
            margins = targets * (z @ w.T)
            obj = 0.5 * self.lam * np.sum(w * w) + np.maximum(0.0, 1.0 - margins).mean(axis=0).sum()
            self.objective_trace_.append(float(obj))
        self.weights_ = w
        return self

    def _raw_scores(self, x):
        return self._design(x) @ self.weights_.T

    def _state(self):
        return {"center": self.center_, "scale": self.scale_, "weights": self.weights_}

    def _load_state(self, s):
        self.center_ = np.asarray(s["center"], dtype=float)
        self.scale_ = np.asarray(s["scale"], dtype=float)
        self.weights_ = np.asarray(s["weights"], dtype=float)


def svm_fit(train: Dataset, lam: float = 1e-4, epochs: int = 10, seed: int = 0) -> LinearSVM:
    return LinearSVM(lam, epochs, seed).fit(train)


# ---------------------------------------------------------------------------
# k nearest neighbours
# ---------------------------------------------------------------------------


class KNN(Classifier):
    """Majority vote among the ``k`` Euclidean nearest training rows.

    Equal distances are ordered by training-row index; vote ties go to the
    smallest class id. Scores are vote fractions.
    """

    kind = "knn"

    def __init__(self, k: int = 5, chunk: int = 2048):
        if k < 1:
            raise ClassifierError("k must be >= 1")
        self.k = int(k)
        self.chunk = int(chunk)

    def get_params(self):
        return {"k": self.k}

    def fit(self, data: Dataset) -> KNN:
        x, y, _ = self._begin_fit(data)
        if self.k > len(data):
            raise ClassifierError(f"k={self.k} exceeds {len(data)} training rows")
        self.x_ = x.copy()
        self.y_ = y.copy()
        return self

    def neighbors(self, x) -> np.ndarray:
        x = self._check_x(x)
        sq = np.sum(self.x_ ** 2, axis=1)
        out = np.empty((x.shape[0], self.k), dtype=np.int64)
        for s in range(0, x.shape[0], self.chunk):
            q = x[s:s + self.chunk]
            d2 = np.sum(q ** 2, axis=1)[:, None] - 2 * q @ self.x_.T + sq[None, :]
            out[s:s + self.chunk] = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        return out

    def _raw_scores(self, x):
        nb = self.y_[self.neighbors(x)]
        votes = np.zeros((x.shape[0], self.n_classes_))
        np.add.at(votes, (np.repeat(np.arange(x.shape[0]), self.k), nb.ravel()), 1.0)
        return votes / self.k

    def _state(self):
        return {"x": self.x_, "y": self.y_}

    def _load_state(self, s):
        self.x_ = np.asarray(s["x"], dtype=float).reshape(-1, self.dim_)
        self.y_ = np.asarray(s["y"], dtype=np.int64)


def knn_predict(model: KNN, x) -> np.ndarray:
    return model.predict(x)


# ---------------------------------------------------------------------------
# CART decision tree
# ---------------------------------------------------------------------------


def _gini_from_counts(counts: np.ndarray) -> np.ndarray:
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / n[..., None]
    return np.where(n > 0, 1.0 - np.sum(p * p, axis=-1), 0.0)


class DecisionTree(Classifier):
    """CART with Gini impurity and an exhaustive midpoint threshold scan.

    Every internal node's subtree has strictly lower weighted impurity than
    the node itself. Usually the split alone achieves that; a zero-gain
    split is tried only when no split improves the node, and is pruned
    back unless its children make up the difference.
    """

    kind = "tree"

    def __init__(self, max_depth: int = 8, min_leaf: int = 1):
        if max_depth < 0 or min_leaf < 1:
            raise ClassifierError("max_depth must be >= 0 and min_leaf >= 1")
        self.max_depth = int(max_depth)
        self.min_leaf = int(min_leaf)

    def get_params(self):
        return {"max_depth": self.max_depth, "min_leaf": self.min_leaf}

    def fit(self, data: Dataset) -> DecisionTree:
        x, y, _ = self._begin_fit(data)
        if len(data) < self.min_leaf:
            raise ClassifierError(f"{len(data)} rows is fewer than min_leaf={self.min_leaf}")
        self.feature_, self.threshold_, self.left_, self.right_, self.value_ = [], [], [], [], []
        onehot = np.eye(data.n_classes)[y]
        self._grow(x, onehot, 0)
        self.feature_ = np.array(self.feature_, dtype=np.int64)
        self.threshold_ = np.array(self.threshold_, dtype=float)
        self.left_ = np.array(self.left_, dtype=np.int64)
        self.right_ = np.array(self.right_, dtype=np.int64)
        self.value_ = np.array(self.value_, dtype=float)
        return self

    def _new_node(self, counts) -> int:
        self.feature_.append(-1)
        self.threshold_.append(0.0)
        self.left_.append(-1)
        self.right_.append(-1)
        self.value_.append(counts)
        return len(self.value_) - 1

    def _best_split(self, x, onehot):
        """Lowest weighted-Gini split as ``(impurity, feature, threshold)``, or None.

        Only splits at least as good as the parent are considered; ties on
        impurity go to the lowest feature index, then the lowest threshold.
        """
        n = x.shape[0]
        parent = float(_gini_from_counts(onehot.sum(axis=0)))
        lo, hi = self.min_leaf, n - self.min_leaf
        if lo > hi:
            return None
        best = (parent + 1e-12, None, None)
        total = onehot.sum(axis=0)
        for f in range(x.shape[1]):
            order = np.argsort(x[:, f], kind="stable")
            xs = x[order, f]
            left = np.cumsum(onehot[order], axis=0)[:-1]  # left counts for split after position i
            pos = np.arange(1, n)
            valid = (xs[1:] > xs[:-1]) & (pos >= lo) & (pos <= hi)
            if not valid.any():
                continue
            left = left[valid]
            nl = pos[valid].astype(float)
            impurity = (nl * _gini_from_counts(left) + (n - nl) * _gini_from_counts(total - left)) / n
            i = int(np.argmin(impurity))
            if impurity[i] < best[0] - 1e-12 or (best[1] is None and impurity[i] <= best[0]):
                j = np.flatnonzero(valid)[i]
                best = (float(impurity[i]), f, 0.5 * (xs[j] + xs[j + 1]))
        return None if best[1] is None else best

    def _leaf_impurity(self, node: int) -> float:
        # weighted Gini over the leaves below ``node``
        if self.feature_[node] < 0:
            v = np.asarray(self.value_[node])
            return float(v.sum() * _gini_from_counts(v))
        return self._leaf_impurity(self.left_[node]) + self._leaf_impurity(self.right_[node])

    def _grow(self, x, onehot, depth) -> int:
        counts = onehot.sum(axis=0)
        node = self._new_node(counts)
        if depth >= self.max_depth or np.count_nonzero(counts) <= 1:
            return node
        split = self._best_split(x, onehot)
        if split is None:
            return node
        impurity, f, thr = split
        parent = float(_gini_from_counts(counts))
        # a split with no immediate gain (XOR-like layouts) is kept only if its subtree gains
        tentative = impurity >= parent - 1e-12
        if tentative and depth + 1 >= self.max_depth:
            return node
        mask = x[:, f] <= thr
        self.feature_[node] = f
        self.threshold_[node] = thr
        self.left_[node] = self._grow(x[mask], onehot[mask], depth + 1)
        self.right_[node] = self._grow(x[~mask], onehot[~mask], depth + 1)
        if tentative and self._leaf_impurity(node) >= counts.sum() * parent - 1e-9:
            for lst in (self.feature_, self.threshold_, self.left_, self.right_, self.value_):
                del lst[node + 1 :]
            self.feature_[node], self.threshold_[node] = -1, 0.0
            self.left_[node] = self.right_[node] = -1
        return node

    def apply(self, x) -> np.ndarray:
        x = self._check_x(x)
        node = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            internal = self.feature_[node] >= 0
            if not internal.any():
                return node
            idx = np.flatnonzero(internal)
            nd = node[idx]
            go_left = x[idx, self.feature_[nd]] <= self.threshold_[nd]
            node[idx] = np.where(go_left, self.left_[nd], self.right_[nd])

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature_ < 0))

    def _raw_scores(self, x):
        v = self.value_[self.apply(x)]
        return v / v.sum(axis=1, keepdims=True)

    def _state(self):
        return {
            "feature": self.feature_,
            "threshold": self.threshold_,
            "left": self.left_,
            "right": self.right_,
            "value": self.value_,
        }

    def _load_state(self, s):
        self.feature_ = np.asarray(s["feature"], dtype=np.int64)
        self.threshold_ = np.asarray(s["threshold"], dtype=float)
        self.left_ = np.asarray(s["left"], dtype=np.int64)
        self.right_ = np.asarray(s["right"], dtype=np.int64)
        self.value_ = np.asarray(s["value"], dtype=float).reshape(len(self.feature_), -1)


def tree_fit(train: Dataset, max_depth: int = 8, min_leaf: int = 1) -> DecisionTree:
    return DecisionTree(max_depth, min_leaf).fit(train)


# ---------------------------------------------------------------------------
# Multilayer perceptron
# ---------------------------------------------------------------------------


class MLP(Classifier):
    """Fully connected ReLU network with softmax output, plain minibatch SGD."""

    kind = "mlp"

    def __init__(self, hidden=(64, 64), lr: float = 0.05, epochs: int = 30, batch_size: int = 32, seed: int = 0):
        self.hidden = tuple(int(h) for h in hidden)
        self.lr = float(lr)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.seed = int(seed)

    def get_params(self):
        return {
            "hidden": list(self.hidden),
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    def _forward(self, z):
        acts = [z]
        for i, (w, b) in enumerate(zip(self.weights_, self.biases_)):
            z = z @ w + b
            if i < len(self.weights_) - 1:
                z = np.maximum(z, 0.0)
            acts.append(z)
        return acts

    def fit(self, data: Dataset) -> MLP:
        x, y, _ = self._begin_fit(data)
        self.center_ = x.mean(axis=0)
        sd = x.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        z = (x - self.center_) / self.scale_
        rng = np.random.default_rng(self.seed)
        sizes = (data.dim, *self.hidden, data.n_classes)
        self.weights_ = [rng.normal(0, math.sqrt(2.0 / a), (a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        self.biases_ = [np.zeros(b) for b in sizes[1:]]
        onehot = np.eye(data.n_classes)[y]
        for _ in range(self.epochs):
            order = rng.permutation(len(y))
            for s in range(0, len(y), self.batch_size):
                idx = order[s:s + self.batch_size]
                acts = self._forward(z[idx])
                logits = acts[-1] - acts[-1].max(axis=1, keepdims=True)
                p = np.exp(logits)
                p /= p.sum(axis=1, keepdims=True)
                delta = (p - onehot[idx]) / len(idx)
                for layer in range(len(self.weights_) - 1, -1, -1):
                    gw = acts[layer].T @ delta
                    gb = delta.sum(axis=0)
                    if layer:
                        delta = (delta @ self.weights_[layer].T) * (acts[layer] > 0)
                    self.weights_[layer] -= self.lr * gw
                    self.biases_[layer] -= self.lr * gb
        return self

    def _raw_scores(self, x):
        return self._forward((x - self.center_) / self.scale_)[-1]

    def _state(self):
        return {
            "center": self.center_,
            "scale": self.scale_,
            "weights": [w.tolist() for w in self.weights_],
            "biases": [b.tolist() for b in self.biases_],
        }

    def _load_state(self, s):
        self.center_ = np.asarray(s["center"], dtype=float)
        self.scale_ = np.asarray(s["scale"], dtype=float)
        self.weights_ = [np.asarray(w, dtype=float) for w in s["weights"]]
        self.biases_ = [np.asarray(b, dtype=float) for b in s["biases"]]
