import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from openrect.classifiers import (
    GDA,
    KNN,
    MLP,
    ClassifierError,
    DecisionTree,
    InsufficientDataError,
    LinearSVM,
    NotFittedError,
    _gini_from_counts,
    gda_fit,
    knn_predict,
    load_model,
    make_classifier,
    normalized_scores,
    save_model,
    svm_fit,
    tree_fit,
)
from openrect.dataset import Dataset


def blobs(rng, means, n=50, var=1.0):
    means = np.asarray(means, dtype=float)
    x = np.vstack([m + np.sqrt(var) * rng.standard_normal((n, means.shape[1])) for m in means])
    return Dataset(x, np.repeat(np.arange(len(means)), n), len(means))


# -- GDA ---------------------------------------------------------------------------


def test_gda_symmetric_boundary():
    # exactly symmetric point sets about (2, 2)
    base = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
    x = np.vstack([base, base + 4.0])
    m = gda_fit(Dataset(x, [0] * 4 + [1] * 4, 2))
    s = m.scores(np.array([[2.0, 2.0], [1.0, 3.0], [1.9, 1.9], [2.1, 2.1]]))
    assert s[0, 0] == pytest.approx(s[0, 1])
    assert s[1, 0] == pytest.approx(s[1, 1])  # on the perpendicular bisector
    assert m.predict([[1.9, 1.9], [2.1, 2.1]]).tolist() == [0, 1]


def test_gda_identical_points_use_floor():
    x = np.vstack([np.ones((3, 2)), np.arange(6.0).reshape(3, 2)])
    m = gda_fit(Dataset(x, [0, 0, 0, 1, 1, 1], 2))
    assert np.all(m.variances_[0] == m.variance_floor_)
    assert np.all(np.isfinite(m.scores(x)))


def test_gda_singleton_class_rejected():
    with pytest.raises(InsufficientDataError, match="class 1"):
        gda_fit(Dataset([[0.0], [1.0], [5.0]], [0, 0, 1], 2))


def test_gda_prior_dominance():
    x = np.array([[-1.0], [1.0]] * 9 + [[-1.0], [1.0]])
    y = [0] * 18 + [1, 1]
    m = gda_fit(Dataset(x, y, 2))
    # same mean and variance, priors 0.9 / 0.1
    assert m.predict([[0.0]])[0] == 0
    assert m.priors_ == pytest.approx([0.9, 0.1])


def test_gda_at_mean_predicts_that_class(rng):
    d = blobs(rng, [[0, 0], [3, 0], [0, 3]], n=40)
    m = gda_fit(d)
    assert m.predict(m.means_).tolist() == [0, 1, 2]


@pytest.mark.parametrize("mode", ["isotropic", "diagonal"])
def test_gda_scores_match_independent_density(rng, mode):
    d = blobs(rng, [[0, 0, 0], [2, 1, 0], [0, 2, 2]], n=30)
    m = GDA(mode).fit(d)
    x = rng.normal(size=(25, 3))
    post = normalized_scores(m, x)
    dens = np.column_stack(
        [multivariate_normal(m.means_[c], np.diag(m.variances_[c])).pdf(x) * m.priors_[c] for c in range(3)]
    )
    np.testing.assert_allclose(post, dens / dens.sum(axis=1, keepdims=True), rtol=0, atol=1e-12)
    if mode == "isotropic":
        assert np.allclose(m.variances_, m.variances_[:, :1])


def test_gda_near_bayes_rate():
    rng = np.random.default_rng(5)
    means = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.8]])
    d = blobs(rng, means, n=1000)
    acc = np.mean(gda_fit(d).predict(d.features) == d.labels)
    # Bayes rate by Monte Carlo with the true densities
    xs = blobs(np.random.default_rng(6), means, n=20000)
    true = np.column_stack([multivariate_normal(mu, np.eye(2)).logpdf(xs.features) for mu in means])
    bayes = np.mean(true.argmax(axis=1) == xs.labels)
    assert acc >= bayes - 0.02


# -- linear SVM -------------------------------------------------------------------------


def test_svm_separable_training_accuracy():
    rng = np.random.default_rng(1)
    x = np.vstack([rng.uniform(-3, -1, (40, 2)), rng.uniform(1, 3, (40, 2))])
    d = Dataset(x, [0] * 40 + [1] * 40, 2)
    m = svm_fit(d, lam=1e-3, epochs=20, seed=0)
    assert np.mean(m.predict(x) == d.labels) == 1.0


def test_svm_single_class_and_lambda_errors():
    with pytest.raises(InsufficientDataError):
        svm_fit(Dataset([[0.0], [1.0]], [0, 0], 1))
    with pytest.raises(ClassifierError):
        LinearSVM(lam=0)


def test_svm_deterministic(rng):
    d = blobs(rng, [[0, 0], [2, 2], [0, 3]], n=30)
    a = svm_fit(d, seed=4)
    b = svm_fit(d, seed=4)
    np.testing.assert_array_equal(a.weights_, b.weights_)


def test_svm_objective_trends_down(rng):
    d = blobs(rng, [[0, 0], [2, 2], [0, 3]], n=60)
    m = LinearSVM(lam=1e-2, epochs=30, seed=0).fit(d)
    tr = np.convolve(m.objective_trace_, np.ones(5) / 5, mode="valid")
    # smoothed trace: later windows never exceed the first by more than noise
    assert tr[-1] <= tr[0]
    assert np.all(tr[5:] <= tr[0] * 1.05)


def test_svm_minibatch(rng):
    d = blobs(rng, [[0, 0], [4, 4]], n=30)
    m = LinearSVM(lam=1e-3, epochs=10, batch_size=8).fit(d)
    assert np.mean(m.predict(d.features) == d.labels) > 0.95


# -- k-NN -----------------------------------------------------------------------------


def brute_knn(xtr, ytr, q, k, n_classes):
    out = []
    for p in q:
        dist = [(float(np.sum((p - r) ** 2)), i) for i, r in enumerate(xtr)]
        dist.sort()
        votes = np.zeros(n_classes)
        for _, i in dist[:k]:
            votes[ytr[i]] += 1
        out.append(int(np.argmax(votes)))
    return np.array(out)


def test_knn_matches_brute_force_on_grid(rng):
    d = blobs(rng, [[0, 0], [1.5, 0], [0.7, 1.2]], n=15, var=0.6)
    gx, gy = np.meshgrid(np.linspace(-2, 3, 21), np.linspace(-2, 3, 21))
    q = np.column_stack([gx.ravel(), gy.ravel()])
    for k in (1, 4, 7):
        m = KNN(k).fit(d)
        np.testing.assert_array_equal(knn_predict(m, q), brute_knn(d.features, d.labels, q, k, 3))


@given(st.integers(1, 6), st.integers(0, 10_000))
def test_knn_brute_force_property(k, seed):
    rng = np.random.default_rng(seed)
    # integer coordinates to provoke distance ties
    x = rng.integers(0, 4, (12, 2)).astype(float)
    y = rng.integers(0, 3, 12)
    d = Dataset(x, y, 3)
    q = rng.integers(0, 4, (10, 2)).astype(float)
    np.testing.assert_array_equal(KNN(k).fit(d).predict(q), brute_knn(x, y, q, k, 3))


def test_knn_boundary_cases(rng):
    d = blobs(rng, [[0, 0], [5, 5]], n=10)
    assert KNN(1).fit(d).predict(d.features[[3, 15]]).tolist() == [0, 1]
    y = np.array([0] * 7 + [1] * 3)
    d2 = Dataset(rng.normal(size=(10, 2)), y, 2)
    assert np.all(KNN(10).fit(d2).predict(rng.normal(size=(5, 2))) == 0)
    with pytest.raises(ClassifierError):
        KNN(11).fit(d2)


# -- decision tree -------------------------------------------------------------------------


def test_tree_pure_input_is_single_leaf():
    m = tree_fit(Dataset([[0.0], [1.0], [2.0]], [1, 1, 1], 2))
    assert m.n_leaves == 1


def test_tree_xor_depth_two():
    x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = [0, 0, 1, 1]
    m = tree_fit(Dataset(x, y, 2), max_depth=2)
    assert m.predict(x).tolist() == y


def test_tree_depth_zero_is_majority_stump(rng):
    d = Dataset(rng.normal(size=(9, 2)), [0, 1, 1, 1, 2, 1, 0, 1, 2], 3)
    m = tree_fit(d, max_depth=0)
    assert m.n_leaves == 1 and np.all(m.predict(rng.normal(size=(4, 2))) == 1)


def subtree_leaf_impurity(m, node):
    if m.feature_[node] < 0:
        v = m.value_[node]
        return v.sum() * _gini_from_counts(v)
    return subtree_leaf_impurity(m, m.left_[node]) + subtree_leaf_impurity(m, m.right_[node])


@pytest.mark.parametrize("seed", range(5))
def test_tree_subtrees_strictly_reduce_impurity(seed):
    rng = np.random.default_rng(seed)
    d = blobs(rng, [[0, 0], [1, 1], [2, 0]], n=30, var=0.5)
    m = tree_fit(d, max_depth=6, min_leaf=2)
    g = _gini_from_counts(m.value_)
    n = m.value_.sum(axis=1)
    for node in np.flatnonzero(m.feature_ >= 0):
        l, r = m.left_[node], m.right_[node]
        assert subtree_leaf_impurity(m, node) < n[node] * g[node]
        assert n[l] >= 2 and n[r] >= 2
        assert n[l] + n[r] == n[node]


def test_tree_zero_gain_split_pruned_without_payoff():
    # XOR again, but one level is not enough to make the zero-gain split pay off
    x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    m = tree_fit(Dataset(x, [0, 0, 1, 1], 2), max_depth=1)
    assert m.n_leaves == 1


# -- shared interface -----------------------------------------------------------------------

FACTORIES = [
    lambda: GDA(),
    lambda: GDA("diagonal"),
    lambda: LinearSVM(epochs=3),
    lambda: KNN(3),
    lambda: DecisionTree(4),
    lambda: MLP(hidden=(8,), epochs=3),
]


@pytest.mark.parametrize("make", FACTORIES)
def test_predict_is_argmax_of_scores(rng, make):
    d = blobs(rng, [[0, 0], [2, 0], [1, 2]], n=20)
    m = make().fit(d)
    q = rng.normal(size=(30, 2)) * 2
    np.testing.assert_array_equal(m.predict(q), np.argmax(m.scores(q), axis=1))
    p = normalized_scores(m, q)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


@pytest.mark.parametrize("make", FACTORIES)
def test_refit_is_idempotent(rng, make):
    d = blobs(rng, [[0, 0], [2, 0], [1, 2]], n=20)
    q = rng.normal(size=(30, 2))
    np.testing.assert_array_equal(make().fit(d).predict(q), make().fit(d).predict(q))


@pytest.mark.parametrize("make", FACTORIES)
def test_save_load_roundtrip(tmp_path, rng, make):
    d = blobs(rng, [[0, 0], [2, 0], [1, 2]], n=20)
    m = make().fit(d)
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    q = rng.normal(size=(30, 2))
    np.testing.assert_allclose(back.scores(q), m.scores(q))


def test_empty_class_never_predicted(rng):
    d = blobs(rng, [[0, 0], [3, 3]], n=10)
    d = Dataset(d.features, d.labels, 3)  # class 2 has no rows
    for make in FACTORIES:
        m = make().fit(d)
        assert np.all(m.predict(rng.normal(size=(20, 2)) * 3) < 2)
        assert np.all(np.isneginf(m.scores(d.features[:2])[:, 2]))


def test_not_fitted_and_dim_mismatch(rng):
    with pytest.raises(NotFittedError):
        GDA().predict([[0.0]])
    m = GDA().fit(blobs(rng, [[0, 0], [1, 1]]))
    with pytest.raises(ClassifierError):
        m.predict([[0.0, 1.0, 2.0]])


def test_make_classifier(rng):
    f = make_classifier("knn", k=3)
    assert f.kind == "knn" and f.params == {"k": 3}
    assert isinstance(f(), KNN) and f() is not f()
    with pytest.raises(ClassifierError):
        make_classifier("nope")


def test_mlp_learns_simple_problem(rng):
    d = blobs(rng, [[0, 0], [4, 0], [2, 4]], n=40, var=0.5)
    m = MLP(hidden=(16, 16), epochs=40, lr=0.05).fit(d)
    assert np.mean(m.predict(d.features) == d.labels) > 0.95
