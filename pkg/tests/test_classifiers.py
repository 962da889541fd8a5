import json

import numpy as np
import pytest
from sklearn.neighbors import KNeighborsClassifier

from tools.dataset import InteractionClass
from tools.errors import (DimensionMismatchError, EmptyResultError, InvalidDistributionError, KOutOfRangeError,
                          UsageError)
from tools.classifiers import (ForestParams, Leaf, Split, best_split, gini, grow_tree, knn_fit, knn_predict_proba,
                               model_document, model_from_document, predict_label, predict_proba,
                               resolve_max_features, rf_fit, rf_predict_proba, tree_votes)


def _split_data(X, y, seed=0):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    half = len(y) // 2
    return X[order[:half]], y[order[:half]], X[order[half:]], y[order[half:]]


# ==================== KNN ====================

def test_knn_matches_reference_implementation(blobs):
    X_train, y_train, X_test, _ = _split_data(*blobs)
    ours = knn_predict_proba(knn_fit(X_train, y_train, k=5), X_test)
    reference = KNeighborsClassifier(n_neighbors=5, algorithm="brute").fit(X_train, y_train)
    np.testing.assert_allclose(ours, reference.predict_proba(X_test))


def test_knn_k1_on_training_point_returns_own_label(blobs):
    X, y = blobs
    model = knn_fit(X, y, k=1)
    proba = knn_predict_proba(model, X[17])
    assert proba.shape == (4,)
    assert predict_label(proba) is InteractionClass(int(y[17]))


def test_knn_distance_tie_prefers_lower_class():
    model = knn_fit(np.array([[1.0], [-1.0]]), np.array([3, 1]), k=1)
    np.testing.assert_array_equal(knn_predict_proba(model, np.array([0.0])), [0.0, 1.0, 0.0, 0.0])


def test_knn_k_equals_n_gives_class_frequencies():
    X = np.arange(8.0).reshape(4, 2)
    y = np.array([0, 0, 2, 3])
    proba = knn_predict_proba(knn_fit(X, y, k=4), np.array([[100.0, 100.0]]))
    np.testing.assert_allclose(proba[0], [0.5, 0.0, 0.25, 0.25])


def test_knn_errors():
    X = np.zeros((3, 2))
    y = np.array([0, 1, 2])
    with pytest.raises(KOutOfRangeError):
        knn_fit(X, y, k=4)
    with pytest.raises(KOutOfRangeError):
        knn_fit(X, y, k=0)
    with pytest.raises(EmptyResultError):
        knn_fit(np.zeros((0, 2)), np.zeros(0, dtype=int), k=1)
    with pytest.raises(DimensionMismatchError):
        knn_predict_proba(knn_fit(X, y, k=1), np.zeros(3))


# ==================== 트리 ====================

def test_gini_values():
    assert gini(np.array([4, 0, 0, 0])) == pytest.approx(0.0)
    assert gini(np.array([1, 1, 1, 1])) == pytest.approx(0.75)
    assert gini(np.array([0, 0, 0, 0])) == pytest.approx(0.0)
    np.testing.assert_allclose(gini(np.array([[0, 0, 0, 0], [2, 2, 0, 0]])), [0.0, 0.5])


def test_best_split_midpoint_and_tie_break():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    y = np.array([0, 0, 1, 1])
    feature, threshold, impurity = best_split(X, y, np.array([0, 1]), 1)
    # 두 특징이 똑같이 좋으면 낮은 인덱스
    assert feature == 0
    assert threshold == pytest.approx(2.5)
    assert impurity == pytest.approx(0.0)


def test_best_split_none_without_gain():
    X = np.array([[1.0], [1.0], [1.0]])
    y = np.array([0, 1, 0])
    assert best_split(X, y, np.array([0]), 1) is None


def test_best_split_respects_min_samples_leaf():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    y = np.array([1, 0, 0, 0, 0])
    assert best_split(X, y, np.array([0]), 2) is not None
    feature, threshold, _ = best_split(X, y, np.array([0]), 1)
    assert threshold == pytest.approx(0.5)
    _, threshold, _ = best_split(X, y, np.array([0]), 2)
    assert threshold == pytest.approx(1.5)


def test_grown_tree_separates_training_data(blobs):
    X, y = blobs
    tree = grow_tree(X, y, max_features=2, min_samples_leaf=1, max_depth=None, rng=np.random.default_rng(0))
    leaves = tree.apply(X)
    assert np.array_equal(np.argmax(tree.distribution[leaves], axis=1), y)
    assert isinstance(tree.root(), Split)


def test_max_depth_zero_is_a_single_leaf(blobs):
    X, y = blobs
    tree = grow_tree(X, y, 2, 1, 0, np.random.default_rng(0))
    assert tree.n_nodes == 1
    assert isinstance(tree.root(), Leaf)
    np.testing.assert_allclose(tree.root().counts, [100, 100, 100, 100])


def test_resolve_max_features():
    assert resolve_max_features("sqrt", 36) == 6
    assert resolve_max_features("sqrt", 10) == 4
    assert resolve_max_features(None, 7) == 7
    assert resolve_max_features(50, 7) == 7
    with pytest.raises(UsageError):
        resolve_max_features(0, 7)


# ==================== 랜덤 포레스트 ====================

def test_forest_generalizes_on_blobs(blobs):
    X_train, y_train, X_test, y_test = _split_data(*blobs)
    model = rf_fit(X_train, y_train, n_trees=25, rng_seed=1)
    proba = rf_predict_proba(model, X_test)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    accuracy = np.mean(predict_label(proba) == y_test)
    assert accuracy >= 0.95


def test_forest_is_deterministic_and_parallel_safe(blobs):
    X, y = blobs
    serial = rf_fit(X, y, ForestParams(n_trees=6), rng_seed=5)
    parallel = rf_fit(X, y, ForestParams(n_trees=6, n_jobs=2), rng_seed=5)
    np.testing.assert_array_equal(rf_predict_proba(serial, X), rf_predict_proba(parallel, X))
    assert tree_votes(serial, X[:3]).shape == (6, 3)


def test_single_class_training_predicts_that_class():
    X = np.random.default_rng(0).random((10, 3))
    y = np.full(10, 2)
    proba = rf_predict_proba(rf_fit(X, y, n_trees=3), X[:2])
    np.testing.assert_allclose(proba, [[0, 0, 1, 0], [0, 0, 1, 0]])


def test_predict_label_ties_and_invalid():
    assert predict_label(np.array([0.4, 0.4, 0.2, 0.0])) is InteractionClass.NULL
    np.testing.assert_array_equal(predict_label(np.array([[0, 0, 0.5, 0.5], [0, 1, 0, 0]])), [2, 1])
    with pytest.raises(InvalidDistributionError):
        predict_label(np.array([0.5, 0.6, 0.0, 0.0]))
    with pytest.raises(InvalidDistributionError):
        predict_label(np.array([0.5, 0.5]))


# ==================== 모델 문서 ====================

@pytest.mark.parametrize("algorithm", ["knn", "rf"])
def test_model_document_survives_json(algorithm, blobs):
    X, y = blobs
    model = knn_fit(X, y, k=3) if algorithm == "knn" else rf_fit(X, y, n_trees=4, rng_seed=2)
    document = json.loads(json.dumps(model_document(model, {"window_size": 30})))
    assert document["window_size"] == 30
    restored = model_from_document(document)
    np.testing.assert_allclose(predict_proba(restored, X), predict_proba(model, X))


def test_model_document_version_is_checked():
    with pytest.raises(UsageError):
        model_from_document({"schema_version": 99, "algorithm": "knn"})
    with pytest.raises(UsageError):
        model_from_document({"schema_version": 1, "algorithm": "svm"})
