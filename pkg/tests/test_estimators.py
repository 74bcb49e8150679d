import numpy as np
import pytest
from sklearn.base import clone

from qtransfer.estimators import HybridClassifier
from qtransfer.validation import ConfigError


def blob_problem(seed=0, n=40, k=4):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=2.0, size=(2, k))
    y = rng.integers(0, 2, size=n)
    X = centers[y] + rng.normal(scale=0.3, size=(n, k))
    return X, y


def small_clf(**overrides):
    params = dict(regime="quantum_no_tl", n_qubits=3, depth=2, epochs=6,
                  batch_size=8, lr=0.05, seed=0)
    params.update(overrides)
    return HybridClassifier(**params)


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        clf = small_clf()
        params = clf.get_params()
        assert params["n_qubits"] == 3 and params["regime"] == "quantum_no_tl"
        clf.set_params(depth=4)
        assert clf.depth == 4

    def test_clone_preserves_params(self):
        clf = small_clf(depth=5)
        dup = clone(clf)
        assert dup.get_params() == clf.get_params()
        assert not hasattr(dup, "model_")

    def test_unfitted_predict_raises(self):
        with pytest.raises(ConfigError):
            small_clf().predict(np.zeros((2, 4)))


class TestFitPredict:
    def test_learns_separable_blobs(self):
        X, y = blob_problem()
        clf = small_clf().fit(X, y)
        assert clf.score(X, y) >= 0.9

    def test_predict_maps_back_to_original_labels(self):
        X, y = blob_problem()
        labels = np.array(["neg", "pos"])[y]
        clf = small_clf().fit(X, labels)
        assert set(clf.predict(X)) <= {"neg", "pos"}
        np.testing.assert_array_equal(clf.classes_, ["neg", "pos"])

    def test_predict_proba_rows_sum_to_one(self):
        X, y = blob_problem(seed=1)
        clf = small_clf(epochs=2).fit(X, y)
        proba = clf.predict_proba(X)
        assert proba.shape == (len(X), 2)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)

    def test_same_seed_same_predictions(self):
        X, y = blob_problem(seed=2)
        p1 = small_clf(epochs=3).fit(X, y).predict_proba(X)
        p2 = small_clf(epochs=3).fit(X, y).predict_proba(X)
        np.testing.assert_array_equal(p1, p2)

    def test_classical_head_works_too(self):
        X, y = blob_problem(seed=3)
        clf = small_clf(regime="classical_no_tl", epochs=10).fit(X, y)
        assert clf.score(X, y) >= 0.9

    def test_single_class_rejected(self):
        X, _ = blob_problem()
        with pytest.raises(ConfigError):
            small_clf().fit(X, np.zeros(len(X), dtype=int))

    def test_bad_rank_rejected(self):
        with pytest.raises(ConfigError):
            small_clf().fit(np.zeros((4, 2, 3)), np.array([0, 1, 0, 1]))
