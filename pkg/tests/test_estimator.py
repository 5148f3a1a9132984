"""sklearn-style facade: params plumbing, fit/predict, validation."""

import numpy as np
import pytest

from apcnn.data import gen_synthetic
from apcnn.estimator import AttentionPyramidClassifier, NotFittedError, check_image_batch, check_labels
from apcnn.tensor import Rng

TINY = dict(
    input_size=32,
    fpn_channels=8,
    epochs=2,
    batch_size=4,
    seed=0,
)


def toy_xy(classes=2, per_class=4, seed=0):
    ds = gen_synthetic(classes, per_class, 32, Rng(seed))
    X = np.stack([i.image for i in ds.items])
    y = np.array([i.label for i in ds.items])
    return X, y


class TestParamsApi:
    def test_get_set_roundtrip(self):
        est = AttentionPyramidClassifier(**TINY)
        params = est.get_params()
        assert params["epochs"] == 2 and params["input_size"] == 32
        est.set_params(epochs=5, lr0=0.01)
        assert est.epochs == 5 and est.lr0 == 0.01

    def test_unknown_param_rejected(self):
        with pytest.raises(ValueError, match="invalid parameter"):
            AttentionPyramidClassifier().set_params(bogus=1)

    def test_sklearn_clone_compatible(self):
        from sklearn.base import clone

        est = AttentionPyramidClassifier(**TINY)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
        assert not hasattr(cloned, "model_")


class TestFitPredict:
    def test_fit_predict_shapes_and_labels(self):
        X, y = toy_xy()
        est = AttentionPyramidClassifier(**TINY).fit(X, y)
        preds = est.predict(X)
        assert preds.shape == (len(y),)
        assert set(preds) <= set(y)
        probs = est.predict_proba(X)
        assert probs.shape == (len(y), 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    def test_noncontiguous_labels_mapped(self):
        X, y = toy_xy()
        y_shifted = np.where(y == 0, 10, 42)
        est = AttentionPyramidClassifier(**TINY).fit(X, y_shifted)
        assert est.classes_.tolist() == [10, 42]
        assert set(est.predict(X)) <= {10, 42}

    def test_score_is_accuracy(self):
        X, y = toy_xy()
        est = AttentionPyramidClassifier(**TINY).fit(X, y)
        assert est.score(X, y) == (est.predict(X) == y).mean()

    def test_predict_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            AttentionPyramidClassifier(**TINY).predict(np.zeros((1, 3, 32, 32), np.float32))

    def test_localize_returns_boxes(self):
        X, y = toy_xy()
        est = AttentionPyramidClassifier(**TINY).fit(X, y)
        boxes = est.localize(X[:3])
        assert boxes.shape == (3, 4)
        assert np.all(boxes[:, 2] > boxes[:, 0]) and np.all(boxes[:, 3] > boxes[:, 1])
        assert np.all(boxes >= 0) and np.all(boxes[:, 2:] <= 32)

    def test_fit_deterministic_per_seed(self):
        X, y = toy_xy()
        p1 = AttentionPyramidClassifier(**TINY).fit(X, y).predict_proba(X)
        p2 = AttentionPyramidClassifier(**TINY).fit(X, y).predict_proba(X)
        np.testing.assert_array_equal(p1, p2)


class TestValidationHelpers:
    def test_check_image_batch(self):
        ok = check_image_batch(np.zeros((2, 3, 32, 32)))
        assert ok.dtype == np.float32
        with pytest.raises(ValueError, match="4-d"):
            check_image_batch(np.zeros((3, 32, 32)))
        with pytest.raises(ValueError, match="channels"):
            check_image_batch(np.zeros((1, 1, 32, 32)))
        with pytest.raises(ValueError, match="square"):
            check_image_batch(np.zeros((1, 3, 32, 64)))
        with pytest.raises(ValueError, match="expects"):
            check_image_batch(np.zeros((1, 3, 64, 64)), input_size=32)
        bad = np.zeros((1, 3, 32, 32))
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            check_image_batch(bad)

    def test_check_labels(self):
        assert check_labels([0, 1, 0], 3).tolist() == [0, 1, 0]
        with pytest.raises(ValueError):
            check_labels([0, 1], 3)
