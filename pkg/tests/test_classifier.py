import warnings

import numpy as np
import pytest

from mrseg.classifier import (
    ClassifierModel,
    OracleClassifier,
    loss_and_grad,
    predict,
    predict_oracle,
    softmax,
    train,
)
from mrseg.cloud import UNLABELED, PointCloud, relabel
from mrseg.features import FeatureMatrix


def fm(x):
    x = np.asarray(x, dtype=float)
    return FeatureMatrix(x, tuple(f"f{i}" for i in range(x.shape[1])))


def two_blobs(rng, n=400):
    x = np.vstack([rng.normal(-1, 0.1, size=(n // 2, 2)), rng.normal(1, 0.1, size=(n // 2, 2))])
    y = np.repeat([0, 1], n // 2)
    return fm(x), y


def test_separable_set(rng):
    x, y = two_blobs(rng)
    model = train(x, y, epochs=10)
    acc = np.mean(predict(model, x).labels == y)
    assert acc >= 0.99


def test_zero_epochs_predicts_first_class(rng):
    x, y = two_blobs(rng)
    pred = predict(train(x, y, epochs=0), x)
    assert np.all(pred.labels == 0)
    assert np.allclose(pred.probabilities, 0.5)


def test_untrained_model_is_uniform(rng):
    model = ClassifierModel(np.zeros((4, 3)), np.zeros(4), ("a", "b", "c"), (0, 1, 2, 3),
                            np.zeros(3), np.ones(3))
    pred = predict(model, FeatureMatrix(rng.normal(size=(10, 3)), ("a", "b", "c")))
    assert np.allclose(pred.probabilities, 0.25)


def test_gradient_matches_finite_differences(rng):
    x = rng.normal(size=(5, 4))
    y = np.array([0, 2, 1, 1, 0])
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    _, gw, gb = loss_and_grad(w, b, x, y)
    eps = 1e-6
    for idx in np.ndindex(w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += eps
        wm[idx] -= eps
        num = (loss_and_grad(wp, b, x, y)[0] - loss_and_grad(wm, b, x, y)[0]) / (2 * eps)
        assert num == pytest.approx(gw[idx], abs=1e-5)
    for j in range(3):
        bp, bm = b.copy(), b.copy()
        bp[j] += eps
        bm[j] -= eps
        num = (loss_and_grad(w, bp, x, y)[0] - loss_and_grad(w, bm, x, y)[0]) / (2 * eps)
        assert num == pytest.approx(gb[j], abs=1e-5)


def test_prediction_is_argmax_of_probabilities(rng):
    x = fm(rng.normal(size=(300, 3)))
    y = rng.integers(0, 4, 300)
    pred = predict(train(x, y, epochs=3), x)
    for row, lab in zip(pred.probabilities, pred.labels):
        best = max(range(len(row)), key=lambda j: (row[j], -j))
        assert pred.class_ids[best] == lab
    assert np.allclose(pred.probabilities.sum(axis=1), 1.0)


def test_softmax_shift_invariant(rng):
    z = rng.normal(size=(20, 5))
    assert np.allclose(softmax(z), softmax(z + 1000.0))


def test_training_is_deterministic(rng):
    x = fm(rng.normal(size=(600, 3)))
    y = rng.integers(0, 3, 600)
    a = train(x, y, seed=5, epochs=4)
    b = train(x, y, seed=5, epochs=4)
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, train(x, y, seed=6, epochs=4).weights)


def test_loss_decreases(rng):
    x, y = two_blobs(rng)
    y = y.copy()
    y[::7] = 1 - y[::7]
    start = train(x, y, epochs=0).meta["final_loss"]
    assert train(x, y, epochs=50).meta["final_loss"] < start


def test_unlabeled_rows_are_ignored(rng):
    x, y = two_blobs(rng)
    noisy = y.copy()
    noisy[:50] = UNLABELED
    a = train(x.subset(np.arange(50, len(y))), y[50:], seed=1, epochs=2)
    b = train(x, noisy, seed=1, epochs=2)
    assert np.allclose(a.weights, b.weights)


def test_class_ids_and_absent_class_warning(rng):
    x, _ = two_blobs(rng)
    y = np.repeat([2, 7], len(x) // 2)
    with pytest.warns(UserWarning, match="without training samples"):
        model = train(x, y, class_ids=[2, 5, 7], epochs=5)
    pred = predict(model, x)
    assert set(pred.labels.tolist()) <= {2, 7}
    with pytest.raises(ValueError):
        train(x, y, class_ids=[2, 5])


def test_training_errors(rng):
    with pytest.raises(ValueError, match="empty"):
        train(fm(np.zeros((3, 2))), np.full(3, UNLABELED))
    bad = np.zeros((3, 2))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        train(fm(bad), np.array([0, 1, 0]))


def test_feature_dimension_check(rng):
    x, y = two_blobs(rng)
    model = train(x, y, epochs=1)
    with pytest.raises(ValueError, match="dimension"):
        predict(model, fm(np.zeros((3, 1))))


def test_json_round_trip(rng):
    x, y = two_blobs(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = train(x, y, class_ids=[0, 1, 4], epochs=3)
    back = ClassifierModel.from_json(model.to_json())
    assert back.class_ids == model.class_ids
    assert np.array_equal(back.weights, model.weights)
    assert np.array_equal(predict(back, x).probabilities, predict(model, x).probabilities)


def test_oracle_equals_relabel(wall_schema, rng):
    _, _, merged = wall_schema
    labels = rng.integers(0, 4, 100)
    labels[::9] = UNLABELED
    cloud = PointCloud(rng.normal(size=(100, 3)), labels=labels)
    got = OracleClassifier(merged.forward).classify(cloud, None).labels
    assert np.array_equal(got, relabel(cloud, merged.forward).labels)
    assert np.array_equal(predict_oracle(labels).labels, labels)
