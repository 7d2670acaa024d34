"""Pointwise classifier contract and a multinomial logistic regression baseline."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .cloud import UNLABELED, PointCloud
from .features import FeatureMatrix

logger = logging.getLogger(__name__)

BATCH_SIZE = 256


@dataclass(frozen=True, eq=False)
class Prediction:
    """Per-point class ids.

    ``probabilities[:, j]`` is the probability of ``class_ids[j]``. When
    ``positions`` is set the labels belong to those points rather than to
    the cloud that was classified, and must be projected back.
    """

    labels: np.ndarray
    probabilities: Optional[np.ndarray] = None
    class_ids: Optional[np.ndarray] = None
    positions: Optional[np.ndarray] = None


class Classifier(Protocol):
    def classify(self, cloud: PointCloud, features: FeatureMatrix) -> Prediction: ...


@dataclass(eq=False)
class ClassifierModel:
    weights: np.ndarray  # (K, F)
    bias: np.ndarray  # (K,)
    feature_names: tuple[str, ...]
    class_ids: tuple[int, ...]
    mean: np.ndarray
    scale: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.weights.shape != (len(self.class_ids), len(self.feature_names)):
            raise ValueError("weight matrix shape does not match classes x features")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("model parameters must be finite")

    def to_json(self) -> str:
        doc = {
            "feature_names": list(self.feature_names),
            "class_ids": list(self.class_ids),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "meta": self.meta,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ClassifierModel":
        doc = json.loads(text)
        return cls(
            weights=np.asarray(doc["weights"], dtype=np.float64).reshape(
                len(doc["class_ids"]), len(doc["feature_names"])),
            bias=np.asarray(doc["bias"], dtype=np.float64),
            feature_names=tuple(doc["feature_names"]),
            class_ids=tuple(int(c) for c in doc["class_ids"]),
            mean=np.asarray(doc["mean"], dtype=np.float64),
            scale=np.asarray(doc["scale"], dtype=np.float64),
            meta=doc.get("meta", {}),
        )

    def classify(self, cloud: PointCloud, features: FeatureMatrix) -> Prediction:
        return predict(self, features)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy of a linear softmax model and its gradients.

    ``y`` holds class indices into the rows of ``weights``.
    """
    logits = x @ weights.T + bias
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    n = len(x)
    loss = float(np.mean(log_norm - z[np.arange(n), y]))
    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, delta.T @ x, delta.sum(axis=0)


def train(
    features: FeatureMatrix,
    labels: np.ndarray,
    *,
    class_ids: Optional[Sequence[int]] = None,
    learning_rate: float = 0.1,
    epochs: int = 20,
    seed: int = 42,
) -> ClassifierModel:
    """Fit by seeded mini-batch gradient descent on standardized features.

    Rows labeled ``UNLABELED`` are ignored. ``class_ids`` fixes the output
    space (defaults to ``0..max(label)``); classes without samples only
    trigger a warning.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != len(features):
        raise ValueError("labels and features differ in length")
    keep = labels != UNLABELED
    x_all = features.values[keep]
    y_raw = labels[keep]
    if len(y_raw) == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(x_all)):
        raise ValueError("training features contain NaN or infinite values")
    if class_ids is None:
        class_ids = range(int(y_raw.max()) + 1)
    class_ids = tuple(int(c) for c in class_ids)
    try:
        y = _map_ids(y_raw, class_ids)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} outside the class space {class_ids}") from None
    absent = [c for c, n in zip(class_ids, np.bincount(y, minlength=len(class_ids))) if n == 0]
    if absent:
        warnings.warn(f"classes without training samples: {absent}", stacklevel=2)

    mean = x_all.mean(axis=0)
    scale = x_all.std(axis=0)
    scale[scale == 0] = 1.0
    x = (x_all - mean) / scale

    k, f = len(class_ids), x.shape[1]
    w = np.zeros((k, f))
    b = np.zeros(k)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), BATCH_SIZE):
            batch = order[start:start + BATCH_SIZE]
            _, gw, gb = loss_and_grad(w, b, x[batch], y[batch])
            w -= learning_rate * gw
            b -= learning_rate * gb
    final_loss, _, _ = loss_and_grad(w, b, x, y)
    logger.debug("trained %d-class model on %d rows, loss %.4f", k, len(x), final_loss)
    return ClassifierModel(
        weights=w, bias=b, feature_names=features.names, class_ids=class_ids,
        mean=mean, scale=scale,
        meta={"epochs": epochs, "learning_rate": learning_rate, "seed": seed,
              "batch_size": BATCH_SIZE, "final_loss": final_loss, "n_samples": int(len(x))},
    )


def _map_ids(values: np.ndarray, class_ids: tuple[int, ...]) -> np.ndarray:
    table = np.full(max(max(class_ids), int(values.max())) + 1, -1, dtype=np.int64)
    table[list(class_ids)] = np.arange(len(class_ids))
    out = table[values]
    if np.any(out < 0):
        raise KeyError(int(values[out < 0][0]))
    return out


def predict(model: ClassifierModel, features: FeatureMatrix) -> Prediction:
    if features.values.shape[1] < len(model.feature_names):
        raise ValueError(
            f"feature dimension {features.values.shape[1]} < model's {len(model.feature_names)}")
    if features.names != model.feature_names:
        features = features.select(model.feature_names)
    x = (features.values - model.mean) / model.scale
    prob = softmax(x @ model.weights.T + model.bias)
    ids = np.asarray(model.class_ids, dtype=np.int64)
    return Prediction(ids[prob.argmax(axis=1)], prob, ids)


def predict_oracle(labels: np.ndarray, class_ids: Optional[Sequence[int]] = None) -> Prediction:
    """Prediction that returns the given labels with probability one."""
    labels = np.asarray(labels, dtype=np.int64)
    ids = np.asarray(class_ids if class_ids is not None
                     else np.unique(labels[labels != UNLABELED]), dtype=np.int64)
    prob = (labels[:, None] == ids[None, :]).astype(np.float64)
    return Prediction(labels.copy(), prob, ids)


class OracleClassifier:
    """Test double: reads ground truth off the cloud, optionally mapped by ``forward``."""

    def __init__(self, forward: Optional[np.ndarray] = None):
        self.forward = forward

    def classify(self, cloud: PointCloud, features: FeatureMatrix) -> Prediction:
        if cloud.labels is None:
            raise ValueError("oracle classifier needs a labeled cloud")
        labels = cloud.labels
        if self.forward is not None:
            labels = np.where(labels == UNLABELED, UNLABELED,
                              self.forward[np.maximum(labels, 0)])
        return predict_oracle(labels)


class FixedPrediction:
    """Classifier returning precomputed labels, e.g. from an external model's label file.

    With ``positions`` the labels describe another (typically resampled) point
    set and are projected onto the classified cloud by closest point.
    """

    def __init__(self, labels: np.ndarray, positions: Optional[np.ndarray] = None):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.positions = positions

    def classify(self, cloud: PointCloud, features: FeatureMatrix) -> Prediction:
        if self.positions is None and len(self.labels) != len(cloud):
            raise ValueError(
                f"label file has {len(self.labels)} entries for {len(cloud)} points")
        return Prediction(self.labels, positions=self.positions)
