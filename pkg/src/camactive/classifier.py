"""One-hidden-layer species classifier over embedded features.

Retrained from scratch (seeded) at every active-learning step by default;
warm-starting from the previous weights is available as a config flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import DenseNet, softmax

DEFAULT_HIDDEN_UNITS = 100
PROB_FLOOR = 1e-12


class ClassifierError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ClassifierError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ClassifierError(f"epochs must be >= 0, got {self.epochs}")


class MlpClassifier:
    """ReLU hidden layer + softmax output over K class scores."""

    def __init__(
        self,
        n_features: int,
        n_classes: int,
        hidden_units: int = DEFAULT_HIDDEN_UNITS,
        seed: int = 0,
        init_scale: float = 1.0,
    ):
        if n_classes < 2:
            raise ClassifierError(f"need at least 2 classes, got {n_classes}")
        self.n_features = int(n_features)
        self.n_classes = int(n_classes)
        self.hidden_units = int(hidden_units)
        self.net = DenseNet(
            [n_features, hidden_units, n_classes], seed=seed, init_scale=init_scale
        )

    def copy(self) -> "MlpClassifier":
        clone = MlpClassifier.__new__(MlpClassifier)
        clone.n_features = self.n_features
        clone.n_classes = self.n_classes
        clone.hidden_units = self.hidden_units
        clone.net = self.net.copy()
        return clone

    def predict_proba(self, feature: np.ndarray) -> np.ndarray:
        """Softmax class probabilities for a single feature vector."""
        feature = np.asarray(feature, dtype=np.float64)
        if feature.ndim != 1 or feature.shape[0] != self.n_features:
            raise ClassifierError(
                f"expected a length-{self.n_features} feature vector, got shape {feature.shape}"
            )
        return softmax(self.net.forward(feature))

    def predict_proba_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ClassifierError(
                f"expected an (n, {self.n_features}) feature matrix, got shape {X.shape}"
            )
        return softmax(self.net.forward(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Argmax class per row; ties break to the lowest class index."""
        return np.argmax(self.predict_proba_batch(X), axis=1)


def cross_entropy(probs: np.ndarray, true_label: int) -> float:
    """-log probability of the true class, floored at 1e-12 before the log."""
    probs = np.asarray(probs, dtype=np.float64)
    if not (0 <= true_label < probs.shape[0]):
        raise ClassifierError(f"label {true_label} out of range for {probs.shape[0]} classes")
    return float(-np.log(max(probs[true_label], PROB_FLOOR)))


def loss_and_grads(clf: MlpClassifier, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over a batch plus gradients w.r.t. all weights."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    logits, cache = clf.net.forward_cached(X)
    probs = softmax(logits)
    n = X.shape[0]
    picked = np.clip(probs[np.arange(n), y], PROB_FLOOR, None)
    loss = float(-np.mean(np.log(picked)))
    grad_logits = probs.copy()
    grad_logits[np.arange(n), y] -= 1.0
    grad_logits /= n
    grad_w, grad_b, _ = clf.net.backward(cache, grad_logits)
    return loss, grad_w, grad_b


def train_classifier(
    clf: MlpClassifier, X: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> MlpClassifier:
    """Seeded mini-batch gradient descent on mean cross-entropy.

    Returns a trained copy; the input classifier is untouched. Zero epochs
    returns the weights unchanged.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if X.shape[0] == 0:
        raise ClassifierError("empty training set")
    if X.shape[0] != y.shape[0]:
        raise ClassifierError(f"{X.shape[0]} features but {y.shape[0]} labels")
    if y.min() < 0 or y.max() >= clf.n_classes:
        raise ClassifierError(
            f"labels must lie in [0, {clf.n_classes}), got range [{y.min()}, {y.max()}]"
        )
    if np.unique(y).size < 2:
        raise ClassifierError("training set must contain at least 2 classes")
    clf = clf.copy()
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grad_w, grad_b = loss_and_grads(clf, X[batch], y[batch])
            clf.net.apply_gradients(grad_w, grad_b, cfg.learning_rate)
    return clf


def fit_classifier(
    n_features: int,
    n_classes: int,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    hidden_units: int = DEFAULT_HIDDEN_UNITS,
) -> MlpClassifier:
    """Fresh seeded initialization followed by training."""
    clf = MlpClassifier(
        n_features, n_classes, hidden_units=hidden_units,
        seed=cfg.seed, init_scale=cfg.init_scale,
    )
    return train_classifier(clf, X, y, cfg)


def evaluate_accuracy(clf: MlpClassifier, X: np.ndarray, y: np.ndarray) -> float:
    """Fraction of holdout rows where the argmax class matches the label."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if X.shape[0] == 0:
        raise ClassifierError("empty holdout")
    return float(np.mean(clf.predict(X) == y))
