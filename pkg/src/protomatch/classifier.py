"""Recognition heads: a learnable linear classifier, the prototype classifier,
and their convex fusion."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ClassOutOfRangeError, DimensionMismatchError
from .geometry import log_softmax, rng_stream, softmax
from .prototypes import PrototypeBank

DEFAULT_ALPHA = 0.8


@dataclass
class LinearHead:
    weights: np.ndarray  # (K, d)
    biases: np.ndarray  # (K,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64).ravel()
        if self.weights.ndim != 2 or self.biases.shape[0] != self.weights.shape[0]:
            raise DimensionMismatchError(
                f"weights {self.weights.shape} and biases {self.biases.shape} are inconsistent"
            )

    @classmethod
    def zeros(cls, K, d):
        return cls(np.zeros((K, d)), np.zeros(K))

    @property
    def n_classes(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    def logits(self, z):
        return z @ self.weights.T + self.biases


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class HeadTrainConfig:
    epochs: int = 20
    learning_rate: float = 1.0
    batch_size: int = 64
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.weight_decay >= 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


def _as_queries(z, d):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != d:
        raise DimensionMismatchError(f"queries have d={z.shape[1]}, expected {d}")
    return z, single


def predict_linear(head, z):
    """Class probabilities softmax(W z + b); ``z`` may be (d,) or (n, d)."""
    q, single = _as_queries(z, head.dim)
    p = softmax(head.logits(q), axis=1)
    return p[0] if single else p


def predict_prototype(bank, z):
    """Class probabilities softmax(z . c_j) over the prototypes."""
    q, single = _as_queries(z, bank.dim)
    p = softmax(q @ bank.prototypes.T, axis=1)
    return p[0] if single else p


def predict_fused(head, bank, cfg, z):
    """Convex blend ``alpha * P_prototype + (1 - alpha) * P_linear``.

    The endpoints return the corresponding head's output unchanged.
    """
    alpha = cfg.alpha if isinstance(cfg, FusionConfig) else float(cfg)
    if alpha == 0.0:
        return predict_linear(head, z)
    if alpha == 1.0:
        return predict_prototype(bank, z)
    return alpha * predict_prototype(bank, z) + (1.0 - alpha) * predict_linear(head, z)


def cross_entropy(head, features, labels):
    logp = log_softmax(head.logits(features), axis=1)
    return float(-logp[np.arange(labels.shape[0]), labels].mean())


def train_linear(features, labels, cfg=HeadTrainConfig(), n_classes=None):
    """Mini-batch gradient descent on mean cross-entropy from a zero head.

    Returns ``(head, final_loss)`` where ``final_loss`` is the full-data
    cross-entropy after the last epoch.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatchError(f"{X.shape} features for {y.shape[0]} labels")
    K = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if y.min() < 0 or y.max() >= K:
        raise ClassOutOfRangeError(f"labels must lie in [0, {K})")
    head = LinearHead.zeros(K, X.shape[1])
    rng = rng_stream(cfg.seed, "head")
    n = X.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            g = softmax(head.logits(xb), axis=1)
            g[np.arange(idx.size), yb] -= 1.0
            g /= idx.size
            # decoupled weight decay, applied to weights and biases alike
            head.weights -= cfg.learning_rate * (g.T @ xb + cfg.weight_decay * head.weights)
            head.biases -= cfg.learning_rate * (g.sum(axis=0) + cfg.weight_decay * head.biases)
    return head, cross_entropy(head, X, y)


def argmax_lowest(p):
    """Row-wise argmax; numpy already resolves ties toward the lowest index."""
    return np.argmax(p, axis=-1)


class FusedPrototypeClassifier(ClassifierMixin, BaseEstimator):
    """Linear head trained on frozen embeddings, fused with fixed prototypes at inference.

    Parameters
    ----------
    prototypes : array of shape (K, n_features)
        Class prototypes, row k for class k. Labels passed to ``fit`` must be
        integers in [0, K).
    alpha : float, default=0.8
        Weight of the prototype head. ``alpha=0`` is the plain linear head,
        ``alpha=1`` the plain prototype classifier.
    epochs, learning_rate, batch_size, random_state
        Settings for the linear head's gradient descent.
    """

    def __init__(self, prototypes=None, alpha=DEFAULT_ALPHA, epochs=20, learning_rate=1.0,
                 batch_size=64, random_state=0):
        self.prototypes = prototypes
        self.alpha = alpha
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if self.prototypes is None:
            raise ValueError("prototypes must be provided")
        protos = check_array(self.prototypes, dtype=np.float64)
        if protos.shape[1] != X.shape[1]:
            raise DimensionMismatchError(
                f"prototypes have d={protos.shape[1]}, X has {X.shape[1]} features"
            )
        K = protos.shape[0]
        y = np.asarray(y, dtype=np.int64)
        counts = np.bincount(y, minlength=K)
        if counts.shape[0] > K:
            raise ClassOutOfRangeError(f"labels must lie in [0, {K})")
        self.bank_ = PrototypeBank(protos, np.maximum(counts, 1), momentum=1.0)
        cfg = HeadTrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                              batch_size=self.batch_size, seed=self.random_state)
        self.head_, self.training_loss_ = train_linear(X, y, cfg, n_classes=K)
        self.classes_ = np.arange(K)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "head_")
        X = check_array(X, dtype=np.float64)
        return predict_fused(self.head_, self.bank_, FusionConfig(self.alpha), X)

    def predict(self, X):
        return self.classes_[argmax_lowest(self.predict_proba(X))]
