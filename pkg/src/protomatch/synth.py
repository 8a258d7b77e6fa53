"""Deterministic long-tailed paired image/text embedding datasets.

Geometry of a generated dataset:

* ``anchors`` are K well-spread unit directions in the d-dim embedding
  space, standing in for pretrained anchor-text features.
* ``g_k`` are the head-dominated class directions: ``g_k = a_k`` for head
  classes, while tail classes are pulled toward a shared hub direction.
* Text candidates live in a D-dim raw space. Relevant candidates lie within
  ``RELEVANT_MAX_ANGLE`` of their class text center ``Q_T g_k``, so the
  descriptions of rare classes are as confusable as their images;
  distractor candidates lie near one of a few class-independent "generic
  topic" directions. The anchor text of class k is ``Q_T a_k``.
* Image inputs are ``Q_I a_k`` plus isotropic Gaussian noise, so every
  class is linearly recoverable from the raw image space.
* The pretrained encoders are returned as initial maps. The text encoder
  is ``Q_T^T``, so encoding an anchor text reproduces its anchor exactly.
  The image encoder is the least-squares linear map sending ``Q_I a_k`` to
  ``g_k``, so tail classes start out crowded together in the embedding
  space.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import normalize, rng_stream

RELEVANT_MAX_ANGLE = 0.5  # radians; bound on relevant candidate deviation


@dataclass(frozen=True)
class LongTailSpec:
    classes: int = 20
    dim_raw: int = 64
    dim: int = 16
    n_max: int = 200
    imbalance: float = 20.0
    n_test: int = 20
    text_candidates: int = 4
    noise_fraction: float = 0.25
    spread: float = 1.5
    tail_fraction: float = 0.5
    tail_clustering: float = 0.98
    distractor_topics: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("classes must be >= 2")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.dim_raw < self.dim:
            raise ValueError("dim_raw must be >= dim")
        for name in ("n_max", "n_test", "text_candidates", "distractor_topics"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.tail_fraction <= 1:
            raise ValueError("tail_fraction must lie in (0, 1]")
        if not self.imbalance >= 1:
            raise ValueError("imbalance must be >= 1")
        if not 0 <= self.noise_fraction < 1:
            raise ValueError("noise_fraction must lie in [0, 1)")
        if not self.spread >= 0:
            raise ValueError("spread must be >= 0")
        if not 0 <= self.tail_clustering < 1:
            raise ValueError("tail_clustering must lie in [0, 1)")

    @property
    def n_tail(self):
        return min(self.classes, max(2, int(round(self.tail_fraction * self.classes))))


@dataclass
class SyntheticDataset:
    spec: LongTailSpec
    train_images: np.ndarray  # (N, D)
    train_text: np.ndarray  # (N, M, D) unit candidates
    train_labels: np.ndarray  # (N,)
    test_images: np.ndarray  # (n_test * K, D)
    test_labels: np.ndarray
    class_counts: np.ndarray  # (K,)
    anchors: np.ndarray  # (K, d)
    image_directions: np.ndarray = field(repr=False)  # (K, d), the g_k
    image_encoder_init: np.ndarray = field(repr=False)  # (d, D)
    text_encoder_init: np.ndarray = field(repr=False)  # (d, D)

    @property
    def text_centers(self):
        """(K, D) raw-space centers of each class's relevant text candidates."""
        return self.image_directions @ self.text_encoder_init

    @property
    def n_classes(self):
        return self.class_counts.shape[0]

    @property
    def frequencies(self):
        return self.class_counts / self.class_counts.sum()

    def manifest(self):
        return {
            "spec": asdict(self.spec),
            "class_counts": [int(c) for c in self.class_counts],
            "n_train": int(self.train_labels.shape[0]),
            "n_test": int(self.test_labels.shape[0]),
            "text_candidates": int(self.train_text.shape[1]),
            "dim_raw": int(self.train_images.shape[1]),
            "dim": int(self.anchors.shape[1]),
        }


def class_counts_profile(K, n_max, imbalance):
    """Exponentially decaying per-class counts from ``n_max`` down to ``n_max / imbalance``."""
    if imbalance < 1:
        raise ValueError(f"imbalance must be >= 1, got {imbalance}")
    if K == 1:
        return np.array([n_max], dtype=np.int64)
    k = np.arange(K)
    # np.round is round-half-to-even
    counts = np.round(n_max * float(imbalance) ** (-k / (K - 1)))
    return np.maximum(1, counts).astype(np.int64)


def spread_directions(K, d, rng, iters=300, sharpness=8.0, lr=0.05):
    """K unit vectors pushed apart by gradient descent on a soft-max repulsion energy."""
    X = normalize(rng.standard_normal((K, d)))
    if K == 1:
        return X
    for _ in range(iters):
        G = X @ X.T
        np.fill_diagonal(G, -np.inf)
        W = np.exp(sharpness * (G - G.max(axis=1, keepdims=True)))
        W /= W.sum(axis=1, keepdims=True)
        grad = W @ X
        grad -= np.sum(grad * X, axis=1, keepdims=True) * X
        X = normalize(X - lr * grad)
    return X


def _orthonormal_columns(D, d, rng):
    q, r = np.linalg.qr(rng.standard_normal((D, d)))
    return q * np.sign(np.diag(r))


def _perturb_within(centers, max_angle, rng):
    """Rotate each unit row of ``centers`` by a uniform angle in [0, max_angle]
    toward a uniformly random orthogonal direction."""
    n, D = centers.shape
    v = rng.standard_normal((n, D))
    v -= np.sum(v * centers, axis=1, keepdims=True) * centers
    v = normalize(v)
    theta = rng.uniform(0.0, max_angle, size=n)
    return normalize(np.cos(theta)[:, None] * centers + np.sin(theta)[:, None] * v)


def generate(spec=LongTailSpec()):
    rng = rng_stream(spec.seed, "data")
    K, D, d, M = spec.classes, spec.dim_raw, spec.dim, spec.text_candidates

    anchors = spread_directions(K, d, rng)
    tail = np.arange(K - spec.n_tail, K)
    image_dirs = anchors.copy()
    hub = anchors[K - 1]
    beta = spec.tail_clustering
    image_dirs[tail] = normalize((1.0 - beta) * anchors[tail] + beta * hub)

    Q_img = _orthonormal_columns(D, d, rng)
    Q_txt = _orthonormal_columns(D, d, rng)
    text_centers = image_dirs @ Q_txt.T  # (K, D), unit rows
    topics = normalize(rng.standard_normal((spec.distractor_topics, D)))

    counts = class_counts_profile(K, spec.n_max, spec.imbalance)
    train_labels = np.repeat(np.arange(K), counts)
    test_labels = np.repeat(np.arange(K), spec.n_test)

    # least-squares bias_map with bias_map a_k ~ g_k for every class. With
    # K <= d the repelled anchors are close to a simplex (nearly rank K-1), so
    # tiny singular values are truncated instead of inverted.
    bias_map = np.linalg.lstsq(anchors, image_dirs, rcond=1e-6)[0].T
    image_encoder = bias_map @ Q_img.T

    noise_scale = spec.spread / np.sqrt(D)
    image_means = anchors @ Q_img.T

    def images(labels):
        return image_means[labels] + noise_scale * rng.standard_normal((labels.shape[0], D))

    train_images = images(train_labels)
    test_images = images(test_labels)

    N = train_labels.shape[0]
    n_noise = int(np.floor(spec.noise_fraction * M))
    relevant = _perturb_within(np.repeat(text_centers[train_labels], M, axis=0), RELEVANT_MAX_ANGLE, rng)
    relevant = relevant.reshape(N, M, D)
    if n_noise:
        topic_ids = rng.integers(0, spec.distractor_topics, size=N * n_noise)
        distract = _perturb_within(topics[topic_ids], RELEVANT_MAX_ANGLE, rng).reshape(N, n_noise, D)
        slots = np.argsort(rng.random((N, M)), axis=1)[:, :n_noise]
        rows = np.arange(N)[:, None]
        relevant[rows, slots] = distract
    text = relevant

    return SyntheticDataset(
        spec=spec,
        train_images=train_images,
        train_text=text,
        train_labels=train_labels,
        test_images=test_images,
        test_labels=test_labels,
        class_counts=counts,
        anchors=anchors,
        image_directions=image_dirs,
        image_encoder_init=image_encoder,
        text_encoder_init=Q_txt.T.copy(),
    )


def distractor_mask(dataset):
    """Boolean (N, M) mask of candidates farther than the relevant bound from their class text center."""
    centers = dataset.text_centers
    cos = np.einsum("nmd,nd->nm", dataset.train_text, centers[dataset.train_labels])
    return cos < np.cos(RELEVANT_MAX_ANGLE) - 1e-9
