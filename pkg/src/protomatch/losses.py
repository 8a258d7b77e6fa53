"""Matching-stage objectives and their closed-form gradients.

Gradients are taken with respect to the (already normalized) image and text
features only. Prototypes are never gradient-trained; projecting the
gradients back through the normalization is the encoder's job.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ClassOutOfRangeError, DimensionMismatchError, EmptyBatchError
from .geometry import log_softmax

DEFAULT_TAU = 0.07
DEFAULT_LAMBDA = 0.5
# Denominator floor for gradient comparison: entries smaller than this in
# magnitude are compared absolutely, so a stationary point reports ~0.
DEFAULT_GRAD_FLOOR = 1.0


@dataclass(frozen=True)
class LossConfig:
    tau: float = DEFAULT_TAU
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


@dataclass
class LabeledBatch:
    """Paired (N, d) image and text features with integer class labels."""

    image_features: np.ndarray
    text_features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.image_features = np.asarray(self.image_features, dtype=np.float64)
        self.text_features = np.asarray(self.text_features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        zi, zt = self.image_features, self.text_features
        if zi.ndim != 2 or zt.ndim != 2 or zi.shape != zt.shape:
            raise DimensionMismatchError(
                f"image {zi.shape} and text {zt.shape} features must be matching (N, d) arrays"
            )
        if self.labels.shape[0] != zi.shape[0]:
            raise DimensionMismatchError(
                f"{self.labels.shape[0]} labels for {zi.shape[0]} feature pairs"
            )

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.image_features.shape[1]


@dataclass
class LossValueWithGrads:
    value: float
    grad_image: np.ndarray
    grad_text: np.ndarray

    def __add__(self, other):
        return LossValueWithGrads(
            self.value + other.value,
            self.grad_image + other.grad_image,
            self.grad_text + other.grad_text,
        )

    def scaled(self, w):
        return LossValueWithGrads(w * self.value, w * self.grad_image, w * self.grad_text)


def _prototype_ce(z, C, labels, tau):
    # mean cross-entropy of softmax(z C^T / tau) against labels, and d/dz
    n = z.shape[0]
    logits = z @ C.T
    logp = log_softmax(logits, tau, axis=1)
    rows = np.arange(n)
    value = -logp[rows, labels].sum() / n
    g = np.exp(logp)
    g[rows, labels] -= 1.0
    return value, (g @ C) / (tau * n)


def loss_pc(batch, bank, cfg=LossConfig()):
    """Prototype contrastive loss.

    Per sample: cross-entropy of the image feature and of the text feature
    against the true-class prototype, softmax over all K prototypes at
    temperature ``tau``. Averaged over the batch.
    """
    if len(batch) == 0:
        raise EmptyBatchError("loss_pc on an empty batch")
    C = bank.prototypes
    if batch.dim != C.shape[1]:
        raise DimensionMismatchError(f"features have d={batch.dim}, prototypes d={C.shape[1]}")
    y = batch.labels
    if y.min() < 0 or y.max() >= C.shape[0]:
        raise ClassOutOfRangeError(f"labels must lie in [0, {C.shape[0]})")
    vi, gi = _prototype_ce(batch.image_features, C, y, cfg.tau)
    vt, gt = _prototype_ce(batch.text_features, C, y, cfg.tau)
    return LossValueWithGrads(float(vi + vt), gi, gt)


def loss_ccl(batch, cfg=LossConfig()):
    """Category-level bidirectional contrastive loss.

    Each image scores against every text in the batch; its positives are the
    texts sharing its class (its own partner included). Symmetrically for
    texts against images. Each term averages the negative log-probability
    over the positive set; the result is averaged over anchors.
    """
    n = len(batch)
    if n == 0:
        raise EmptyBatchError("loss_ccl on an empty batch")
    zi, zt, y = batch.image_features, batch.text_features, batch.labels
    tau = cfg.tau
    pos = (y[:, None] == y[None, :]).astype(np.float64)
    target = pos / pos.sum(axis=1, keepdims=True)

    S = zi @ zt.T
    logp_i2t = log_softmax(S, tau, axis=1)
    logp_t2i = log_softmax(S.T, tau, axis=1)
    value = -(np.sum(target * logp_i2t) + np.sum(target * logp_t2i)) / n

    # dL/dS, with S[i, j] = zi[i] . zt[j]; the text direction scores S^T
    dS = (np.exp(logp_i2t) - target) + (np.exp(logp_t2i) - target).T
    dS /= tau * n
    return LossValueWithGrads(float(value), dS @ zt, dS.T @ zi)


def loss_total(batch, bank, cfg=LossConfig()):
    """``loss_ccl + lam * loss_pc``; ``lam == 0`` skips the prototype term entirely."""
    ccl = loss_ccl(batch, cfg)
    if cfg.lam == 0:
        return ccl
    return ccl + loss_pc(batch, bank, cfg).scaled(cfg.lam)


def loss_parts(batch, bank, cfg=LossConfig()):
    """``(total, ccl, pc)`` with ``total`` identical to :func:`loss_total`."""
    ccl = loss_ccl(batch, cfg)
    pc = loss_pc(batch, bank, cfg)
    total = ccl if cfg.lam == 0 else ccl + pc.scaled(cfg.lam)
    return total, ccl, pc


def relative_error(analytic, numeric, floor=DEFAULT_GRAD_FLOOR):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(f, x, step):
    """Central differences of scalar ``f`` at every coordinate of array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g


def check_gradients(batch, bank, cfg=LossConfig(), step=1e-5, loss=None, floor=DEFAULT_GRAD_FLOOR):
    """Largest relative error between analytic and central-difference gradients.

    ``loss`` defaults to :func:`loss_total`; any callable ``loss(batch)``
    returning :class:`LossValueWithGrads` may be passed instead. See
    :func:`relative_error` for ``floor``; pass a tiny floor for a purely
    relative comparison.
    """
    if not 0 < step <= 1e-2:
        raise ValueError(f"step must lie in (0, 1e-2], got {step}")
    if not floor > 0:
        raise ValueError(f"floor must be > 0, got {floor}")
    if loss is None:
        def loss(b):
            return loss_total(b, bank, cfg)

    analytic = loss(batch)

    def f_image(zi):
        return loss(LabeledBatch(zi, batch.text_features, batch.labels)).value

    def f_text(zt):
        return loss(LabeledBatch(batch.image_features, zt, batch.labels)).value

    num_i = numeric_gradient(f_image, batch.image_features, step)
    num_t = numeric_gradient(f_text, batch.text_features, step)
    return float(max(
        relative_error(analytic.grad_image, num_i, floor).max(),
        relative_error(analytic.grad_text, num_t, floor).max(),
    ))
