"""Two-stage training at toy scale.

Stage 1 trains linear image/text encoders (each a d x D map followed by
renormalization) on the total matching loss, updating the prototype bank
by EMA after every gradient step and optionally filtering the text
candidates. Stage 2 freezes the encoders, trains a linear head on the
train embeddings and evaluates the linear, prototype and fused heads.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .classifier import (
    FusionConfig,
    HeadTrainConfig,
    argmax_lowest,
    predict_fused,
    predict_linear,
    predict_prototype,
    train_linear,
)
from .exceptions import DimensionMismatchError, NumericalError
from .geometry import rng_stream
from .losses import LabeledBatch, LossConfig, loss_parts
from .metrics import (
    DEFAULT_K_UNIFORMITY,
    MetricsReport,
    SplitThresholds,
    alignment,
    neighborhood_uniformity,
    split_accuracy,
)
from .prototypes import DEFAULT_MOMENTUM, PrototypeBank
from .text_filter import reconstruct_batch, reconstruct_batch_backward

log = logging.getLogger(__name__)

PROTOTYPE_INITS = ("anchored", "random")
LOG_FIELDS = ("epoch", "loss_total", "loss_ccl", "loss_pc", "alignment", "uniformity")


@dataclass
class EncoderParams:
    image_map: np.ndarray  # (d, D)
    text_map: np.ndarray  # (d, D)

    def copy(self):
        return EncoderParams(self.image_map.copy(), self.text_map.copy())

    @property
    def dim(self):
        return self.image_map.shape[0]

    def encode_images(self, X):
        return _encode(X, self.image_map)[0]

    def encode_text(self, X):
        return _encode(X, self.text_map)[0]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.05
    loss: LossConfig = field(default_factory=LossConfig)
    momentum: float = DEFAULT_MOMENTUM
    filter_enabled: bool = True
    prototype_init: str = "anchored"
    seed: int = 0
    k_uniformity: int = DEFAULT_K_UNIFORMITY

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")
        if self.prototype_init not in PROTOTYPE_INITS:
            raise ValueError(f"prototype_init must be one of {PROTOTYPE_INITS}")


@dataclass(frozen=True)
class RecognizeConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    head: HeadTrainConfig = field(default_factory=HeadTrainConfig)
    thresholds: SplitThresholds = field(default_factory=SplitThresholds)
    k_uniformity: int = DEFAULT_K_UNIFORMITY


@dataclass
class Stage1Result:
    encoders: EncoderParams
    bank: PrototypeBank
    log: list  # one dict per epoch, keys LOG_FIELDS


def _encode(X, W):
    U = X @ W.T
    n = np.linalg.norm(U, axis=-1, keepdims=True)
    if not np.all(np.isfinite(U)) or np.any(n == 0):
        raise NumericalError("encoder produced a non-finite or zero output")
    return U / n, n


def _project_back(grad_z, z, n):
    # gradient through z = u / |u|
    return (grad_z - np.sum(grad_z * z, axis=-1, keepdims=True) * z) / n


def initial_encoders(data, d=None, seed=0):
    """Pretrained-stand-in maps when the dataset carries them, else a seeded random projection."""
    if data.image_encoder_init is not None and data.text_encoder_init is not None:
        return EncoderParams(np.array(data.image_encoder_init, dtype=np.float64),
                             np.array(data.text_encoder_init, dtype=np.float64))
    D = data.train_images.shape[1]
    d = data.anchors.shape[1] if d is None else d
    rng = rng_stream(seed, "encoder")
    return EncoderParams(rng.standard_normal((d, D)) / np.sqrt(D),
                         rng.standard_normal((d, D)) / np.sqrt(D))


def initial_bank(data, cfg):
    K = data.n_classes
    if cfg.prototype_init == "anchored":
        return PrototypeBank.from_anchors(data.anchors, data.class_counts, cfg.momentum)
    d = data.anchors.shape[1]
    return PrototypeBank.random(d, K, data.class_counts, cfg.momentum,
                                seed=rng_stream(cfg.seed, "init"))


def text_features(enc, candidates, labels, bank, filter_enabled, pick=None):
    """Encode each sample's text side.

    With filtering on, all M candidates are encoded and blended by prototype
    similarity. With filtering off, the single candidate ``pick[i]`` is used.
    Returns the (N, d) features and a cache for :func:`_text_backward`.
    """
    if filter_enabled:
        Zc, nc = _encode(candidates, enc.text_map)
        z, fcache = reconstruct_batch(Zc, bank.prototypes[labels])
        return z, ("filter", candidates, Zc, nc, fcache)
    X = candidates[np.arange(labels.shape[0]), pick]
    z, n = _encode(X, enc.text_map)
    return z, ("single", X, z, n)


def _text_backward(grad_z, cache):
    if cache[0] == "filter":
        _, X, Zc, nc, fcache = cache
        gZc = reconstruct_batch_backward(grad_z, fcache)
        gU = _project_back(gZc, Zc, nc)
        return np.einsum("nmd,nme->de", gU, X)
    _, X, z, n = cache
    return _project_back(grad_z, z, n).T @ X


def encoder_loss_and_grads(enc, bank, images, candidates, labels, cfg, pick=None):
    """Total loss of one batch and its gradients w.r.t. both encoder maps.

    Returns ``(total, ccl, pc, grad_image_map, grad_text_map)``.
    """
    zi, ni = _encode(images, enc.image_map)
    zt, tcache = text_features(enc, candidates, labels, bank, cfg.filter_enabled, pick)
    total, ccl, pc = loss_parts(LabeledBatch(zi, zt, labels), bank, cfg.loss)
    gW_img = _project_back(total.grad_image, zi, ni).T @ images
    gW_txt = _text_backward(total.grad_text, tcache)
    return total.value, ccl.value, pc.value, gW_img, gW_txt


def stage1_match(data, cfg=TrainConfig(), encoders=None, bank=None):
    """Train the encoders with the matching loss and EMA-update the prototypes."""
    enc = (initial_encoders(data, seed=cfg.seed) if encoders is None else encoders).copy()
    bank = (initial_bank(data, cfg) if bank is None else bank).copy()
    if enc.dim != bank.dim:
        raise DimensionMismatchError(f"encoders output d={enc.dim}, prototypes d={bank.dim}")
    X_img, X_txt, y = data.train_images, data.train_text, data.train_labels
    n, M = y.shape[0], X_txt.shape[1]
    shuffle = rng_stream(cfg.seed, "shuffle")
    pairing = rng_stream(cfg.seed, "pairing")
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(n)
        pick_all = pairing.integers(0, M, size=n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xi, xt, yb, pick = X_img[idx], X_txt[idx], y[idx], pick_all[idx]
            total, ccl, pc, g_img, g_txt = encoder_loss_and_grads(enc, bank, xi, xt, yb, cfg, pick)
            if not np.isfinite(total):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            enc.image_map -= cfg.learning_rate * g_img
            enc.text_map -= cfg.learning_rate * g_txt
            zi = enc.encode_images(xi)
            zt, _ = text_features(enc, xt, yb, bank, cfg.filter_enabled, pick)
            bank.batch_ema_update(zt, zi, yb)
            sums += (total, ccl, pc)
            batches += 1
        Z = enc.encode_images(X_img)
        row = dict(zip(LOG_FIELDS[1:4], (sums / batches).tolist()))
        row["epoch"] = epoch
        row["alignment"] = alignment(Z, y)
        row["uniformity"] = neighborhood_uniformity(Z, y, cfg.k_uniformity)
        history.append(row)
        log.debug("epoch %d loss %.5f A %.4f U %.4f", epoch, row["loss_total"],
                  row["alignment"], row["uniformity"])
    return Stage1Result(enc, bank, history)


def _report(pred, test_labels, counts, Z_test, rcfg):
    acc = split_accuracy(pred, test_labels, counts, rcfg.thresholds)
    return MetricsReport(
        alignment=alignment(Z_test, test_labels),
        uniformity=neighborhood_uniformity(Z_test, test_labels, rcfg.k_uniformity),
        k=rcfg.k_uniformity,
        **acc,
    )


def stage2_recognize(encoders, bank, data, rcfg=RecognizeConfig()):
    """Train the linear head on frozen embeddings and evaluate every head.

    Returns ``(head, reports)`` with reports keyed ``linear``, ``prototype``
    and ``fused``.
    """
    Z_train = encoders.encode_images(data.train_images)
    Z_test = encoders.encode_images(data.test_images)
    head, _ = train_linear(Z_train, data.train_labels, rcfg.head, n_classes=bank.n_classes)
    probs = {
        "linear": predict_linear(head, Z_test),
        "prototype": predict_prototype(bank, Z_test),
        "fused": predict_fused(head, bank, rcfg.fusion, Z_test),
    }
    counts = data.class_counts
    reports = {name: _report(argmax_lowest(p), data.test_labels, counts, Z_test, rcfg)
               for name, p in probs.items()}
    return head, reports


ABLATION_AXES = ("lambda", "alpha", "filter", "proto_init")
ABLATION_DEFAULTS = {
    "lambda": [0.1, 0.3, 0.5, 0.7, 0.9],
    "alpha": [0.2, 0.4, 0.6, 0.8, 1.0],
    "filter": [True, False],
    "proto_init": ["anchored", "random"],
}
ABLATION_COLUMNS = ("acc_all", "acc_many", "acc_med", "acc_few", "alignment", "uniformity")


def _apply_axis(axis, value, tcfg, rcfg):
    if axis == "lambda":
        return replace(tcfg, loss=replace(tcfg.loss, lam=float(value))), rcfg
    if axis == "alpha":
        return tcfg, replace(rcfg, fusion=FusionConfig(float(value)))
    if axis == "filter":
        return replace(tcfg, filter_enabled=bool(value)), rcfg
    if axis == "proto_init":
        return replace(tcfg, prototype_init=str(value)), rcfg
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def run_ablation(axis, values, data, tcfg=TrainConfig(), rcfg=RecognizeConfig()):
    """One full two-stage run per axis value, all sharing the same data and seed.

    Returns a list of row dicts keyed by ``axis`` then ``ABLATION_COLUMNS``,
    taken from the fused head's report.
    """
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    rows = []
    cached = None
    for value in values:
        t, r = _apply_axis(axis, value, tcfg, rcfg)
        # alpha only enters stage 2, so the stage-1 run is shared
        if axis != "alpha" or cached is None:
            cached = stage1_match(data, t)
        _, reports = stage2_recognize(cached.encoders, cached.bank, data, r)
        rep = reports["fused"]
        rows.append({
            axis: value,
            "acc_all": rep.accuracy_all,
            "acc_many": rep.accuracy_many,
            "acc_med": rep.accuracy_medium,
            "acc_few": rep.accuracy_few,
            "alignment": rep.alignment,
            "uniformity": rep.uniformity,
        })
    return rows


class PrototypeMatcher(TransformerMixin, BaseEstimator):
    """Estimator wrapper around stage 1.

    ``fit(X, y, text_candidates=..., anchors=...)`` trains the encoders on
    raw image rows ``X`` (n, D), per-sample raw text candidates (n, M, D)
    and class anchors (K, d). ``transform`` maps raw image rows to unit
    embeddings.
    """

    def __init__(self, lam=0.5, tau=0.07, momentum=DEFAULT_MOMENTUM, filter_enabled=True,
                 prototype_init="anchored", epochs=100, batch_size=64, learning_rate=0.05,
                 k_uniformity=DEFAULT_K_UNIFORMITY, random_state=0):
        self.lam = lam
        self.tau = tau
        self.momentum = momentum
        self.filter_enabled = filter_enabled
        self.prototype_init = prototype_init
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.k_uniformity = k_uniformity
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            loss=LossConfig(self.tau, self.lam), momentum=self.momentum,
            filter_enabled=self.filter_enabled, prototype_init=self.prototype_init,
            seed=self.random_state, k_uniformity=self.k_uniformity,
        )

    def fit(self, X, y, text_candidates=None, anchors=None, image_encoder_init=None,
            text_encoder_init=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64).ravel()
        if text_candidates is None or anchors is None:
            raise ValueError("fit needs text_candidates and anchors")
        cands = np.asarray(text_candidates, dtype=np.float64)
        if cands.ndim == 2:
            cands = cands[:, None, :]
        anchors = check_array(anchors, dtype=np.float64)
        data = MatchingData(
            train_images=X, train_text=cands, train_labels=y,
            class_counts=np.bincount(y, minlength=anchors.shape[0]), anchors=anchors,
            image_encoder_init=image_encoder_init, text_encoder_init=text_encoder_init,
        )
        result = stage1_match(data, self._train_config())
        self.encoders_ = result.encoders
        self.bank_ = result.bank
        self.training_log_ = result.log
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "encoders_")
        return self.encoders_.encode_images(check_array(X, dtype=np.float64))


@dataclass
class MatchingData:
    """Minimal training inputs for stage 1 when no synthetic dataset is at hand."""

    train_images: np.ndarray
    train_text: np.ndarray
    train_labels: np.ndarray
    class_counts: np.ndarray
    anchors: np.ndarray
    image_encoder_init: np.ndarray | None = None
    text_encoder_init: np.ndarray | None = None
    test_images: np.ndarray | None = None
    test_labels: np.ndarray | None = None

    @property
    def n_classes(self):
        return self.class_counts.shape[0]
