"""Category prototypes on the unit hypersphere with frequency-weighted EMA updates."""

import numpy as np

from .exceptions import (
    ClassOutOfRangeError,
    CountMismatchError,
    DimensionMismatchError,
    NegativeFrequencyError,
)
from .geometry import normalize, sample_uniform_sphere

DEFAULT_MOMENTUM = 0.999


def _check_frequencies(frequencies, K):
    pi = np.asarray(frequencies, dtype=np.float64).ravel()
    if pi.shape[0] != K:
        raise CountMismatchError(f"{pi.shape[0]} frequencies for {K} prototypes")
    if np.any(pi < 0) or not np.all(np.isfinite(pi)):
        raise NegativeFrequencyError("class frequencies must be finite and nonnegative")
    total = pi.sum()
    if total <= 0:
        raise NegativeFrequencyError("class frequencies sum to zero")
    return pi / total


class PrototypeBank:
    """K unit-norm class prototypes, the class-frequency vector and EMA momentum.

    The bank is mutated in place by :meth:`ema_update`; updates must be
    serialized by the caller. Use :meth:`copy` to snapshot.

    Parameters
    ----------
    prototypes : array of shape (K, d)
        Rows are normalized on construction.
    frequencies : array of shape (K,)
        Class sample fractions; renormalized to sum to one.
    momentum : float
        EMA coefficient in [0, 1].
    """

    def __init__(self, prototypes, frequencies, momentum=DEFAULT_MOMENTUM):
        protos = np.asarray(prototypes, dtype=np.float64)
        if protos.ndim != 2:
            raise DimensionMismatchError("prototypes must be a (K, d) matrix")
        if not 0.0 <= momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {momentum}")
        self.prototypes = normalize(protos)
        self.frequencies = _check_frequencies(frequencies, protos.shape[0])
        self.momentum = float(momentum)

    @classmethod
    def from_anchors(cls, anchors, frequencies, momentum=DEFAULT_MOMENTUM):
        anchors = np.asarray(anchors, dtype=np.float64)
        if anchors.ndim != 2 or anchors.shape[0] != np.asarray(frequencies).size:
            raise CountMismatchError(
                f"{anchors.shape[0] if anchors.ndim else 0} anchors for "
                f"{np.asarray(frequencies).size} class frequencies"
            )
        return cls(anchors, frequencies, momentum)

    @classmethod
    def random(cls, d, K, frequencies, momentum=DEFAULT_MOMENTUM, seed=0):
        if np.asarray(frequencies).size != K:
            raise CountMismatchError(f"{np.asarray(frequencies).size} frequencies for {K} classes")
        return cls(sample_uniform_sphere(d, K, seed), frequencies, momentum)

    @property
    def n_classes(self):
        return self.prototypes.shape[0]

    @property
    def dim(self):
        return self.prototypes.shape[1]

    def copy(self):
        new = object.__new__(PrototypeBank)
        new.prototypes = self.prototypes.copy()
        new.frequencies = self.frequencies.copy()
        new.momentum = self.momentum
        return new

    def check_class(self, class_id):
        if not 0 <= int(class_id) < self.n_classes:
            raise ClassOutOfRangeError(f"class {class_id} outside [0, {self.n_classes})")

    def ema_update(self, class_id, z_text, z_image):
        """Move prototype ``class_id`` toward the frequency-weighted text/image blend.

        c <- m c + (1 - m) (z_text + pi_k z_image) / (pi_k + 1), then renormalized.
        The image feature of a rare class contributes less, so scarce tail
        images cannot drag their prototype far.
        """
        self.check_class(class_id)
        k = int(class_id)
        m = self.momentum
        if m == 1.0:
            return self
        z_text = np.asarray(z_text, dtype=np.float64)
        z_image = np.asarray(z_image, dtype=np.float64)
        if z_text.shape != (self.dim,) or z_image.shape != (self.dim,):
            raise DimensionMismatchError(f"features must have dimension {self.dim}")
        pi_k = self.frequencies[k]
        target = (z_text + pi_k * z_image) / (pi_k + 1.0)
        self.prototypes[k] = normalize(m * self.prototypes[k] + (1.0 - m) * target)
        return self

    def batch_ema_update(self, z_text, z_image, labels):
        """Apply :meth:`ema_update` per sample, in ascending sample order."""
        z_text = np.asarray(z_text, dtype=np.float64)
        z_image = np.asarray(z_image, dtype=np.float64)
        labels = np.asarray(labels)
        if labels.size == 0:
            return self
        if z_text.ndim != 2 or z_text.shape[1] != self.dim or z_image.shape != z_text.shape:
            raise DimensionMismatchError(
                f"batch features {z_text.shape}/{z_image.shape} do not match bank dim {self.dim}"
            )
        for i in range(labels.shape[0]):
            self.ema_update(labels[i], z_text[i], z_image[i])
        return self

    def __repr__(self):
        return f"PrototypeBank(K={self.n_classes}, d={self.dim}, momentum={self.momentum})"


def init_from_anchors(anchors, frequencies, momentum=DEFAULT_MOMENTUM):
    return PrototypeBank.from_anchors(anchors, frequencies, momentum)


def init_random(d, K, frequencies, momentum=DEFAULT_MOMENTUM, seed=0):
    return PrototypeBank.random(d, K, frequencies, momentum, seed)


def ema_update(bank, class_id, z_text, z_image):
    return bank.ema_update(class_id, z_text, z_image)


def batch_ema_update(bank, batch):
    """Sequential per-sample EMA over a :class:`~protomatch.losses.LabeledBatch`."""
    return bank.batch_ema_update(batch.text_features, batch.image_features, batch.labels)
