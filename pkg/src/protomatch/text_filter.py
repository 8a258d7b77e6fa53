"""Extraneous-text filtering: rebuild one text feature from M candidate
segment features, weighted by their similarity to the class prototype."""

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatchError, EmptyInputError, ZeroVectorError
from .geometry import ZERO_NORM, softmax


@dataclass
class TextCandidateSet:
    candidates: np.ndarray  # (M, d) unit rows
    class_id: int

    def __post_init__(self):
        self.candidates = np.atleast_2d(np.asarray(self.candidates, dtype=np.float64))
        if self.candidates.shape[0] < 1:
            raise EmptyInputError("a candidate set needs at least one text feature")


def _prototype_for(cset, bank):
    bank.check_class(cset.class_id)
    if cset.candidates.shape[1] != bank.dim:
        raise DimensionMismatchError(
            f"candidates have d={cset.candidates.shape[1]}, prototypes d={bank.dim}"
        )
    return bank.prototypes[int(cset.class_id)]


def filter_weights(cset, bank):
    """Softmax (temperature 1) of candidate-prototype inner products."""
    c = _prototype_for(cset, bank)
    return softmax(cset.candidates @ c)


def reconstruct(cset, bank):
    """Weighted candidate blend, renormalized to the sphere."""
    w = filter_weights(cset, bank)
    s = w @ cset.candidates
    n = np.linalg.norm(s)
    if n < ZERO_NORM:
        raise ZeroVectorError("candidate blend cancels out (antipodal candidates)")
    if cset.candidates.shape[0] == 1:
        return cset.candidates[0].copy()
    return s / n


def most_relevant(cset, bank):
    """Index of the largest-weight candidate; ties go to the lowest index."""
    return int(np.argmax(filter_weights(cset, bank)))


def reconstruct_batch(candidates, prototypes):
    """Vectorized :func:`reconstruct` for many samples at once.

    Parameters
    ----------
    candidates : (N, M, d) array of unit candidate features
    prototypes : (N, d) array, the prototype of each sample's class

    Returns
    -------
    z : (N, d) reconstructed unit features
    cache : tuple
        Intermediate values consumed by :func:`reconstruct_batch_backward`.
    """
    scores = np.einsum("nmd,nd->nm", candidates, prototypes)
    w = softmax(scores, axis=1)
    s = np.einsum("nm,nmd->nd", w, candidates)
    norm = np.linalg.norm(s, axis=1)
    if np.any(norm < ZERO_NORM):
        raise ZeroVectorError("candidate blend cancels out (antipodal candidates)")
    z = s / norm[:, None]
    return z, (candidates, prototypes, w, norm, z)


def reconstruct_batch_backward(grad_z, cache):
    """Gradient of a loss w.r.t. each candidate, given its gradient w.r.t. the
    reconstructed features. Prototypes are treated as constants."""
    candidates, prototypes, w, norm, z = cache
    # through the renormalization z = s / |s|
    gs = (grad_z - np.sum(grad_z * z, axis=1, keepdims=True) * z) / norm[:, None]
    # s = sum_i w_i x_i with w = softmax(x_i . c)
    b = np.einsum("nmd,nd->nm", candidates, gs)
    b_bar = np.sum(w * b, axis=1, keepdims=True)
    return w[:, :, None] * gs[:, None, :] + (w * (b - b_bar))[:, :, None] * prototypes[:, None, :]
