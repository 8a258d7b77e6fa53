"""Normalized-vector primitives: normalization, similarity, softmax and
uniform sampling on the unit hypersphere.

All arithmetic is float64.
"""

import zlib

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    EmptyInputError,
    NonPositiveTemperatureError,
    ZeroVectorError,
)

ZERO_NORM = 1e-12
# Vectors already this close to unit length are returned as-is, which makes
# normalize() bitwise idempotent.
_UNIT_SLACK = 1e-14


def normalize(v):
    """Scale ``v`` (1-D, or 2-D row-wise) to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        n = np.linalg.norm(v)
        if n < ZERO_NORM:
            raise ZeroVectorError(f"cannot normalize vector with norm {n:.3g}")
        if abs(n - 1.0) <= _UNIT_SLACK:
            return v.copy()
        return v / n
    if v.ndim != 2:
        raise DimensionMismatchError(f"expected 1-D or 2-D input, got {v.ndim}-D")
    n = np.linalg.norm(v, axis=1)
    if np.any(n < ZERO_NORM):
        bad = int(np.argmax(n < ZERO_NORM))
        raise ZeroVectorError(f"row {bad} has norm {n[bad]:.3g}")
    n = np.where(np.abs(n - 1.0) <= _UNIT_SLACK, 1.0, n)
    return v / n[:, None]


def cosine_sim(a, b):
    """Inner product of two unit vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes {a.shape} and {b.shape} differ")
    return float(a @ b)


def softmax(scores, temperature=1.0, axis=-1):
    """Temperature-scaled softmax with max-subtraction.

    Works on 1-D score vectors or along ``axis`` of a batch.
    """
    if temperature <= 0:
        raise NonPositiveTemperatureError(f"temperature must be > 0, got {temperature}")
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or s.shape[axis] == 0:
        raise EmptyInputError("softmax over an empty score vector")
    s = s / temperature
    s = s - np.max(s, axis=axis, keepdims=True)
    e = np.exp(s)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(scores, temperature=1.0, axis=-1):
    if temperature <= 0:
        raise NonPositiveTemperatureError(f"temperature must be > 0, got {temperature}")
    s = np.asarray(scores, dtype=np.float64) / temperature
    s = s - np.max(s, axis=axis, keepdims=True)
    return s - np.log(np.sum(np.exp(s), axis=axis, keepdims=True))


_STREAMS = ("data", "init", "shuffle", "head", "pairing")


def rng_stream(seed, name):
    """Independent generator for one consumer of a root seed.

    The same (seed, name) pair always yields the same stream and different
    names never share state, so changing how one consumer draws numbers
    leaves every other stream untouched.
    """
    if name in _STREAMS:
        key = _STREAMS.index(name)
    else:
        key = 1000 + zlib.crc32(name.encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def sample_uniform_sphere(d, count, seed):
    """``count`` i.i.d. uniform draws on S^{d-1} as a (count, d) array."""
    if d < 2:
        raise DimensionMismatchError(f"sphere dimension must be >= 2, got {d}")
    if count < 1:
        raise EmptyInputError("count must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return normalize(rng.standard_normal((count, d)))
