"""On-disk formats.

Embedding files: 4-byte magic ``PRTO``, u32 LE version, u64 LE row count,
u64 LE dimension, then row-major f32 LE values. Label files use the same
header with dim=1 and a u32 LE body. Everything else (manifests, bank and
head metadata, reports) is JSON.

Arrays are float64 in memory and float32 on disk, so a write/read round
trip is exact at 32-bit precision.
"""

import json
import os
import struct

import numpy as np

from .exceptions import FormatError, NumericalError

MAGIC = b"PRTO"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
_BODY_DTYPES = {"f32": np.dtype("<f4"), "u32": np.dtype("<u4")}


def _write(path, array, kind):
    a = np.asarray(array)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise FormatError(f"expected a 1-D or 2-D array, got {a.ndim}-D")
    if kind == "f32":
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"refusing to write non-finite values to {path}")
    elif a.size and (a.min() < 0 or a.max() > np.iinfo(np.uint32).max):
        raise FormatError("labels must fit in an unsigned 32-bit integer")
    body = np.ascontiguousarray(a, dtype=_BODY_DTYPES[kind])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1]))
        fh.write(body.tobytes())


def _read(path, kind):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    expected = rows * dim * 4
    if len(raw) - _HEADER.size != expected:
        raise FormatError(
            f"{path}: body is {len(raw) - _HEADER.size} bytes, header implies {expected}"
        )
    return np.frombuffer(raw, dtype=_BODY_DTYPES[kind], offset=_HEADER.size).reshape(rows, dim)


def write_embeddings(path, array):
    _write(path, np.asarray(array, dtype=np.float64), "f32")


def read_embeddings(path):
    """Read an embedding file into a float64 (rows, dim) array."""
    a = _read(path, "f32").astype(np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{path}: contains non-finite values")
    return a


def write_labels(path, labels):
    _write(path, np.asarray(labels, dtype=np.int64).ravel(), "u32")


def read_labels(path):
    a = _read(path, "u32")
    if a.shape[1] != 1:
        raise FormatError(f"{path}: label file must have dim=1, got {a.shape[1]}")
    return a[:, 0].astype(np.int64)


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# --- composite artifacts -------------------------------------------------

DATASET_FILES = {
    "train_images": "train_images.prto",
    "train_text": "train_text.prto",
    "train_labels": "train_labels.prto",
    "test_images": "test_images.prto",
    "test_labels": "test_labels.prto",
    "anchors": "anchors.prto",
    "image_encoder_init": "image_encoder_init.prto",
    "text_encoder_init": "text_encoder_init.prto",
}


def save_dataset(directory, dataset):
    """Write a :class:`~protomatch.synth.SyntheticDataset` plus ``manifest.json``.

    Text candidates (N, M, D) are stored flattened as N*M rows; the manifest
    records M.
    """
    j = os.path.join
    N, M, D = dataset.train_text.shape
    write_embeddings(j(directory, DATASET_FILES["train_images"]), dataset.train_images)
    write_embeddings(j(directory, DATASET_FILES["train_text"]), dataset.train_text.reshape(N * M, D))
    write_labels(j(directory, DATASET_FILES["train_labels"]), dataset.train_labels)
    write_embeddings(j(directory, DATASET_FILES["test_images"]), dataset.test_images)
    write_labels(j(directory, DATASET_FILES["test_labels"]), dataset.test_labels)
    write_embeddings(j(directory, DATASET_FILES["anchors"]), dataset.anchors)
    write_embeddings(j(directory, DATASET_FILES["image_encoder_init"]), dataset.image_encoder_init)
    write_embeddings(j(directory, DATASET_FILES["text_encoder_init"]), dataset.text_encoder_init)
    manifest = dataset.manifest()
    manifest["files"] = dict(DATASET_FILES)
    write_json(j(directory, "manifest.json"), manifest)
    return manifest


def load_dataset(directory):
    """Read a dataset directory back as a :class:`~protomatch.pipeline.MatchingData`."""
    from .pipeline import MatchingData

    j = os.path.join
    manifest = read_json(j(directory, "manifest.json"))
    M = int(manifest["text_candidates"])
    text = read_embeddings(j(directory, DATASET_FILES["train_text"]))
    if text.shape[0] % M:
        raise FormatError(f"{text.shape[0]} text rows are not a multiple of M={M}")
    labels = read_labels(j(directory, DATASET_FILES["train_labels"]))
    images = read_embeddings(j(directory, DATASET_FILES["train_images"]))
    if images.shape[0] != labels.shape[0] or text.shape[0] != labels.shape[0] * M:
        raise FormatError("train images, text candidates and labels disagree on the sample count")
    counts = np.asarray(manifest["class_counts"], dtype=np.int64)
    if not np.array_equal(np.bincount(labels, minlength=counts.shape[0]), counts):
        raise FormatError("train labels do not match the manifest class counts")
    data = MatchingData(
        train_images=images,
        train_text=text.reshape(labels.shape[0], M, -1),
        train_labels=labels,
        class_counts=counts,
        anchors=read_embeddings(j(directory, DATASET_FILES["anchors"])),
        image_encoder_init=read_embeddings(j(directory, DATASET_FILES["image_encoder_init"])),
        text_encoder_init=read_embeddings(j(directory, DATASET_FILES["text_encoder_init"])),
        test_images=read_embeddings(j(directory, DATASET_FILES["test_images"])),
        test_labels=read_labels(j(directory, DATASET_FILES["test_labels"])),
    )
    return data, manifest


def save_model(directory, encoders, bank):
    j = os.path.join
    write_embeddings(j(directory, "image_map.prto"), encoders.image_map)
    write_embeddings(j(directory, "text_map.prto"), encoders.text_map)
    write_embeddings(j(directory, "prototypes.prto"), bank.prototypes)
    write_json(j(directory, "bank.json"), {
        "n_classes": bank.n_classes,
        "dim": bank.dim,
        "frequencies": bank.frequencies.tolist(),
        "momentum": bank.momentum,
    })


def load_model(directory):
    from .pipeline import EncoderParams
    from .prototypes import PrototypeBank

    j = os.path.join
    meta = read_json(j(directory, "bank.json"))
    enc = EncoderParams(read_embeddings(j(directory, "image_map.prto")),
                        read_embeddings(j(directory, "text_map.prto")))
    bank = PrototypeBank(read_embeddings(j(directory, "prototypes.prto")),
                         meta["frequencies"], meta["momentum"])
    return enc, bank


def save_head(directory, head, alpha):
    j = os.path.join
    write_embeddings(j(directory, "head_weights.prto"), head.weights)
    write_embeddings(j(directory, "head_biases.prto"), head.biases)
    write_json(j(directory, "head.json"), {
        "n_classes": head.n_classes,
        "dim": head.dim,
        "alpha": alpha,
    })


def load_head(directory):
    from .classifier import LinearHead

    j = os.path.join
    meta = read_json(j(directory, "head.json"))
    head = LinearHead(read_embeddings(j(directory, "head_weights.prto")),
                      read_embeddings(j(directory, "head_biases.prto"))[:, 0])
    return head, float(meta["alpha"])
