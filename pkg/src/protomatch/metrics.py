"""Alignment, neighborhood uniformity and many/medium/few split accuracy."""

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import EmptyClassError, LengthMismatchError, TooFewClassesError
from .geometry import normalize

DEFAULT_K_UNIFORMITY = 10


@dataclass(frozen=True)
class SplitThresholds:
    """Many: train count > many_min. Few: train count < few_max. Medium: the rest."""

    many_min: int = 100
    few_max: int = 20

    def __post_init__(self):
        if self.few_max > self.many_min:
            raise ValueError(f"few_max ({self.few_max}) must not exceed many_min ({self.many_min})")

    def split_of(self, counts):
        counts = np.asarray(counts)
        return np.where(counts > self.many_min, "many",
                        np.where(counts < self.few_max, "few", "medium"))


def _class_groups(features, labels, classes=None):
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).ravel()
    if X.shape[0] != y.shape[0]:
        raise LengthMismatchError(f"{X.shape[0]} features for {y.shape[0]} labels")
    present = np.unique(y)
    classes = present if classes is None else np.asarray(classes)
    groups = []
    for c in classes:
        rows = X[y == c]
        if rows.shape[0] == 0:
            raise EmptyClassError(f"class {c} has no samples")
        groups.append(rows)
    return groups


def alignment(features, labels, classes=None):
    """Mean over classes of the average pairwise distance between same-class samples.

    All ordered pairs are counted, self-pairs included, so a class with
    n samples divides the distance sum by n**2. Lower is tighter.
    """
    total = 0.0
    groups = _class_groups(features, labels, classes)
    for rows in groups:
        sq = np.sum(rows * rows, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * rows @ rows.T, 0.0)
        np.fill_diagonal(d2, 0.0)
        total += np.sqrt(d2).sum() / rows.shape[0] ** 2
    return float(total / len(groups))


def class_centers(features, labels, classes=None):
    """Unit-normalized class means, one row per class in ``classes`` order."""
    return normalize(np.stack([rows.sum(axis=0) for rows in _class_groups(features, labels, classes)]))


def uniformity_from_centers(centers, k):
    C = centers.shape[0]
    if C < k + 1:
        raise TooFewClassesError(f"need at least {k + 1} classes for k={k}, got {C}")
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(dist, np.inf)
    nearest = np.sort(dist, axis=1)[:, :k]
    return float(nearest.sum() / (C * k))


def neighborhood_uniformity(features, labels, k=DEFAULT_K_UNIFORMITY, classes=None):
    """Mean distance from each class center to its k nearest other class centers.

    Higher means classes sit further apart on the sphere.
    """
    return uniformity_from_centers(class_centers(features, labels, classes), k)


def split_accuracy(predictions, labels, train_counts, thresholds=SplitThresholds()):
    """Accuracy overall and restricted to many/medium/few classes.

    Splits with no test samples come back as ``None``.
    """
    pred = np.asarray(predictions).ravel()
    y = np.asarray(labels).ravel()
    if pred.shape != y.shape:
        raise LengthMismatchError(f"{pred.shape[0]} predictions for {y.shape[0]} labels")
    counts = np.asarray(train_counts)
    if y.size and y.max() >= counts.shape[0]:
        raise LengthMismatchError(f"train_counts covers {counts.shape[0]} classes, label {y.max()} seen")
    correct = pred == y
    split = thresholds.split_of(counts)[y] if y.size else np.array([], dtype=str)
    out = {"accuracy_all": float(correct.mean()) if y.size else None}
    for name in ("many", "medium", "few"):
        mask = split == name
        out[f"accuracy_{name}"] = float(correct[mask].mean()) if mask.any() else None
    return out


@dataclass
class MetricsReport:
    alignment: float | None = None
    uniformity: float | None = None
    k: int = DEFAULT_K_UNIFORMITY
    accuracy_all: float | None = None
    accuracy_many: float | None = None
    accuracy_medium: float | None = None
    accuracy_few: float | None = None

    CSV_FIELDS = ("alignment", "uniformity", "k", "accuracy_all", "accuracy_many",
                  "accuracy_medium", "accuracy_few")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv_row(self, header=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.CSV_FIELDS)
        w.writerow(["" if getattr(self, f) is None else getattr(self, f) for f in self.CSV_FIELDS])
        return buf.getvalue()


def evaluate(features, labels, predictions=None, train_counts=None,
             thresholds=SplitThresholds(), k=DEFAULT_K_UNIFORMITY):
    """Build a :class:`MetricsReport`; accuracy fields need predictions and train counts."""
    report = MetricsReport(
        alignment=alignment(features, labels),
        uniformity=neighborhood_uniformity(features, labels, k),
        k=k,
    )
    if predictions is not None and train_counts is not None:
        for name, value in split_accuracy(predictions, labels, train_counts, thresholds).items():
            setattr(report, name, value)
    return report
