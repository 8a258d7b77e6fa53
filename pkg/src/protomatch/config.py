"""JSON experiment configuration.

A config document has optional sections, each mirroring one settings
object; omitted keys take the documented defaults and unknown keys are
rejected::

    {
      "seed": 0,
      "data":    {... LongTailSpec fields except seed ...},
      "train":   {"epochs", "batch_size", "learning_rate", "momentum",
                  "filter_enabled", "prototype_init"},
      "loss":    {"tau", "lam"},
      "fusion":  {"alpha"},
      "splits":  {"many_min", "few_max"},
      "head":    {"epochs", "learning_rate", "batch_size", "weight_decay"},
      "metrics": {"k_uniformity"}
    }

The top-level ``seed`` drives every random stream (data, init, shuffle,
pairing, head).
"""

import json
from dataclasses import dataclass, field, fields, replace

from .classifier import FusionConfig, HeadTrainConfig
from .exceptions import ConfigError
from .losses import LossConfig
from .metrics import DEFAULT_K_UNIFORMITY, SplitThresholds
from .pipeline import RecognizeConfig, TrainConfig
from .synth import LongTailSpec

_SEED_MAX = 2**64 - 1


@dataclass(frozen=True)
class MetricsConfig:
    k_uniformity: int = DEFAULT_K_UNIFORMITY

    def __post_init__(self):
        if self.k_uniformity < 1:
            raise ValueError("k_uniformity must be >= 1")


# section name -> (settings class, fields that are not user-settable here)
_SECTIONS = {
    "data": (LongTailSpec, {"seed"}),
    "train": (TrainConfig, {"loss", "seed", "k_uniformity"}),
    "loss": (LossConfig, set()),
    "fusion": (FusionConfig, set()),
    "splits": (SplitThresholds, set()),
    "head": (HeadTrainConfig, {"seed"}),
    "metrics": (MetricsConfig, set()),
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: LongTailSpec = field(default_factory=LongTailSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    splits: SplitThresholds = field(default_factory=SplitThresholds)
    head: HeadTrainConfig = field(default_factory=HeadTrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def with_seed(self, seed):
        return replace(self, seed=_check_seed(seed, "seed"))

    def spec(self):
        return replace(self.data, seed=self.seed)

    def train_config(self):
        return replace(self.train, loss=self.loss, seed=self.seed,
                       k_uniformity=self.metrics.k_uniformity)

    def recognize_config(self):
        return RecognizeConfig(
            fusion=self.fusion,
            head=replace(self.head, seed=self.seed),
            thresholds=self.splits,
            k_uniformity=self.metrics.k_uniformity,
        )

    def to_dict(self):
        """Fully resolved document; feeding it back to :func:`from_dict` reproduces ``self``."""
        out = {"seed": self.seed}
        for name, (cls, hidden) in _SECTIONS.items():
            obj = getattr(self, name)
            out[name] = {f.name: getattr(obj, f.name) for f in fields(cls) if f.name not in hidden}
        return out


def _check_seed(value, path):
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= _SEED_MAX:
        raise ConfigError(path, f"must be an unsigned 64-bit integer, got {value!r}")
    return value


def _coerce(value, annotation, path):
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, "cannot be set from a config file")


def _build_section(name, raw):
    cls, hidden = _SECTIONS[name]
    if not isinstance(raw, dict):
        raise ConfigError(name, "section must be a JSON object")
    settable = {f.name: f for f in fields(cls) if f.name not in hidden}
    kwargs = {}
    for key, value in raw.items():
        if key not in settable:
            raise ConfigError(f"{name}.{key}", f"unknown key; allowed: {sorted(settable)}")
        kwargs[key] = _coerce(value, settable[key].type, f"{name}.{key}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        # the dataclass checks name the offending field in their message
        msg = str(exc)
        named = [k for k in sorted(settable, key=len, reverse=True) if k in msg]
        culprit = next((k for k in named if k in raw), named[0] if named else None)
        raise ConfigError(f"{name}.{culprit}" if culprit else name, msg) from None


def from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    kwargs = {}
    for key, value in doc.items():
        if key == "seed":
            kwargs["seed"] = _check_seed(value, "seed")
        elif key in _SECTIONS:
            kwargs[key] = _build_section(key, value)
        else:
            raise ConfigError(key, f"unknown section; allowed: {['seed', *_SECTIONS]}")
    return ExperimentConfig(**kwargs)


def loads(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}", exc.msg) from None
    return from_dict(doc)


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
