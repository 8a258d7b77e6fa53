"""``protomatch`` command-line interface.

Subcommands: generate, match, recognize, ablate, eval. Each writes its
outputs plus a ``run_manifest.json`` holding the fully resolved config, so
a run can be repeated from the manifest alone. Outputs are staged in a
temporary directory and only moved into ``--out`` on success.

Exit codes: 0 success, 2 invalid input or config, 3 I/O failure,
4 numerical failure. Errors are printed to stderr as one JSON object.
Log verbosity comes from the ``PROTOMATCH_LOG_LEVEL`` environment variable.
"""

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace

import numpy as np

from . import config as config_mod
from . import io
from .classifier import FusionConfig
from .exceptions import ConfigError, FormatError, NumericalError, ProtoMatchError
from .metrics import MetricsReport, evaluate
from .pipeline import (
    ABLATION_AXES,
    ABLATION_COLUMNS,
    ABLATION_DEFAULTS,
    LOG_FIELDS,
    PROTOTYPE_INITS,
    run_ablation,
    stage1_match,
    stage2_recognize,
)
from .synth import generate

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
LOG_ENV = "PROTOMATCH_LOG_LEVEL"

log = logging.getLogger("protomatch")


class CliError(Exception):
    def __init__(self, code, kind, message, field=None):
        super().__init__(message)
        self.code, self.kind, self.field = code, kind, field


# --- config resolution ---------------------------------------------------

def resolve_config(args):
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else config_mod.ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "lam", None) is not None:
        cfg = _override(cfg, "loss", "lam", lambda: replace(cfg.loss, lam=args.lam))
    if getattr(args, "alpha", None) is not None:
        cfg = _override(cfg, "fusion", "alpha", lambda: FusionConfig(args.alpha))
    if getattr(args, "no_filter", False):
        cfg = replace(cfg, train=replace(cfg.train, filter_enabled=False))
    if getattr(args, "proto_init", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, prototype_init=args.proto_init))
    if getattr(args, "k_uniformity", None) is not None:
        cfg = _override(cfg, "metrics", "k_uniformity",
                        lambda: config_mod.MetricsConfig(args.k_uniformity))
    return cfg


def _override(cfg, section, key, build):
    try:
        return replace(cfg, **{section: build()})
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}", str(exc)) from None


def _manifest(command, cfg, **inputs):
    return {"command": command, "config": cfg.to_dict(), "inputs": inputs}


# --- output helpers ------------------------------------------------------

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])


def _write_reports(directory, reports):
    io.write_json(os.path.join(directory, "reports.json"),
                  {name: rep.to_dict() for name, rep in reports.items()})
    header = ("classifier", *MetricsReport.CSV_FIELDS)
    rows = [{"classifier": name, **rep.to_dict()} for name, rep in reports.items()]
    _write_csv(os.path.join(directory, "reports.csv"), header, rows)


# --- commands ------------------------------------------------------------

def cmd_generate(args, cfg, out):
    spec = cfg.spec()
    data = generate(spec)
    manifest = io.save_dataset(out, data)
    log.info("generated %d train / %d test samples", manifest["n_train"], manifest["n_test"])
    return _manifest("generate", cfg)


def cmd_match(args, cfg, out):
    data, _ = io.load_dataset(args.data)
    result = stage1_match(data, cfg.train_config())
    io.save_model(out, result.encoders, result.bank)
    _write_csv(os.path.join(out, "training_log.csv"), LOG_FIELDS, result.log)
    return _manifest("match", cfg, data=args.data)


def cmd_recognize(args, cfg, out):
    data, _ = io.load_dataset(args.data)
    encoders, bank = io.load_model(args.model)
    rcfg = cfg.recognize_config()
    head, reports = stage2_recognize(encoders, bank, data, rcfg)
    io.save_head(out, head, rcfg.fusion.alpha)
    _write_reports(out, reports)
    return _manifest("recognize", cfg, data=args.data, model=args.model)


def _parse_values(axis, text):
    if text is None:
        return list(ABLATION_DEFAULTS[axis])
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ConfigError("values", "no values given")
    if axis in ("lambda", "alpha"):
        try:
            return [float(t) for t in items]
        except ValueError:
            raise ConfigError("values", f"expected numbers, got {text!r}") from None
    if axis == "filter":
        table = {"true": True, "on": True, "1": True, "false": False, "off": False, "0": False}
        if any(t.lower() not in table for t in items):
            raise ConfigError("values", f"expected booleans, got {text!r}")
        return [table[t.lower()] for t in items]
    if any(t not in PROTOTYPE_INITS for t in items):
        raise ConfigError("values", f"expected values from {PROTOTYPE_INITS}, got {text!r}")
    return items


def cmd_ablate(args, cfg, out):
    values = _parse_values(args.axis, args.values)
    data, _ = io.load_dataset(args.data)
    try:
        rows = run_ablation(args.axis, values, data, cfg.train_config(), cfg.recognize_config())
    except ValueError as exc:
        if isinstance(exc, ProtoMatchError):
            raise
        raise ConfigError("values", str(exc)) from None
    _write_csv(os.path.join(out, "sweep.csv"), (args.axis, *ABLATION_COLUMNS), rows)
    return _manifest("ablate", cfg, data=args.data, axis=args.axis, values=values)


def cmd_eval(args, cfg, out):
    features = io.read_embeddings(args.features)
    labels = io.read_labels(args.labels)
    predictions = io.read_labels(args.predictions) if args.predictions else None
    counts = None
    if args.train_labels:
        train = io.read_labels(args.train_labels)
        counts = np.bincount(train, minlength=int(labels.max()) + 1)
    elif predictions is not None:
        raise ConfigError("train-labels", "split accuracy needs --train-labels")
    report = evaluate(features, labels, predictions, counts, cfg.splits, cfg.metrics.k_uniformity)
    io.write_json(os.path.join(out, "report.json"), report.to_dict())
    with open(os.path.join(out, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv_row())
    return _manifest("eval", cfg, features=args.features, labels=args.labels,
                     predictions=args.predictions, train_labels=args.train_labels)


COMMANDS = {
    "generate": cmd_generate,
    "match": cmd_match,
    "recognize": cmd_recognize,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
}


# --- argument parsing ----------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="protomatch", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, train=False, fusion=False):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="root seed; overrides the config")
        sp.add_argument("--k-uniformity", type=int, dest="k_uniformity")
        if train:
            sp.add_argument("--lambda", type=float, dest="lam")
            sp.add_argument("--no-filter", action="store_true", dest="no_filter")
            sp.add_argument("--proto-init", choices=PROTOTYPE_INITS, dest="proto_init")
        if fusion:
            sp.add_argument("--alpha", type=float)

    common(sub.add_parser("generate", help="write a synthetic long-tailed dataset"))
    m = sub.add_parser("match", help="stage 1: train encoders and prototypes")
    common(m, train=True)
    m.add_argument("--data", required=True, help="dataset directory from `generate`")
    r = sub.add_parser("recognize", help="stage 2: train the linear head and evaluate")
    common(r, fusion=True)
    r.add_argument("--data", required=True)
    r.add_argument("--model", required=True, help="output directory of `match`")
    a = sub.add_parser("ablate", help="sweep one setting through both stages")
    common(a, train=True, fusion=True)
    a.add_argument("--data", required=True)
    a.add_argument("--axis", required=True, choices=ABLATION_AXES)
    a.add_argument("--values", help="comma-separated values; defaults depend on the axis")
    e = sub.add_parser("eval", help="alignment, uniformity and split accuracy of an embedding file")
    common(e)
    e.add_argument("--features", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--predictions")
    e.add_argument("--train-labels", dest="train_labels")
    return p


def _configure_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _classify(exc):
    if isinstance(exc, CliError):
        return exc
    if isinstance(exc, ConfigError):
        return CliError(EXIT_VALIDATION, "config", str(exc), exc.field)
    if isinstance(exc, NumericalError):
        return CliError(EXIT_NUMERIC, "numerical", str(exc))
    if isinstance(exc, FormatError):
        return CliError(EXIT_IO, "format", str(exc))
    if isinstance(exc, (OSError, json.JSONDecodeError)) and not isinstance(exc, ProtoMatchError):
        return CliError(EXIT_IO, "io", str(exc))
    if isinstance(exc, ValueError):
        return CliError(EXIT_VALIDATION, "validation", str(exc))
    return None


def _publish(staging, out):
    os.makedirs(out, exist_ok=True)
    for name in sorted(os.listdir(staging)):
        os.replace(os.path.join(staging, name), os.path.join(out, name))


def run(argv=None):
    """Run one command; returns the exit code instead of exiting."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    _configure_logging()
    staging = None
    try:
        cfg = resolve_config(args)
        out = os.path.abspath(args.out)
        parent = os.path.dirname(out)
        os.makedirs(parent, exist_ok=True)
        staging = tempfile.mkdtemp(prefix=".protomatch-", dir=parent)
        manifest = COMMANDS[args.command](args, cfg, staging)
        io.write_json(os.path.join(staging, "run_manifest.json"), manifest)
        _publish(staging, out)
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        err = _classify(exc)
        if err is None:
            raise
        payload = {"error": err.kind, "message": str(err)}
        if err.field:
            payload["field"] = err.field
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return err.code
    finally:
        if staging and os.path.isdir(staging):
            shutil.rmtree(staging, ignore_errors=True)


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
