"""``attngen`` command line: gen-synthetic, train, eval, perturb, ablate, viz.

Exit codes: 0 success, 1 configuration or usage error, 2 data error
(unreadable corpus, malformed files, incompatible checkpoint), 3 numerical
abort during training. Every failure prints one ``error: ...`` line to
stderr. Inputs are fully loaded before the output directory is touched, so
a failed command leaves no partial outputs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from attngen import autodiff as ad
from attngen.analysis import (ablation_csv, ablation_suite, gradient_importance_batch,
                              perturbation_curve)
from attngen.checkpoint import load_checkpoint, restore_model, save_checkpoint
from attngen.config import ALIASES, RunConfig, load_run_config
from attngen.dataio import (generate_synthetic, load_csv_corpus, split_corpus, stack,
                            write_csv_corpus, write_ground_truth)
from attngen.errors import (AttnGenError, CheckpointFormatError, ConfigError, DataError,
                            NumericalError, ShapeError)
from attngen.model import init_model
from attngen.trainer import MetricsWriter, evaluate, train
from attngen.viz import render_accuracy_curve, render_mask_patterns

log = logging.getLogger("attngen")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
RESOLVED = "resolved_config.txt"

COMMAND_HELP = {
    "gen-synthetic": "write a planted-motif corpus (corpus.csv) and its ground truth (ground_truth.csv)",
    "train": "train on --corpus; writes metrics.csv, checkpoint.atng",
    "eval": "score --checkpoint on the validation split; writes eval.csv, predictions.csv",
    "perturb": "occlusion curve for --checkpoint; writes curve_<order>.csv and curve_<order>.svg",
    "ablate": "four-arm ablation from --config; writes ablation.csv",
    "viz": "attention mask patterns for --checkpoint; writes masks.ppm, masks.csv",
}


class UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        raise UsageExit(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="attngen", description="Attention-guided saliency training for DNA classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, text in COMMAND_HELP.items():
        cmd = sub.add_parser(name, help=text, description=text)
        cmd.add_argument("--config", help="flat 'key = value' config file; flags override it")
        cmd.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                         help="log progress to stderr")
        group = cmd.add_argument_group("config keys")
        for f in fields(RunConfig):
            flags = [f"--{f.name.replace('_', '-')}"]
            if f.name != f.name.replace("_", "-"):
                flags.append(f"--{f.name}")
            flags += [f"--{alias}" for alias, target in ALIASES.items() if target == f.name]
            group.add_argument(*flags, dest=f.name, default=None, metavar="VALUE",
                               help=f"(default: {_default_text(f.default)})")
    return parser


def _default_text(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def _overrides(args):
    return {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name) is not None}


def _require(cfg: RunConfig, *names):
    for name in names:
        if not getattr(cfg, name):
            raise ConfigError(f"--{name.replace('_', '-')} is required for this command")


def _load_corpus(cfg: RunConfig, length=None):
    path = Path(cfg.corpus)
    if not path.is_file():
        raise DataError(f"corpus not found: {cfg.corpus}")
    try:
        return load_csv_corpus(path, length or cfg.length)
    except OSError as exc:
        raise DataError(f"cannot read corpus {cfg.corpus}: {exc.strerror}") from None


def _load_model(cfg: RunConfig):
    path = Path(cfg.checkpoint)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {cfg.checkpoint}")
    ck = load_checkpoint(path)
    return ck, restore_model(ck)


def _validation(cfg: RunConfig, length):
    corpus = _load_corpus(cfg, length)
    split = split_corpus(corpus, cfg.train_fraction, cfg.seed)
    if not split.validation:
        raise DataError("the validation split is empty")
    return split


def _write_outputs(cfg: RunConfig, files: dict):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {**files, RESOLVED: cfg.render()}
    for name, content in files.items():
        target = out / name
        if isinstance(content, bytes):
            target.write_bytes(content)
        else:
            target.write_text(content, encoding="utf-8", newline="\n")
    log.info("wrote %s to %s", ", ".join(files), out)


def cmd_gen_synthetic(cfg: RunConfig):
    planted = generate_synthetic(cfg.synthetic_spec())
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv_corpus(out / "corpus.csv", [p.sequence for p in planted])
    write_ground_truth(out / "ground_truth.csv", planted)
    (out / RESOLVED).write_text(cfg.render(), encoding="utf-8", newline="\n")
    return EXIT_OK


def cmd_train(cfg: RunConfig):
    _require(cfg, "corpus")
    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()
    split = split_corpus(_load_corpus(cfg), cfg.train_fraction, cfg.seed)
    writer = MetricsWriter(wall_time=cfg.log_wall_time)
    with ad.precision(train_cfg.precision):
        model = init_model(model_cfg, train_cfg.seed)
        result = train(model, split, train_cfg, sink=writer)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    _write_outputs(cfg, {"metrics.csv": writer.render(),
                         "checkpoint.atng": result.checkpoint.to_bytes()})
    print(f"best val_acc {result.best_val_acc:.4f} at epoch {result.checkpoint.epoch}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig):
    _require(cfg, "checkpoint", "corpus")
    ck, model = _load_model(cfg)
    split = _validation(cfg, model.config.length)
    with ad.precision(cfg.precision):
        res = evaluate(model, split.validation)
    _, labels = stack(split.validation)
    preds = np.argmax(res.probabilities, axis=1)
    rows = ["index,label,predicted,prob_1"]
    rows += [f"{i},{y},{p},{q!r}" for i, y, p, q in
             zip(split.validation_index, labels, preds, res.probabilities[:, 1].astype(float))]
    correct = int(res.correct.sum())
    summary = f"accuracy,correct,count,loss\n{res.accuracy!r},{correct},{len(labels)},{res.loss!r}\n"
    _write_outputs(cfg, {"eval.csv": summary, "predictions.csv": "\n".join(rows) + "\n"})
    print(f"accuracy {res.accuracy:.4f} ({correct}/{len(labels)})")
    return EXIT_OK


def cmd_perturb(cfg: RunConfig):
    _require(cfg, "checkpoint", "corpus")
    ck, model = _load_model(cfg)
    split = _validation(cfg, model.config.length)
    tokens, labels = stack(split.validation[:cfg.eval_count])
    if any(not 0 <= m <= model.config.length for m in cfg.schedule):
        raise ConfigError(f"schedule values must lie in [0, {model.config.length}]")
    try:
        with ad.precision(cfg.precision):
            curve = perturbation_curve(model, tokens, labels, cfg.schedule, cfg.order, cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _write_outputs(cfg, {f"curve_{cfg.order}.csv": curve.to_csv(),
                         f"curve_{cfg.order}.svg": render_accuracy_curve(curve)})
    for row in curve.rows:
        print(f"m={row.m:4d} acc {row.mean_acc:6.2f} +- {row.std:5.2f} drop {row.drop:6.2f}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, config_path=None):
    if not config_path:
        raise ConfigError("--config is required for ablate")
    _require(cfg, "corpus")
    split = split_corpus(_load_corpus(cfg), cfg.train_fraction, cfg.seed)
    records = ablation_suite(split, cfg.model_config(), cfg.train_config(), alpha=cfg.alpha or 0.1)
    _write_outputs(cfg, {"ablation.csv": ablation_csv(records)})
    for r in records:
        status = f"error: {r.error}" if r.error else f"val_acc {r.val_acc:.4f}"
        print(f"{r.label:14s} {status}")
    return EXIT_OK


def cmd_viz(cfg: RunConfig):
    _require(cfg, "checkpoint", "corpus")
    ck, model = _load_model(cfg)
    split = _validation(cfg, model.config.length)
    tokens, _ = stack(split.validation[:cfg.viz_count])
    if any(not 0 <= a <= 1 for a in cfg.alphas):
        raise ConfigError("alphas must lie in [0, 1]")
    with ad.precision(cfg.precision):
        ppm, csv_text = render_mask_patterns(model, tokens, cfg.alphas)
    _write_outputs(cfg, {"masks.ppm": ppm, "masks.csv": csv_text})
    return EXIT_OK


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "eval": cmd_eval,
    "perturb": cmd_perturb,
    "viz": cmd_viz,
}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_run_config(args.config, _overrides(args))
        if args.command == "ablate":
            return cmd_ablate(cfg, args.config)
        return COMMANDS[args.command](cfg)
    except UsageExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointFormatError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AttnGenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
