"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numeric failure. Every run writes its resolved settings to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import LABELS, __version__
from .errors import ConfigError, HostnetError, NumericError
from .evaluation import evaluate, pca_project
from .graph import parse_conllu, sentence_edges
from .model import embed
from .tokenizers import clean_text, decode_ids, encode_ids, load_model, save_model, train_model
from .training import (
    TrainConfig,
    load_checkpoint,
    load_dataset,
    predict,
    save_checkpoint,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "HOSTNET_THREADS"
DEFAULTS = TrainConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


class _Formatter(argparse.HelpFormatter):
    """Appends the default to every option that has a meaningful one."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.required:
            return text + " (required)"
        if action.default not in (None, False, argparse.SUPPRESS) and action.option_strings:
            return text + " (default: %(default)s)"
        return text


def _add(sub, name, help_text):
    return sub.add_parser(name, help=help_text, description=help_text, formatter_class=_Formatter)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hostnet", description="Gated R-GCN hostile-post classifier.",
                     formatter_class=_Formatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    tok = _add(commands, "tokenizer", "train or apply a subword tokenizer")
    tok_cmds = tok.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = _add(tok_cmds, "train", "learn a BPE or unigram vocabulary from a text file")
    p.add_argument("--scheme", choices=("bpe", "unigram"), required=True, help="tokenizer family")
    p.add_argument("--input", required=True, help="training corpus, one line per post")
    p.add_argument("--vocab-size", type=int, default=DEFAULTS.vocab_size, help="target vocabulary size")
    p.add_argument("--output", required=True, help="model file to write")
    p.add_argument("--prune-fraction", type=float, default=DEFAULTS.prune_fraction,
                   help="unigram: share of pieces dropped per pruning round")
    p.add_argument("--seed-max-len", type=int, default=DEFAULTS.seed_max_len,
                   help="unigram: longest seed piece")
    p.add_argument("--clean", action="store_true", help="strip markup and URLs before training")
    for action, what in (("encode", "text lines to id lines"), ("decode", "id lines back to text")):
        p = _add(tok_cmds, action, f"convert {what}")
        p.add_argument("--model", required=True, help="tokenizer model file")
        p.add_argument("--input", required=True, help="input file, one item per line")
        p.add_argument("--output", required=True, help="output file")
        if action == "encode":
            p.add_argument("--clean", action="store_true", help="strip markup and URLs before encoding")

    graph = _add(commands, "graph", "dependency-graph utilities")
    graph_cmds = graph.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = _add(graph_cmds, "parse", "convert CoNLL-U sentences into edge lists")
    p.add_argument("--conllu", required=True, help="CoNLL-U input")
    p.add_argument("--output", required=True, help="JSONL output, one sentence per line")

    p = _add(commands, "train", "train a classifier and write the best checkpoint")
    p.add_argument("--data", required=True, help="training set (JSONL)")
    p.add_argument("--valid", help="validation set used for checkpoint selection")
    p.add_argument("--config", help="key = value settings file; flags override it")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--log", help="per-epoch metrics (JSONL)")
    p.add_argument("--seed", type=int, help=f"random seed (config default {DEFAULTS.seed})")
    p.add_argument("--epochs", type=int, help=f"training epochs (config default {DEFAULTS.epochs})")
    p.add_argument("--batch-size", type=int, help=f"mini-batch size (config default {DEFAULTS.batch_size})")
    p.add_argument("--lr", type=float, help=f"Adam learning rate (config default {DEFAULTS.learning_rate})")
    p.add_argument("--threshold", type=float, help=f"decision threshold (config default {DEFAULTS.threshold})")
    p.add_argument("--hidden", help="comma-separated R-GCN layer widths (config default "
                   f"{','.join(map(str, DEFAULTS.hidden))})")

    p = _add(commands, "eval", "score a checkpoint on a labelled set")
    p.add_argument("--data", required=True, help="labelled set (JSONL)")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--report", required=True, help="JSON report to write")
    p.add_argument("--threshold", type=float, help="decision threshold (default: the checkpoint's)")

    p = _add(commands, "predict", "label unseen records")
    p.add_argument("--data", required=True, help="records (JSONL); labels are ignored")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--out", required=True, help="predictions (JSONL)")
    p.add_argument("--threshold", type=float, help="decision threshold (default: the checkpoint's)")

    p = _add(commands, "project", "2-D PCA coordinates of sentence embeddings")
    p.add_argument("--data", required=True, help="records (JSONL)")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--which", choices=("rgcn", "context", "concat"), default="concat",
                   help="which sentence vector to project")
    p.add_argument("--out", required=True, help="CSV with columns id,label,x,y")
    return parser


# ------------------------------------------------------------------ helpers


def _parse_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw.strip("'\"")


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, ``[section]`` lines are ignored."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line or (line.startswith("[") and line.endswith("]")):
                continue
            key, sep, raw = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key = key.strip().replace("-", "_")
            if key in values:
                raise ConfigError(f"{path}: line {lineno}: duplicate key {key!r}")
            values[key] = _parse_value(raw.strip())
    return values


def _hidden(text):
    try:
        return [int(w) for w in text.split(",")]
    except ValueError:
        raise UsageError(f"--hidden: expected comma-separated integers, got {text!r}") from None


def resolve_config(args) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    values = DEFAULTS.to_dict()
    if args.config:
        file_values = read_config_file(args.config)
        unknown = sorted(set(file_values) - set(values))
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys: {', '.join(unknown)}")
        values.update(file_values)
    flags = {
        "seed": args.seed,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "threshold": args.threshold,
        "hidden": _hidden(args.hidden) if args.hidden else None,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    return TrainConfig.from_dict(values)


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _announce(command, settings, seed=None):
    record = {"command": command, "seed": seed, "settings": settings}
    print(f"hostnet: {json.dumps(record, sort_keys=True)}", file=sys.stderr)


def _read_lines(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.read().splitlines()


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _threshold(args, ckpt):
    t = ckpt.config.threshold if args.threshold is None else args.threshold
    if not 0 < t < 1:
        raise ConfigError("threshold must lie in (0, 1)")
    return t


# ----------------------------------------------------------------- commands


def cmd_tokenizer(args):
    if args.action == "train":
        _announce("tokenizer train", {
            "scheme": args.scheme, "vocab_size": args.vocab_size, "prune_fraction": args.prune_fraction,
            "seed_max_len": args.seed_max_len, "clean": args.clean,
        })
        lines = _read_lines(args.input)
        if args.clean:
            lines = [clean_text(line) for line in lines]
        model = train_model(lines, args.scheme, args.vocab_size, args.prune_fraction, args.seed_max_len)
        save_model(model, args.output)
        return EXIT_OK

    model = load_model(args.model)
    _announce(f"tokenizer {args.action}", {"model": args.model, "clean": getattr(args, "clean", False)})
    out = []
    for lineno, line in enumerate(_read_lines(args.input), start=1):
        if args.action == "encode":
            text = clean_text(line) if args.clean else line
            out.append(" ".join(map(str, encode_ids(text, model))))
        else:
            try:
                ids = [int(tok) for tok in line.split()]
            except ValueError:
                raise ConfigError(f"{args.input}: line {lineno}: ids must be integers") from None
            out.append(decode_ids(ids, model))
    _write_text(args.output, "".join(line + "\n" for line in out))
    return EXIT_OK


def cmd_graph(args):
    _announce("graph parse", {"conllu": args.conllu})
    with open(args.conllu, encoding="utf-8") as fh:
        sentences = parse_conllu(fh.read())
    names = {0: "forward", 1: "inverse", 2: "self"}
    with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
        for s in sentences:
            obj = {
                "id": s.id,
                "n": len(s),
                "tokens": s.surfaces,
                "edges": [[src, dst, names[int(rel)]] for src, dst, rel in sentence_edges(s)],
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_train(args):
    config = resolve_config(args)
    workers = worker_count()
    _announce("train", config.to_dict(), config.seed)
    train_set = load_dataset(args.data)
    valid_set = load_dataset(args.valid) if args.valid else []
    ckpt, history = train(config, train_set, valid_set, workers=workers)
    save_checkpoint(ckpt, args.out)
    if args.log:
        _write_text(args.log, "".join(json.dumps(e, sort_keys=True) + "\n" for e in history))
    return EXIT_OK


def cmd_eval(args):
    ckpt = load_checkpoint(args.ckpt)
    threshold = _threshold(args, ckpt)
    _announce("eval", {"ckpt": args.ckpt, "threshold": threshold}, ckpt.config.seed)
    data = load_dataset(args.data)
    unlabeled = [ex.id for ex in data if ex.gold is None]
    if unlabeled:
        raise ConfigError(f"{args.data}: records without labels: {unlabeled[:5]}")
    preds = predict(ckpt.params, data, threshold, worker_count())
    report = evaluate([p.labels for p in preds], [ex.gold for ex in data])
    _write_text(args.report, report.to_json())
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_predict(args):
    ckpt = load_checkpoint(args.ckpt)
    threshold = _threshold(args, ckpt)
    _announce("predict", {"ckpt": args.ckpt, "threshold": threshold}, ckpt.config.seed)
    data = load_dataset(args.data)
    preds = predict(ckpt.params, data, threshold, worker_count())
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for ex, p in zip(data, preds):
            obj = {
                "id": ex.id,
                "labels": p.labels.as_dict(),
                "probabilities": dict(zip(LABELS, map(float, p.probabilities))),
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_project(args):
    ckpt = load_checkpoint(args.ckpt)
    _announce("project", {"ckpt": args.ckpt, "which": args.which}, ckpt.config.seed)
    data = load_dataset(args.data)
    vectors = np.array([embed(ckpt.params, ex)[args.which] for ex in data])
    projection = pca_project(vectors, 2)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label", "x", "y"])
        for ex, (x, y) in zip(data, projection.coordinates):
            writer.writerow([ex.id, ex.gold.name if ex.gold else "", repr(float(x)), repr(float(y))])
    return EXIT_OK


COMMANDS = {
    "tokenizer": cmd_tokenizer,
    "graph": cmd_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "project": cmd_project,
}


def run(argv=None) -> int:
    """Run one command; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hostnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"hostnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (HostnetError, OSError, UnicodeDecodeError) as exc:
        print(f"hostnet: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
