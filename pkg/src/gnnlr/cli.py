"""Command-line entry point: ``gnnlr prepare|train|evaluate|gradcheck``.

Exit codes: 0 success, 1 check failure, 2 input error, 3 consistency error.

Training settings come from an optional ``key=value`` config file (``#``
starts a comment); command-line flags override file values.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import autodiff as ad
from .data import (DataError, build_histories, dataset_stats, leave_one_out_split,
                   load_split, parse_interactions, vocab_hash, write_split_dir)
from .evaluate import evaluate
from .graph import (graph_from_split, graph_stats, normalize, read_graph_tsv,
                    write_graph_tsv)
from .model import load_checkpoint, save_checkpoint
from .toy import gradcheck_problem
from .train import TrainConfig, fit, format_log

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_CONSISTENCY = 0, 1, 2, 3

log = logging.getLogger("gnnlr")


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(key: str, text: str):
    types = {"int": int, "float": float, "str": str, "bool": _parse_bool}
    kind = TrainConfig.field_types()[key]
    kind = kind if isinstance(kind, str) else kind.__name__
    return types[kind](text)


def read_config_file(path) -> dict:
    """``key=value`` lines into TrainConfig keyword arguments."""
    known = TrainConfig.field_types()
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep:
                raise CliError(f"{path}:{lineno}: expected key=value")
            if key not in known:
                raise CliError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = _coerce(key, value.strip())
            except ValueError as exc:
                raise CliError(f"{path}:{lineno}: {exc}") from None
    return out


def write_config_file(path, config: TrainConfig):
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in config.as_dict().items():
            fh.write(f"{k}={v}\n")


def _guard_output(path, force: bool):
    if os.path.exists(path) and (not os.path.isdir(path) or os.listdir(path)) and not force:
        raise CliError(f"{path} exists; pass --force to overwrite")


# ------------------------------------------------------------------ commands


def cmd_prepare(args) -> int:
    if not os.path.isfile(args.input):
        raise CliError(f"{args.input}: no such file")
    _guard_output(args.out, args.force)
    try:
        rows = parse_interactions(args.input, args.format)
    except DataError as exc:
        raise CliError(str(exc)) from None
    histories, ids = build_histories(rows, args.threshold)
    split = leave_one_out_split(histories, len(ids.items), args.min_positives, ids=ids)
    graph = graph_from_split(split)
    write_split_dir(args.out, histories, split)
    write_graph_tsv(graph, os.path.join(args.out, "graph.tsv"))
    stats = dataset_stats(rows, split)
    _, n_edges, g_density = graph_stats(graph)
    stats.update(edges=n_edges, graph_density=g_density, threshold=args.threshold,
                 min_positives=args.min_positives)
    with open(os.path.join(args.out, "stats.txt"), "w", encoding="utf-8") as fh:
        for k, v in stats.items():
            fh.write(f"{k}={v}\n")
    print(f"users={stats['users']} items={stats['items']} interactions={stats['interactions']} "
          f"density={stats['density']:.4f} edges={n_edges}")
    return EXIT_OK


_OVERRIDES = [
    ("--lr", float), ("--batch-size", int), ("--max-epochs", int), ("--d", int),
    ("--gnn-layers", int), ("--variant", str), ("--phi", float), ("--max-history", int),
    ("--lambda-logic", float), ("--lambda-vec", float), ("--lambda-theta", float),
    ("--patience", int), ("--seed", int), ("--eval-negatives", int), ("--dtype", str),
]


def resolve_config(args) -> TrainConfig:
    values = read_config_file(args.config) if args.config else {}
    for flag, _ in _OVERRIDES:
        key = flag[2:].replace("-", "_")
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    if args.shuffle_literals is not None:
        values["shuffle_literals"] = args.shuffle_literals
    if values.get("variant") == "none" and values.get("gnn_layers", 0) > 0:
        raise CliError("variant=none conflicts with gnn_layers > 0")
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from None


def _load_data(data_dir):
    for name in ("train.tsv", "valid.tsv", "test.tsv", "vocab.tsv"):
        if not os.path.isfile(os.path.join(data_dir, name)):
            raise CliError(f"{data_dir}: missing {name}; run `gnnlr prepare` first")
    split = load_split(data_dir)
    graph_path = os.path.join(data_dir, "graph.tsv")
    graph = (read_graph_tsv(graph_path, split.n_items) if os.path.isfile(graph_path)
             else graph_from_split(split))
    return split, graph


def cmd_train(args) -> int:
    config = resolve_config(args)
    split, graph = _load_data(args.data)
    _guard_output(args.out, args.force)
    os.makedirs(args.out, exist_ok=True)
    write_config_file(os.path.join(args.out, "config.txt"), config)
    result = fit(config, split, graph)
    result.params.meta["vocab_hash"] = vocab_hash(args.data)
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"), result.params)
    with open(os.path.join(args.out, "train_log.tsv"), "w", encoding="utf-8") as fh:
        fh.write(format_log(result.log))
    with open(os.path.join(args.out, "timing.tsv"), "w", encoding="utf-8") as fh:
        fh.write("epoch\tseconds\n")
        for row, sec in zip(result.log, result.timings):
            fh.write(f"{row['epoch']}\t{sec:.3f}\n")
    print(f"best epoch {result.best_epoch} valid N@10 {result.best_ndcg:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not os.path.isfile(args.checkpoint):
        raise CliError(f"{args.checkpoint}: no such file")
    params = load_checkpoint(args.checkpoint)
    split, graph = _load_data(args.data)
    expected = params.meta.get("vocab_hash")
    actual = vocab_hash(args.data)
    if expected != actual or params.n_items != split.n_items:
        raise CliError(f"checkpoint vocab {expected} does not match data vocab {actual}",
                       EXIT_CONSISTENCY)
    ks = [int(k) for k in args.k.split(",") if k.strip()]
    max_history = int(params.meta.get("max_history", 5))
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)),
                                   f"metrics_{args.split}.txt")
    _guard_output(out, args.force)
    try:
        result = evaluate(params, normalize(graph), split, args.split, args.negatives, ks,
                          args.seed, max_history)
    except DataError as exc:
        raise CliError(str(exc)) from None
    print(result.to_text(), end="")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(result.to_kv())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    params, f = gradcheck_problem(args.items, args.d, args.seed, args.variant, args.layers)
    report = ad.grad_check(f, params.trainable(), h=args.h, tol=args.tol)
    print(report)
    if not report.passed:
        print(f"gradient check failed at parameter {report.worst}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnnlr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse a rating log and write a leave-one-out split")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    p.add_argument("--threshold", type=float, default=3.0,
                   help="ratings strictly above this are positive (0 for implicit data)")
    p.add_argument("--min-positives", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on a prepared split")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    for flag, kind in _OVERRIDES:
        p.add_argument(flag, type=kind, default=None)
    p.add_argument("--shuffle-literals", dest="shuffle_literals", action="store_true",
                   default=None)
    p.add_argument("--no-shuffle-literals", dest="shuffle_literals", action="store_false")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rank held-out items with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--negatives", type=int, default=100)
    p.add_argument("--k", default="10,20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="metrics file (default: next to the checkpoint)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--items", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=("gcn", "lightgcn", "none"), default="gcn")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
