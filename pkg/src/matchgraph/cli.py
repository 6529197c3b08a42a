"""Command-line entry point: ``matchgraph <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .data import (FormatError, StructureError, build_relation_vocab, build_vocab, label_set,
                   load_pairs, pairs_from_conllu, write_pairs)
from .graph import StrategyConfig, build_pair_graph, dump_graph
from .interpret import export_dot, importance_report
from .gradcheck import end_to_end_errors
from .model import ModelConfig, forward
from .training import TrainConfig, TrainingError, alpha_sweep, build_model, predict, train

PROG = "matchgraph"
ABLATIONS = {"contextual": "ablate_contextual", "gates": "ablate_gates", "fusion": "ablate_fusion_attention"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# shared helpers


def read_pairs(path: str, labels) -> list:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if p.suffix.lower() in (".conllu", ".conll"):
        return pairs_from_conllu(p.read_text(encoding="utf-8"), labels)
    return load_pairs(p, labels)


def _model_overrides(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        src = Path(args.config)
        text = src.read_text(encoding="utf-8") if src.is_file() else args.config
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"--config is neither a file nor valid JSON: {exc.msg}") from None
        if not isinstance(cfg, dict):
            raise ValueError("--config must be a JSON object")
        unknown = sorted(set(cfg) - set(ModelConfig.__dataclass_fields__))
        if unknown:
            raise ValueError(f"--config has unknown keys: {', '.join(unknown)}")
    if getattr(args, "symmetric", False):
        cfg["symmetric"] = True
    for name in getattr(args, "ablate", None) or ():
        cfg[ABLATIONS[name]] = True
    return cfg


def _strategy(args, fallback: dict | None = None) -> StrategyConfig:
    fallback = fallback or {}
    name = args.strategy or fallback.get("strategy", "denoise")
    alpha = args.alpha if args.alpha is not None else fallback.get("alpha", 0.9)
    return StrategyConfig(strategy=name, alpha=alpha)


def _train_config(args, checkpoint=None) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                       checkpoint_path=checkpoint, clip_norm=args.clip_norm)


def _write_text(path: str | None, text: str):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _pick_pair(pairs, args):
    if args.pair_id is not None:
        for p in pairs:
            if p.pair_id == args.pair_id:
                return p
        raise KeyError(f"pair id {args.pair_id!r} not found")
    if not 0 <= args.index < len(pairs):
        raise IndexError(f"--index {args.index} out of range for {len(pairs)} pairs")
    return pairs[args.index]


# ---------------------------------------------------------------------------
# subcommands


def cmd_prep(args) -> int:
    labels = label_set(args.labels)
    pairs = read_pairs(args.data, labels)
    vocab = build_vocab(pairs, args.min_count)
    rel = build_relation_vocab(pairs)
    counts = Counter(labels[p.label] for p in pairs)
    summary = {"pairs": len(pairs), "labels": {k: counts.get(k, 0) for k in labels},
               "vocab_size": len(vocab), "min_count": args.min_count, "relations": len(rel)}
    if args.out:
        write_pairs(args.out, pairs, labels)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_build_graph(args) -> int:
    labels = label_set(args.labels)
    pairs = read_pairs(args.data, labels)
    rel = build_relation_vocab(pairs)
    graph = build_pair_graph(_pick_pair(pairs, args), _strategy(args), rel, args.seed, args.epoch)
    _write_text(args.out, dump_graph(graph) + "\n")
    return 0


def cmd_train(args) -> int:
    labels = label_set(args.labels)
    train_pairs = read_pairs(args.data, labels)
    val_pairs = read_pairs(args.val, labels) if args.val else []
    strategy = _strategy(args)
    if args.resume:
        model, _, _ = load_checkpoint(args.resume)
    else:
        model = build_model(train_pairs, labels, _model_overrides(args), args.min_count, args.embeddings,
                            args.seed, extra_pairs=val_pairs)
    cfg = _train_config(args, args.checkpoint)
    metrics = train(model, train_pairs, val_pairs, strategy, cfg, resume_from=args.resume)
    if args.out:
        metrics.write_csv(args.out, timing=args.timing)
    print(json.dumps({"epochs": len(metrics.epochs), "best_val_acc": metrics.best_val_acc,
                      "best_epoch": metrics.best_epoch,
                      "final_train_loss": metrics.train_losses[-1] if metrics.epochs else None}))
    return 0


def cmd_eval(args) -> int:
    model, state, _ = load_checkpoint(args.checkpoint)
    pairs = read_pairs(args.data, model.labels)
    strategy = _strategy(args, (state or {}).get("strategy"))
    preds = predict(model, pairs, strategy, args.seed)
    gold = np.array([p.label for p in pairs])
    acc = float((preds == gold).mean()) if len(pairs) else float("nan")
    if args.out:
        rows = [{"pair_id": p.pair_id, "gold": model.labels[p.label], "predicted": model.labels[int(k)]}
                for p, k in zip(pairs, preds)]
        Path(args.out).write_text(json.dumps({"accuracy": acc, "predictions": rows}, indent=2) + "\n",
                                  encoding="utf-8")
    print(json.dumps({"accuracy": acc, "pairs": len(pairs)}))
    return 0


def cmd_sweep_alpha(args) -> int:
    labels = label_set(args.labels)
    train_pairs = read_pairs(args.data, labels)
    if not args.val:
        raise ValueError("sweep-alpha needs --val")
    val_pairs = read_pairs(args.val, labels)
    alphas = [float(a) for a in args.alphas.split(",")]
    overrides = _model_overrides(args)

    def make_model():
        return build_model(train_pairs, labels, overrides, args.min_count, args.embeddings, args.seed,
                           extra_pairs=val_pairs)

    rows = alpha_sweep(train_pairs, val_pairs, alphas, make_model, StrategyConfig("denoise"),
                       _train_config(args), args.out)
    for alpha, acc in rows:
        print(f"{alpha:g}\t{acc:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    strategy = StrategyConfig(args.strategy or "full", 0.9 if args.alpha is None else args.alpha)
    errors, seconds = end_to_end_errors(args.seed, _model_overrides(args), strategy, scale=args.scale or None)
    worst = max(errors, key=errors.get)
    for name in sorted(errors):
        print(f"{name}\t{errors[name]:.3e}")
    print(f"worst relative error {errors[worst]:.3e} ({worst}) in {seconds:.1f}s")
    return 0 if errors[worst] < 1e-4 else 1


def cmd_inspect(args) -> int:
    model, state, _ = load_checkpoint(args.checkpoint)
    pairs = read_pairs(args.data, model.labels)
    pair = _pick_pair(pairs, args)
    strategy = _strategy(args, (state or {}).get("strategy"))
    graph = build_pair_graph(pair, strategy, model.relvocab, args.seed, epoch=None)
    _, trace = forward(pair, graph, model.params, model.config, model.vocab)
    report = importance_report(trace, graph, model.labels)
    dot = export_dot(graph, report, args.threshold, relation_names=model.relvocab.itos)
    if args.out:
        Path(args.out + ".dot").write_text(dot, encoding="utf-8")
        Path(args.out + ".json").write_text(report.dumps(graph), encoding="utf-8")
        print(json.dumps({"pair_id": pair.pair_id, "predicted_label": report.predicted_label}))
    else:
        sys.stdout.write(dot)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Graph-based sentence pair matching.")
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True, labels=True, strategy=True):
        if data:
            p.add_argument("--data", required=True, help="pairs as JSONL or CoNLL-U")
        if labels:
            p.add_argument("--labels", default="snli3", help="snli3, binary, or a file with one label per line")
        if strategy:
            p.add_argument("--strategy", choices=["root", "cooccur", "denoise", "full"], default=None)
            p.add_argument("--alpha", type=float, default=None, help="denoise keep probability")
        p.add_argument("--seed", type=int, default=0)

    def model_flags(p):
        p.add_argument("--config", help="JSON object (or file) overriding model settings")
        p.add_argument("--symmetric", action="store_true", help="use |S_P - S_Q| in matching features")
        p.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), default=[])
        p.add_argument("--embeddings", help="word vectors in text format")
        p.add_argument("--min-count", type=int, default=10)

    def optim_flags(p, epochs=300):
        p.add_argument("--epochs", type=int, default=epochs)
        p.add_argument("--lr", type=float, default=5e-4)
        p.add_argument("--batch", type=int, default=64)
        p.add_argument("--clip-norm", type=float, default=None)

    p = sub.add_parser("prep", help="validate a dataset and optionally convert it to JSONL")
    common(p, strategy=False)
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("build-graph", help="dump one pair graph as JSON")
    common(p)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--pair-id")
    p.add_argument("--epoch", type=int, default=None, help="training epoch sample (default: evaluation graph)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--val")
    model_flags(p)
    optim_flags(p)
    p.add_argument("--checkpoint", help="best-model checkpoint path (latest state goes to <path>.last)")
    p.add_argument("--resume", help="resume from a .last checkpoint")
    p.add_argument("--out", help="metrics CSV")
    p.add_argument("--timing", action="store_true", help="fill the seconds column (output no longer reproducible)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    common(p, labels=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="predictions JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-alpha", help="accuracy as a function of the denoise keep probability")
    common(p, strategy=False)
    p.add_argument("--val")
    p.add_argument("--alphas", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")
    model_flags(p)
    optim_flags(p, epochs=10)
    p.add_argument("--out", help="CSV of alpha,accuracy")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", choices=["root", "cooccur", "denoise", "full"], default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--config", help="JSON object (or file) overriding the small check config")
    p.add_argument("--symmetric", action="store_true")
    p.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), default=[])
    p.add_argument("--scale", type=float, default=0.5,
                   help="redraw parameters from N(0, scale^2) before checking; 0 keeps the initialisation")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="node/edge importance and DOT rendering for one pair")
    common(p, labels=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--pair-id")
    p.add_argument("--threshold", type=float, default=None,
                   help="drop interactive edges below this weight (default: half the mean)")
    p.add_argument("--out", help="output prefix; writes <out>.dot and <out>.json")
    p.set_defaults(func=cmd_inspect)
    return parser


def _one_line(exc: BaseException) -> str:
    msg = str(exc) if str(exc) else type(exc).__name__
    if isinstance(exc, KeyError) and exc.args:
        msg = str(exc.args[0])
    return " ".join(msg.split())


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"{PROG}: error: {_one_line(exc)}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, IndexError, FormatError, StructureError, CheckpointError,
            TrainingError, FloatingPointError) as exc:
        print(f"{PROG}: error: {_one_line(exc)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
