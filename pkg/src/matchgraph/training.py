"""Cross-entropy training with Adam, evaluation and the alpha sweep."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .checkpoint import load_checkpoint, save_checkpoint
from .data import LabeledPair, build_relation_vocab, build_vocab, load_embeddings
from .graph import StrategyConfig, build_pair_graph
from .model import Model, ModelConfig, init_params

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "train_loss", "train_acc", "val_acc", "seconds")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 64
    epochs: int = 300
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 1
    checkpoint_path: str | None = None
    clip_norm: float | None = None
    eval_batch_size: int = 256
    target_train_acc: float | None = None  # stop early once reached

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class RunMetrics:
    epochs: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_val_acc: float | None = None
    best_epoch: int | None = None

    @property
    def train_losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]

    @property
    def train_accs(self) -> list[float]:
        return [e["train_acc"] for e in self.epochs]

    def write_csv(self, path: str | Path, timing: bool = False):
        """One row per epoch. ``seconds`` stays blank unless ``timing``, keeping reruns byte-identical."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRIC_FIELDS)
            for e in self.epochs:
                writer.writerow([
                    e["epoch"],
                    repr(e["train_loss"]),
                    repr(e["train_acc"]),
                    "" if e["val_acc"] is None else repr(e["val_acc"]),
                    f"{e['seconds']:.3f}" if timing else "",
                ])


# ---------------------------------------------------------------------------
# loss and optimizer


def cross_entropy(logits: Value, labels) -> Value:
    """Mean softmax cross-entropy over rows; a 1-D logit vector is one row."""
    x = logits.data
    one_row = x.ndim == 1
    x2 = x.reshape(1, -1) if one_row else x
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (x2.shape[0],):
        raise ValueError(f"{labels.shape[0]} labels for {x2.shape[0]} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= x2.shape[1]):
        raise ValueError(f"label outside [0, {x2.shape[1]})")
    if not np.isfinite(x2).all():
        raise FloatingPointError("cross_entropy: non-finite logits")
    shift = x2 - x2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    rows = np.arange(x2.shape[0])
    losses = lse - shift[rows, labels]
    b = x2.shape[0]
    probs = np.exp(shift - lse[:, None])

    def _bw(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        logits.accumulate((g / b * d).reshape(x.shape))

    return ad.custom_op(np.asarray(losses.mean(), dtype=x.dtype), (logits,), "cross_entropy", _bw)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, Value | np.ndarray]) -> AdamState:
        arr = lambda p: p.data if isinstance(p, Value) else p  # noqa: E731
        return cls({k: np.zeros_like(arr(p)) for k, p in params.items()},
                   {k: np.zeros_like(arr(p)) for k, p in params.items()})


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray | None],
              state: AdamState, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            raise FloatingPointError(f"adam_step: non-finite gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_global_norm(grads: dict[str, np.ndarray | None], max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values() if g is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            if g is not None:
                g *= scale
    return total


# ---------------------------------------------------------------------------
# model construction


def build_model(train_pairs: Sequence[LabeledPair], labels: Sequence[str], model_cfg: dict | None = None,
                min_count: int = 10, embeddings_path: str | None = None, seed: int = 0,
                extra_pairs: Sequence[LabeledPair] = ()) -> Model:
    """Vocabularies from ``train_pairs``, relations from all given pairs, fresh parameters.

    ``model_cfg`` overrides ModelConfig defaults; sizes derived from the
    data (vocabulary, relations, classes) are filled in here.
    """
    vocab = build_vocab(train_pairs, min_count)
    relvocab = build_relation_vocab(list(train_pairs) + list(extra_pairs))
    overrides = dict(model_cfg or {})
    overrides.update(vocab_size=len(vocab), num_relations=len(relvocab), num_classes=len(labels))
    cfg = ModelConfig(**overrides)
    emb = None
    if embeddings_path is not None:
        emb, hits = load_embeddings(embeddings_path, vocab, cfg.embed_dim, seed=seed, dtype=np.dtype(cfg.dtype))
        logger.info("embeddings: %d of %d vocabulary words found", hits, len(vocab) - 2)
    return Model(cfg, init_params(cfg, seed, emb), vocab, relvocab, tuple(labels))


# ---------------------------------------------------------------------------
# evaluation


def predict(model: Model, pairs: Sequence[LabeledPair], strategy: StrategyConfig, seed: int = 0,
            batch_size: int = 256) -> np.ndarray:
    """Argmax label per pair, using each pair's fixed evaluation graph."""
    preds = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        graphs = [build_pair_graph(p, strategy, model.relvocab, seed, epoch=None) for p in chunk]
        logits, _ = model.forward(chunk, graphs)
        preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(model: Model, pairs: Sequence[LabeledPair], strategy: StrategyConfig, seed: int = 0,
             batch_size: int = 256) -> float:
    if not pairs:
        return float("nan")
    preds = predict(model, pairs, strategy, seed, batch_size)
    gold = np.array([p.label for p in pairs])
    return float((preds == gold).mean())


# ---------------------------------------------------------------------------
# training loop


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 7, epoch])).permutation(n)


def _last_path(checkpoint_path: str | Path) -> Path:
    p = Path(checkpoint_path)
    return p.with_name(p.name + ".last")


def train(model: Model, train_pairs: Sequence[LabeledPair], val_pairs: Sequence[LabeledPair],
          strategy: StrategyConfig, cfg: TrainConfig, resume_from: str | Path | None = None) -> RunMetrics:
    """Mini-batch Adam on mean cross-entropy; mutates ``model.params`` in place.

    Shuffling and denoise sampling are derived from ``(seed, epoch)`` alone,
    so a run resumed from a ``.last`` checkpoint retraces the uninterrupted
    one.  With ``checkpoint_path`` set, the best-validation model goes to
    that path and the latest resumable state to ``<path>.last``.
    """
    params = model.params
    opt = AdamState.zeros_like(params)
    metrics = RunMetrics()
    start_epoch = 0
    if resume_from is not None:
        loaded, state, extra = load_checkpoint(resume_from)
        for k, v in loaded.params.items():
            params[k].data[...] = v.data
        if state is None or "adam_t" not in state:
            raise TrainingError(f"{resume_from} holds no optimizer state")
        opt.t = int(state["adam_t"])
        for k in params:
            opt.m[k][...] = extra[f"adam.m.{k}"]
            opt.v[k][...] = extra[f"adam.v.{k}"]
        start_epoch = int(state["epoch"])
        metrics.best_val_acc = state.get("best_val_acc")
        metrics.best_epoch = state.get("best_epoch")

    resample = strategy.strategy == "denoise" and strategy.resample_each_epoch and strategy.alpha < 1.0
    fixed_graphs = None
    if not resample:
        fixed_graphs = [build_pair_graph(p, strategy, model.relvocab, cfg.seed, epoch=None) for p in train_pairs]
    labels = np.array([p.label for p in train_pairs], dtype=np.int64)

    def snapshot(epoch):
        return {"epoch": epoch, "adam_t": opt.t, "best_val_acc": metrics.best_val_acc,
                "best_epoch": metrics.best_epoch, "seed": cfg.seed,
                "strategy": {"strategy": strategy.strategy, "alpha": strategy.alpha}}

    if cfg.checkpoint_path and cfg.epochs == 0 and resume_from is None:
        save_checkpoint(cfg.checkpoint_path, model, opt, snapshot(0))
        save_checkpoint(_last_path(cfg.checkpoint_path), model, opt, snapshot(0))

    n = len(train_pairs)
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        perm = epoch_permutation(n, cfg.seed, epoch)
        total_loss, correct = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            batch = [train_pairs[i] for i in idx]
            if fixed_graphs is None:
                graphs = [build_pair_graph(p, strategy, model.relvocab, cfg.seed, epoch) for p in batch]
            else:
                graphs = [fixed_graphs[i] for i in idx]
            logits, _ = model.forward(batch, graphs)
            if not np.isfinite(logits.data).all():
                raise TrainingError(f"non-finite logits at epoch {epoch}, batch {b}")
            loss = cross_entropy(logits, labels[idx])
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            ad.zero_grads(params)
            ad.backward(loss)
            grads = {k: p.grad for k, p in params.items()}
            if cfg.clip_norm is not None:
                clip_global_norm(grads, cfg.clip_norm)
            adam_step({k: p.data for k, p in params.items()}, grads, opt, cfg.learning_rate,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            ad.zero_grads(params)
            step_loss = float(loss.data)
            metrics.step_losses.append(step_loss)
            total_loss += step_loss * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == labels[idx]).sum())

        val_acc = None
        if val_pairs and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            val_acc = evaluate(model, val_pairs, strategy, cfg.seed, cfg.eval_batch_size)
        row = {
            "epoch": epoch + 1,
            "train_loss": total_loss / max(n, 1),
            "train_acc": correct / max(n, 1),
            "val_acc": val_acc,
            "seconds": time.perf_counter() - t0,
        }
        metrics.epochs.append(row)
        logger.info("epoch %d loss %.4f train_acc %.4f val_acc %s", row["epoch"], row["train_loss"],
                    row["train_acc"], "-" if val_acc is None else f"{val_acc:.4f}")

        improved = False
        if val_pairs:
            if val_acc is not None and (metrics.best_val_acc is None or val_acc > metrics.best_val_acc):
                metrics.best_val_acc, metrics.best_epoch, improved = val_acc, epoch + 1, True
        else:
            metrics.best_epoch, improved = epoch + 1, True
        if cfg.checkpoint_path:
            if improved:
                save_checkpoint(cfg.checkpoint_path, model, opt, snapshot(epoch + 1))
            save_checkpoint(_last_path(cfg.checkpoint_path), model, opt, snapshot(epoch + 1))
        if cfg.target_train_acc is not None and row["train_acc"] >= cfg.target_train_acc:
            break
    return metrics


def alpha_sweep(train_pairs: Sequence[LabeledPair], val_pairs: Sequence[LabeledPair], alphas: Sequence[float],
                make_model, strategy: StrategyConfig, cfg: TrainConfig,
                csv_path: str | Path | None = None) -> list[tuple[float, float]]:
    """Train and evaluate once per alpha under the denoise strategy.

    ``make_model()`` must return a freshly initialised model (same seed
    every call).  Accuracy is the best validation accuracy of each run.
    """
    rows = []
    for alpha in alphas:
        model = make_model()
        strat = replace(strategy, strategy="denoise", alpha=float(alpha))
        run_cfg = replace(cfg, checkpoint_path=None)
        metrics = train(model, train_pairs, val_pairs, strat, run_cfg)
        acc = metrics.best_val_acc if metrics.best_val_acc is not None else float("nan")
        rows.append((float(alpha), float(acc)))
        logger.info("alpha %.2f -> accuracy %.4f", alpha, acc)
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["alpha", "accuracy"])
            for alpha, acc in rows:
                writer.writerow([repr(alpha), repr(acc)])
    return rows
