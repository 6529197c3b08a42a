import csv
import math

import numpy as np
import pytest
from conftest import TINY, numeric_grad

from matchgraph import autodiff as ad
from matchgraph.autodiff import Value
from matchgraph.checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from matchgraph.data import LABEL_SETS
from matchgraph.graph import StrategyConfig
from matchgraph.synthetic import overlap_pairs, template_pairs
from matchgraph.training import (AdamState, RunMetrics, TrainConfig, TrainingError, adam_step, alpha_sweep,
                                 build_model, clip_global_norm, cross_entropy, epoch_permutation, evaluate,
                                 predict, train)

BINARY = LABEL_SETS["binary"]


@pytest.fixture(scope="module")
def data():
    pairs = template_pairs(40, seed=3)
    return pairs[:32], pairs[32:]


def tiny_model(pairs, seed=0, **kw):
    return build_model(pairs, BINARY, {**TINY, **kw}, min_count=1, seed=seed)


# --- loss -------------------------------------------------------------------

def test_uniform_logits_three_classes():
    loss = cross_entropy(Value(np.zeros(3)), 1)
    assert loss.data == pytest.approx(1.0986122886681098, abs=1e-15)


def test_loss_falls_to_zero_with_margin():
    losses = [float(cross_entropy(Value(np.array([m, 0.0, 0.0])), 0).data) for m in (0, 1, 5, 20, 30)]
    assert all(a > b > 0 for a, b in zip(losses, losses[1:]))
    # beyond ~37 the loss underflows to exactly zero rather than overflowing
    assert float(cross_entropy(Value(np.array([800.0, 0.0, 0.0])), 0).data) == 0.0


def test_loss_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 1])
    v = Value(x.copy(), requires_grad=True)
    ad.backward(cross_entropy(v, labels))
    p = np.exp(x) / np.exp(x).sum(axis=1, keepdims=True)
    p[np.arange(4), labels] -= 1
    assert np.abs(v.grad - p / 4).max() < 1e-15
    num = numeric_grad(lambda: cross_entropy(Value(x), labels).data, x)
    assert np.abs(num - v.grad).max() < 1e-8


def test_loss_rejects_nonfinite_and_bad_labels():
    with pytest.raises(FloatingPointError):
        cross_entropy(Value(np.array([0.0, np.inf])), 0)
    with pytest.raises(ValueError):
        cross_entropy(Value(np.zeros(3)), 3)


# --- optimizer ----------------------------------------------------------------

def test_adam_first_step_is_signed_lr():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    g = {"w": np.array([0.3, -5.0, 1e-2])}
    state = AdamState.zeros_like(p)
    adam_step(p, g, state, lr=5e-4, eps=0.0)
    assert np.allclose(p["w"] - np.array([1.0, -2.0, 3.0]), -5e-4 * np.sign(g["w"]), rtol=1e-12, atol=0)
    assert state.t == 1


def test_adam_zero_gradient_no_update():
    p = {"w": np.array([1.0, 2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState.zeros_like(p))
    assert p["w"].tolist() == [1.0, 2.0]


def test_adam_quadratic_converges():
    theta = {"w": np.array([1.0, -1.0])}
    state = AdamState.zeros_like(theta)
    for _ in range(2000):
        adam_step(theta, {"w": 2 * theta["w"]}, state, lr=1e-2)
    assert np.linalg.norm(theta["w"]) < 1e-3


def test_adam_nonfinite_gradient_names_parameter():
    p = {"gat.0.Wg": np.zeros(2)}
    with pytest.raises(FloatingPointError, match="gat.0.Wg"):
        adam_step(p, {"gat.0.Wg": np.array([np.nan, 0.0])}, AdamState.zeros_like(p))


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0]), "c": None}
    assert clip_global_norm(grads, 1.0) == 5.0
    assert math.isclose(np.hypot(grads["a"][0], grads["b"][0]), 1.0, rel_tol=1e-9)


# --- loop -------------------------------------------------------------------

def test_epoch_permutation_covers_dataset():
    perm = epoch_permutation(50, 3, 4)
    assert sorted(perm) == list(range(50))
    assert np.array_equal(perm, epoch_permutation(50, 3, 4))
    assert not np.array_equal(perm, epoch_permutation(50, 3, 5))


def run(data, tmp_path=None, epochs=3, seed=0, strategy=StrategyConfig("denoise", 0.5), **kw):
    tr, va = data
    model = tiny_model(tr, seed)
    ck = None if tmp_path is None else str(tmp_path / "model.ckpt")
    cfg = TrainConfig(learning_rate=2e-3, batch_size=8, epochs=epochs, seed=seed, checkpoint_path=ck, **kw)
    return model, train(model, tr, va, strategy, cfg)


def test_determinism(data, tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    _, m1 = run(data, tmp_path / "a")
    _, m2 = run(data, tmp_path / "b")
    assert np.abs(np.array(m1.step_losses) - np.array(m2.step_losses)).max() <= 1e-12
    for name in ("model.ckpt", "model.ckpt.last"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_different_seed_differs(data):
    _, m1 = run(data, epochs=1, seed=0)
    _, m2 = run(data, epochs=1, seed=1)
    assert m1.step_losses != m2.step_losses


def test_resume_matches_uninterrupted(data, tmp_path):
    _, full = run(data, epochs=4)
    tr, va = data
    model = tiny_model(tr)
    ck = str(tmp_path / "m.ckpt")
    strat = StrategyConfig("denoise", 0.5)
    first = train(model, tr, va, strat, TrainConfig(learning_rate=2e-3, batch_size=8, epochs=2, checkpoint_path=ck))
    resumed_model = tiny_model(tr, seed=99)  # parameters are overwritten by the resume
    second = train(resumed_model, tr, va, strat, TrainConfig(learning_rate=2e-3, batch_size=8, epochs=4),
                   resume_from=ck + ".last")
    steps = np.array(first.step_losses + second.step_losses)
    assert len(steps) == len(full.step_losses)
    assert np.abs(steps - np.array(full.step_losses)).max() <= 1e-10


def test_resume_without_optimizer_state(data, tmp_path):
    tr, va = data
    model = tiny_model(tr)
    save_checkpoint(tmp_path / "plain.ckpt", model)
    with pytest.raises(TrainingError, match="optimizer"):
        train(model, tr, va, StrategyConfig(), TrainConfig(epochs=1), resume_from=tmp_path / "plain.ckpt")


def test_zero_epochs_saves_initial_params(data, tmp_path):
    tr, va = data
    model = tiny_model(tr)
    before = {k: v.copy() for k, v in model.arrays().items()}
    metrics = train(model, tr, va, StrategyConfig(), TrainConfig(epochs=0, checkpoint_path=str(tmp_path / "c")))
    assert metrics.epochs == []
    loaded, state, _ = load_checkpoint(tmp_path / "c")
    assert state["epoch"] == 0
    for k, v in before.items():
        assert np.array_equal(loaded.params[k].data, v)


def test_nonfinite_loss_reports_coordinates(data):
    tr, va = data
    model = tiny_model(tr)
    model.params["clf.b2"].data[0] = np.nan
    with pytest.raises(TrainingError, match="epoch 0, batch 0"):
        train(model, tr, va, StrategyConfig(), TrainConfig(epochs=1))


def test_ablate_gates_run(data):
    tr, va = data
    model = tiny_model(tr, ablate_gates=True)
    metrics = train(model, tr, va, StrategyConfig("root"), TrainConfig(epochs=1, batch_size=16))
    assert len(metrics.epochs) == 1 and 0 <= metrics.epochs[0]["train_acc"] <= 1


def test_metrics_csv(data, tmp_path):
    _, metrics = run(data, epochs=2)
    metrics.write_csv(tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["epoch", "train_loss", "train_acc", "val_acc", "seconds"]
    assert len(rows) == 3 and rows[1][4] == ""
    metrics.write_csv(tmp_path / "t.csv", timing=True)
    assert float(list(csv.reader(open(tmp_path / "t.csv")))[1][4]) >= 0
    RunMetrics().write_csv(tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == "epoch,train_loss,train_acc,val_acc,seconds\n"


# --- evaluation and checkpoints ---------------------------------------------

def test_evaluate_idempotent_and_random_near_half():
    pairs = overlap_pairs(1000, seed=8, vocab_size=30)
    model = tiny_model(pairs, seed=4)
    strat = StrategyConfig("denoise", 0.5)
    a = evaluate(model, pairs, strat)
    assert a == evaluate(model, pairs, strat)
    assert abs(a - 0.5) <= 3 * math.sqrt(0.25 / 1000)


def test_checkpoint_round_trip(data, tmp_path):
    tr, va = data
    model, _ = run(data, epochs=2)
    strat = StrategyConfig("denoise", 0.5)
    before = evaluate(model, tr + va, strat)
    preds = predict(model, tr + va, strat)
    save_checkpoint(tmp_path / "c", model)
    loaded, _, extra = load_checkpoint(tmp_path / "c")
    assert extra == {}
    assert list(loaded.params) == list(model.params)
    for k in model.params:
        assert np.array_equal(loaded.params[k].data, model.params[k].data)
    assert loaded.config == model.config
    assert loaded.vocab.itos == model.vocab.itos and loaded.labels == model.labels
    assert evaluate(loaded, tr + va, strat) == before
    assert np.array_equal(predict(loaded, tr + va, strat), preds)


def test_checkpoint_layout(data, tmp_path):
    model = tiny_model(data[0])
    save_checkpoint(tmp_path / "c", model)
    raw = (tmp_path / "c").read_bytes()
    assert raw.startswith(b"MATCHGRAPH-CKPT\n")
    manifest, arrays = read_checkpoint(tmp_path / "c")
    assert [a["name"] for a in manifest["arrays"]] == list(model.params)
    total = sum(a.nbytes for a in arrays.values())
    header = int.from_bytes(raw[16:24], "little")
    assert len(raw) == 16 + 8 + header + total


def test_checkpoint_corruption_detected(data, tmp_path):
    model = tiny_model(data[0])
    save_checkpoint(tmp_path / "c", model)
    raw = (tmp_path / "c").read_bytes()
    (tmp_path / "t").write_bytes(raw[:-4])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(tmp_path / "t")
    (tmp_path / "x").write_bytes(b"nope" + raw)
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "x")


def test_alpha_sweep_rows_and_full_equivalence(tmp_path):
    pairs = overlap_pairs(24, seed=2, vocab_size=20)
    tr, va = pairs[:16], pairs[16:]
    cfg = TrainConfig(learning_rate=2e-3, batch_size=8, epochs=1)
    alphas = [round(0.1 * k, 1) for k in range(11)]

    def make():
        return tiny_model(tr + va)

    rows = alpha_sweep(tr, va, alphas, make, StrategyConfig("denoise"), cfg, tmp_path / "sweep.csv")
    assert [a for a, _ in rows] == alphas
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "alpha,accuracy" and len(lines) == 12
    model = make()
    full = train(model, tr, va, StrategyConfig("full"), cfg)
    assert rows[-1][1] == full.best_val_acc
