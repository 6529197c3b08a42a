"""Sentence-pair matcher: Bi-LSTM encoder, gated graph attention, fusion, classifier.

Everything is computed on a :class:`~matchgraph.graph.GraphBatch`, i.e. one
or more pair graphs packed as a disjoint union, so a mini-batch is a single
autodiff graph.  A single pair is simply a batch of one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .data import LabeledPair, RelationVocab, Vocab
from .graph import GraphBatch, SentencePairGraph, pack_graphs


@dataclass
class ModelConfig:
    vocab_size: int = 2
    num_relations: int = 3
    num_classes: int = 3
    embed_dim: int = 300
    lstm_layers: int = 3
    lstm_hidden: int = 256  # both directions together
    gat_layers: int = 2
    heads: int = 4
    head_dim: int = 64
    relation_dim: int = 128
    classifier_hidden: int = 256
    symmetric: bool = False
    ablate_contextual: bool = False
    ablate_gates: bool = False
    ablate_fusion_attention: bool = False
    activation_after_sum: bool = False
    leaky_slope: float = ad.LEAKY_SLOPE
    gate_bias_init: float = 1.0  # gates start open; without it activations shrink per layer
    dtype: str = "float64"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.heads * self.head_dim != self.lstm_hidden:
            raise ValueError(
                f"heads*head_dim ({self.heads}*{self.head_dim}={self.heads * self.head_dim}) "
                f"must equal lstm_hidden ({self.lstm_hidden})"
            )
        if self.lstm_hidden % 2:
            raise ValueError(f"lstm_hidden must be even (two directions), got {self.lstm_hidden}")
        if self.relation_dim <= 0:
            raise ValueError("relation_dim must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")
        for name in ("vocab_size", "num_relations", "num_classes", "embed_dim",
                     "lstm_layers", "gat_layers", "heads", "head_dim", "classifier_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def node_dim(self) -> int:
        return self.lstm_hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


# ---------------------------------------------------------------------------
# parameters


def _xavier(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_params(cfg: ModelConfig, seed: int = 0, embeddings: np.ndarray | None = None) -> dict[str, Value]:
    """Fresh parameters; names are stable and ordered (they define checkpoint layout)."""
    rng = np.random.default_rng(seed)
    dt = np.dtype(cfg.dtype)
    p: dict[str, np.ndarray] = {}
    if embeddings is not None:
        if embeddings.shape != (cfg.vocab_size, cfg.embed_dim):
            raise ValueError(f"embeddings shape {embeddings.shape} != ({cfg.vocab_size}, {cfg.embed_dim})")
        p["embed"] = np.array(embeddings, dtype=dt)
    else:
        p["embed"] = rng.uniform(-0.05, 0.05, size=(cfg.vocab_size, cfg.embed_dim)).astype(dt)
        p["embed"][0] = 0.0

    d = cfg.node_dim
    if cfg.ablate_contextual:
        p["proj.W"] = _xavier(rng, cfg.embed_dim, d, dt)
        p["proj.b"] = np.zeros(d, dtype=dt)
    else:
        h = cfg.lstm_hidden // 2
        for layer in range(cfg.lstm_layers):
            d_in = cfg.embed_dim if layer == 0 else cfg.lstm_hidden
            for direction in ("fwd", "bwd"):
                pre = f"lstm.{layer}.{direction}"
                p[f"{pre}.Wx"] = _xavier(rng, d_in, 4 * h, dt)
                p[f"{pre}.Wh"] = _xavier(rng, h, 4 * h, dt)
                b = np.zeros(4 * h, dtype=dt)
                b[h:2 * h] = 1.0  # forget gate
                p[f"{pre}.b"] = b

    hd = cfg.head_dim
    for k in range(cfg.gat_layers):
        for m in range(cfg.heads):
            pre = f"gat.{k}.h{m}"
            p[f"{pre}.We"] = _xavier(rng, d, hd, dt)
            p[f"{pre}.Wc"] = _xavier(rng, d, hd, dt)
            p[f"{pre}.Wa"] = _xavier(rng, 2 * hd, 1, dt)
        p[f"gat.{k}.Wg"] = _xavier(rng, 2 * d + cfg.relation_dim, hd, dt)
        p[f"gat.{k}.bg"] = np.full(hd, cfg.gate_bias_init, dtype=dt)
        p[f"gat.{k}.rel"] = rng.uniform(-0.05, 0.05, size=(cfg.num_relations, cfg.relation_dim)).astype(dt)

    p["fuse.WP"] = _xavier(rng, d, d, dt)
    p["fuse.W1"] = _xavier(rng, d, 1, dt)
    p["fuse.WQ"] = _xavier(rng, d, d, dt)
    p["fuse.W2"] = _xavier(rng, d, 1, dt)

    p["clf.W1"] = _xavier(rng, 4 * d, cfg.classifier_hidden, dt)
    p["clf.b1"] = np.zeros(cfg.classifier_hidden, dtype=dt)
    p["clf.W2"] = _xavier(rng, cfg.classifier_hidden, cfg.num_classes, dt)
    p["clf.b2"] = np.zeros(cfg.num_classes, dtype=dt)
    return {name: Value(arr, requires_grad=True) for name, arr in p.items()}


# ---------------------------------------------------------------------------
# contextual encoder


def _lstm_direction(x: Value, n_seq: int, steps: int, wx: Value, wh: Value, b: Value) -> Value:
    """Run one LSTM direction over time-major rows (row t*n_seq + s)."""
    h_dim = wh.shape[0]
    xw = ad.add_bias(x @ wx, b)
    h = c = None
    outs = []
    for t in range(steps):
        gates = ad.narrow(xw, 0, t * n_seq, (t + 1) * n_seq)
        if h is not None:
            gates = gates + h @ wh
        i = ad.sigmoid(ad.narrow(gates, 1, 0, h_dim))
        f = ad.sigmoid(ad.narrow(gates, 1, h_dim, 2 * h_dim))
        g = ad.tanh(ad.narrow(gates, 1, 2 * h_dim, 3 * h_dim))
        o = ad.sigmoid(ad.narrow(gates, 1, 3 * h_dim, 4 * h_dim))
        c = i * g if c is None else f * c + i * g
        h = o * ad.tanh(c)
        outs.append(h)
    return ad.concat(outs, axis=0)


def _time_major_layout(lengths: Sequence[int]):
    n_seq, steps = len(lengths), max(lengths)
    lengths = np.asarray(lengths, dtype=np.int64)
    t = np.arange(steps)[:, None]
    s = np.arange(n_seq)[None, :]
    valid = t < lengths[None, :]
    rev_t = np.where(valid, lengths[None, :] - 1 - t, t)
    reverse = (rev_t * n_seq + s).reshape(-1)
    # node order: sentence by sentence, tokens in order
    rows = np.concatenate([np.arange(n) * n_seq + k for k, n in enumerate(lengths)])
    return n_seq, steps, valid.reshape(-1), reverse, rows


def encode_sentences(sentences: Sequence[np.ndarray], params: dict[str, Value], cfg: ModelConfig) -> Value:
    """Contextual states for several sentences, rows concatenated in sentence order.

    Sentences share every encoder weight.  Padding sits at the tail of each
    sequence in both directions, so padded steps never influence valid ones.
    """
    lengths = [len(s) for s in sentences]
    if not lengths or min(lengths) == 0:
        raise ValueError("cannot encode an empty sentence")
    embed = params["embed"]
    if cfg.ablate_contextual:
        ids = np.concatenate([np.asarray(s, dtype=np.int64) for s in sentences])
        return ad.add_bias(ad.gather_rows(embed, ids) @ params["proj.W"], params["proj.b"])

    n_seq, steps, valid, reverse, rows = _time_major_layout(lengths)
    ids = np.zeros(steps * n_seq, dtype=np.int64)
    for k, s in enumerate(sentences):
        ids[np.arange(len(s)) * n_seq + k] = s
    x = ad.gather_rows(embed, ids)
    for layer in range(cfg.lstm_layers):
        pre = f"lstm.{layer}"
        fwd = _lstm_direction(x, n_seq, steps, params[f"{pre}.fwd.Wx"], params[f"{pre}.fwd.Wh"],
                              params[f"{pre}.fwd.b"])
        bwd = _lstm_direction(ad.gather_rows(x, reverse), n_seq, steps, params[f"{pre}.bwd.Wx"],
                              params[f"{pre}.bwd.Wh"], params[f"{pre}.bwd.b"])
        x = ad.concat([fwd, ad.gather_rows(bwd, reverse)], axis=1)
    return ad.gather_rows(x, rows)


def encode_contextual(premise_ids, hypothesis_ids, params, cfg) -> tuple[Value, Value]:
    """(H_P, H_Q) for one pair."""
    h = encode_sentences([np.asarray(premise_ids), np.asarray(hypothesis_ids)], params, cfg)
    m = len(premise_ids)
    return ad.narrow(h, 0, 0, m), ad.narrow(h, 0, m, h.shape[0])


# ---------------------------------------------------------------------------
# gated graph attention


def attention_scores(h_i: Value, h_j: Value, we: Value, wa: Value, slope: float = ad.LEAKY_SLOPE) -> Value:
    """Unnormalised score per row pair: LeakyReLU(Wa [We h_i ; We h_j])."""
    z = ad.concat([h_i @ we, h_j @ we], axis=1) @ wa
    return ad.leaky_relu(ad.reshape(z, (z.shape[0],)), slope)


def relational_gate(h_i: Value, h_j: Value, rel_ids, wg: Value, bg: Value, rel_table: Value) -> Value:
    """ReLU(Wg [h_i ; h_j ; e_rel] + bg) per row pair."""
    e = ad.gather_rows(rel_table, rel_ids)
    return ad.relu(ad.add_bias(ad.concat([h_i, h_j, e], axis=1) @ wg, bg))


def ggat_layer(h: Value, src, dst, rel, num_nodes: int, params: dict[str, Value],
               layer: int, cfg: ModelConfig) -> tuple[Value, dict]:
    """One gated graph attention layer over an edge list.

    Node ``i`` attends over its incoming edges (``dst == i``); each edge
    instance is normalised separately, so parallel edges count twice.
    Returns the new node states and a trace with per-head attention and
    the per-edge gates (``None`` when gates are ablated).
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if np.setdiff1d(np.arange(num_nodes), dst).size:
        raise AssertionError("every node needs at least one incoming edge")
    h_i = ad.gather_rows(h, dst)
    h_j = ad.gather_rows(h, src)
    gate = None
    if not cfg.ablate_gates:
        gate = relational_gate(h_i, h_j, rel, params[f"gat.{layer}.Wg"], params[f"gat.{layer}.bg"],
                               params[f"gat.{layer}.rel"])

    outs, attn = [], []
    for m in range(cfg.heads):
        pre = f"gat.{layer}.h{m}"
        z = attention_scores(h_i, h_j, params[f"{pre}.We"], params[f"{pre}.Wa"], cfg.leaky_slope)
        a = ad.segment_softmax(z, dst, num_nodes)
        weighted = ad.scale_rows(ad.gather_rows(h @ params[f"{pre}.Wc"], src), a)
        if cfg.activation_after_sum:
            msg = weighted if gate is None else gate * weighted
            outs.append(ad.tanh(ad.segment_sum(msg, dst, num_nodes)))
        else:
            msg = ad.tanh(weighted)
            if gate is not None:
                msg = gate * msg
            outs.append(ad.segment_sum(msg, dst, num_nodes))
        attn.append(a.data)
    trace = {"attention": attn, "gates": None if gate is None else gate.data}
    return ad.concat(outs, axis=1), trace


# ---------------------------------------------------------------------------
# fusion and classifier


def _pool(u: Value, w: Value, v: Value, groups: np.ndarray, n_groups: int, attend: bool):
    if attend:
        scores = ad.tanh(u @ w) @ v
        alpha = ad.segment_softmax(ad.reshape(scores, (u.shape[0],)), groups, n_groups)
    else:
        counts = np.bincount(groups, minlength=n_groups)
        alpha = Value((1.0 / counts[groups]).astype(u.data.dtype))
    return ad.segment_sum(ad.scale_rows(u, alpha), groups, n_groups), alpha


def fuse_batch(u: Value, batch: GraphBatch, params: dict[str, Value], cfg: ModelConfig):
    sent = batch.sentence_of_node
    p_rows = np.nonzero(sent % 2 == 0)[0]
    q_rows = np.nonzero(sent % 2 == 1)[0]
    attend = not cfg.ablate_fusion_attention
    b = batch.num_pairs
    s_p, alpha_p = _pool(ad.gather_rows(u, p_rows), params["fuse.WP"], params["fuse.W1"],
                         sent[p_rows] // 2, b, attend)
    s_q, alpha_q = _pool(ad.gather_rows(u, q_rows), params["fuse.WQ"], params["fuse.W2"],
                         sent[q_rows] // 2, b, attend)
    return s_p, s_q, alpha_p, alpha_q


def fuse(u_p: Value, u_q: Value, params: dict[str, Value], cfg: ModelConfig):
    """Self-attentive pooling of one pair: (S_P [1 x d], S_Q [1 x d], alpha_P, alpha_Q)."""
    attend = not cfg.ablate_fusion_attention
    s_p, a_p = _pool(u_p, params["fuse.WP"], params["fuse.W1"], np.zeros(u_p.shape[0], np.int64), 1, attend)
    s_q, a_q = _pool(u_q, params["fuse.WQ"], params["fuse.W2"], np.zeros(u_q.shape[0], np.int64), 1, attend)
    return s_p, s_q, a_p, a_q


def matching_features(s_p: Value, s_q: Value, symmetric: bool) -> Value:
    diff = s_p - s_q
    if symmetric:
        diff = ad.abs_(diff)
    return ad.concat([s_p, s_q, diff, s_p * s_q], axis=1)


def classify(s_p: Value, s_q: Value, params: dict[str, Value], cfg: ModelConfig) -> Value:
    """Logits [B x classes] from pooled sentence vectors [B x d]."""
    feat = matching_features(s_p, s_q, cfg.symmetric)
    hidden = ad.relu(ad.add_bias(feat @ params["clf.W1"], params["clf.b1"]))
    return ad.add_bias(hidden @ params["clf.W2"], params["clf.b2"])


# ---------------------------------------------------------------------------
# end to end


@dataclass
class ForwardTrace:
    """Intermediate quantities of one pair, as plain arrays."""

    H_P: np.ndarray
    H_Q: np.ndarray
    attention: list[list[np.ndarray]]  # [layer][head] -> per-edge weights
    gates: list[np.ndarray | None]  # [layer] -> edges x head_dim
    alpha_P: np.ndarray
    alpha_Q: np.ndarray
    S_P: np.ndarray
    S_Q: np.ndarray
    logits: np.ndarray
    node_states: list[np.ndarray] = field(default_factory=list)  # H^1 .. H^K

    @property
    def node_weights(self) -> np.ndarray:
        return np.concatenate([self.alpha_P, self.alpha_Q])


def forward_batch(sentences: Sequence[np.ndarray], batch: GraphBatch, params: dict[str, Value],
                  cfg: ModelConfig, trace: bool = False) -> tuple[Value, list[ForwardTrace] | None]:
    """Logits [B x classes] for packed pairs.

    ``sentences`` holds token ids ordered premise_0, hypothesis_0,
    premise_1, ...; this must agree with the node order of ``batch``.
    """
    h0 = encode_sentences(sentences, params, cfg)
    if h0.shape[0] != batch.num_nodes:
        raise ValueError(f"{h0.shape[0]} encoded tokens but graph batch has {batch.num_nodes} nodes")
    h = h0
    layer_traces, states = [], []
    for k in range(cfg.gat_layers):
        h, tr = ggat_layer(h, batch.src, batch.dst, batch.rel, batch.num_nodes, params, k, cfg)
        layer_traces.append(tr)
        states.append(h.data)
    s_p, s_q, alpha_p, alpha_q = fuse_batch(h, batch, params, cfg)
    logits = classify(s_p, s_q, params, cfg)
    if not trace:
        return logits, None
    return logits, _split_traces(batch, h0.data, layer_traces, states, alpha_p.data, alpha_q.data,
                                 s_p.data, s_q.data, logits.data)


def _split_traces(batch, h0, layer_traces, states, alpha_p, alpha_q, s_p, s_q, logits):
    out = []
    p_off = np.concatenate([[0], np.cumsum(batch.premise_lens)])
    q_off = np.concatenate([[0], np.cumsum(batch.hypothesis_lens)])
    for b in range(batch.num_pairs):
        n0, n1 = batch.node_offsets[b], batch.node_offsets[b + 1]
        e0, e1 = batch.edge_offsets[b], batch.edge_offsets[b + 1]
        m = int(batch.premise_lens[b])
        out.append(ForwardTrace(
            H_P=h0[n0:n0 + m].copy(),
            H_Q=h0[n0 + m:n1].copy(),
            attention=[[a[e0:e1].copy() for a in tr["attention"]] for tr in layer_traces],
            gates=[None if tr["gates"] is None else tr["gates"][e0:e1].copy() for tr in layer_traces],
            alpha_P=alpha_p[p_off[b]:p_off[b + 1]].copy(),
            alpha_Q=alpha_q[q_off[b]:q_off[b + 1]].copy(),
            S_P=s_p[b].copy(),
            S_Q=s_q[b].copy(),
            logits=logits[b].copy(),
            node_states=[s[n0:n1].copy() for s in states],
        ))
    return out


def pair_token_ids(pairs: Sequence[LabeledPair], vocab: Vocab) -> list[np.ndarray]:
    out = []
    for pair in pairs:
        out.append(np.array(vocab.encode(pair.premise.tokens), dtype=np.int64))
        out.append(np.array(vocab.encode(pair.hypothesis.tokens), dtype=np.int64))
    return out


def forward(pair: LabeledPair, graph: SentencePairGraph, params: dict[str, Value], cfg: ModelConfig,
            vocab: Vocab) -> tuple[Value, ForwardTrace]:
    """Logits (shape [classes]) and trace for a single pair."""
    logits, traces = forward_batch(pair_token_ids([pair], vocab), pack_graphs([graph]), params, cfg, trace=True)
    return ad.reshape(logits, (cfg.num_classes,)), traces[0]


@dataclass
class Model:
    """Parameters together with everything needed to feed them."""

    config: ModelConfig
    params: dict[str, Value]
    vocab: Vocab
    relvocab: RelationVocab
    labels: tuple[str, ...]

    def forward(self, pairs: Sequence[LabeledPair], graphs: Sequence[SentencePairGraph],
                trace: bool = False):
        return forward_batch(pair_token_ids(pairs, self.vocab), pack_graphs(graphs), self.params,
                             self.config, trace=trace)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}
