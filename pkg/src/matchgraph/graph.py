"""Unified premise/hypothesis graphs: local edges plus interactive edges."""

from __future__ import annotations

import enum
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import LabeledPair, ParsedSentence, RelationVocab

STRATEGIES = ("root", "cooccurrence", "denoise", "full")

DEFAULT_STOPWORDS = frozenset("""
a an the and or but if of at by for with about against between into through
during before after above below to from up down in out on off over under
is are was were be been being am do does did has have had this that these
those it its he she they them his her their i me my we our you your not no
""".split())


class EdgeKind(str, enum.Enum):
    LOCAL_DEP = "LOCAL_DEP"
    LOCAL_SEQ = "LOCAL_SEQ"
    INTERACTIVE = "INTERACTIVE"
    SELF = "SELF"


@dataclass(frozen=True)
class Edge:
    """Directed edge; messages flow from ``src`` into ``dst``."""

    src: int
    dst: int
    relation: int
    kind: EdgeKind


@dataclass
class StrategyConfig:
    strategy: str = "denoise"
    alpha: float = 0.9
    stopwords: frozenset = DEFAULT_STOPWORDS
    resample_each_epoch: bool = True

    def __post_init__(self):
        if self.strategy == "cooccur":
            self.strategy = "cooccurrence"
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        self.stopwords = frozenset(w.lower() for w in self.stopwords)


def load_stopwords(path: str | Path) -> frozenset:
    return frozenset(
        line.strip().lower() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()
    )


@dataclass
class SentencePairGraph:
    nodes: list[str]
    edges: list[Edge]
    premise_len: int
    hypothesis_len: int
    strategy: str
    seed: int | None = None
    _arrays: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def num_nodes(self) -> int:
        return self.premise_len + self.hypothesis_len

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src, dst, relation) as int64 arrays, cached."""
        if self._arrays is None:
            e = np.array([(x.src, x.dst, x.relation) for x in self.edges], dtype=np.int64).reshape(-1, 3)
            self._arrays = (e[:, 0].copy(), e[:, 1].copy(), e[:, 2].copy())
        return self._arrays

    def interactive_connections(self) -> set[tuple[int, int]]:
        """Undirected premise-hypothesis node pairs joined by an INTER edge."""
        return {
            (min(e.src, e.dst), max(e.src, e.dst))
            for e in self.edges if e.kind is EdgeKind.INTERACTIVE
        }

    def to_json(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [{"src": e.src, "dst": e.dst, "rel": e.relation, "kind": e.kind.value}
                      for e in self.edges],
            "M": self.premise_len,
            "N": self.hypothesis_len,
            "strategy": self.strategy,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> SentencePairGraph:
        edges = [Edge(e["src"], e["dst"], e["rel"], EdgeKind(e["kind"])) for e in d["edges"]]
        return cls(list(d["nodes"]), edges, d["M"], d["N"], d["strategy"], d.get("seed"))


def build_local_edges(s: ParsedSentence, relvocab: RelationVocab, offset: int = 0) -> list[Edge]:
    edges = []
    for head, dep, rel in s.arcs():
        edges.append(Edge(offset + head, offset + dep, relvocab[rel], EdgeKind.LOCAL_DEP))
        edges.append(Edge(offset + dep, offset + head, relvocab.inverse(rel), EdgeKind.LOCAL_DEP))
    seq = relvocab.seq_id
    for i in range(len(s) - 1):
        edges.append(Edge(offset + i, offset + i + 1, seq, EdgeKind.LOCAL_SEQ))
        edges.append(Edge(offset + i + 1, offset + i, seq, EdgeKind.LOCAL_SEQ))
    return edges


def _connect(pairs: Iterable[tuple[int, int]], m: int, inter: int) -> list[Edge]:
    edges = []
    for i, j in pairs:
        edges.append(Edge(i, m + j, inter, EdgeKind.INTERACTIVE))
        edges.append(Edge(m + j, i, inter, EdgeKind.INTERACTIVE))
    return edges


def interactive_root(p: ParsedSentence, q: ParsedSentence, relvocab: RelationVocab) -> list[Edge]:
    return _connect([(p.root_index, q.root_index)], len(p), relvocab.inter_id)


def interactive_cooccurrence(p: ParsedSentence, q: ParsedSentence, relvocab: RelationVocab,
                             stopwords: Iterable[str] = DEFAULT_STOPWORDS) -> list[Edge]:
    stop = {w.lower() for w in stopwords}
    qlow = [t.lower() for t in q.tokens]
    matches = [
        (i, j)
        for i, tok in enumerate(p.tokens)
        if (w := tok.lower()) not in stop
        for j, other in enumerate(qlow) if other == w
    ]
    return _connect(matches, len(p), relvocab.inter_id)


def interactive_denoise(p: ParsedSentence, q: ParsedSentence, relvocab: RelationVocab,
                        alpha: float, rng: np.random.Generator) -> list[Edge]:
    """Keep each of the M*N cross-sentence pairs independently with probability alpha."""
    m, n = len(p), len(q)
    # eps in (0, 1] so alpha=0 keeps nothing and alpha=1 keeps everything
    eps = 1.0 - rng.random((m, n))
    keep = eps <= alpha
    return _connect(((int(i), int(j)) for i, j in zip(*np.nonzero(keep))), m, relvocab.inter_id)


def interactive_full(p: ParsedSentence, q: ParsedSentence, relvocab: RelationVocab) -> list[Edge]:
    return _connect(((i, j) for i in range(len(p)) for j in range(len(q))), len(p), relvocab.inter_id)


def graph_seed(pair_id: str, seed: int, epoch: int | None) -> np.random.SeedSequence:
    """Seed sequence for one pair; ``epoch=None`` is the fixed evaluation sample."""
    key = zlib.crc32(pair_id.encode("utf-8"))
    tail = [0] if epoch is None else [1, int(epoch)]
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, key] + tail)


def build_pair_graph(pair: LabeledPair, cfg: StrategyConfig, relvocab: RelationVocab,
                     seed: int = 0, epoch: int | None = None) -> SentencePairGraph:
    p, q = pair.premise, pair.hypothesis
    m, n = len(p), len(q)
    edges = build_local_edges(p, relvocab, 0) + build_local_edges(q, relvocab, m)

    if cfg.strategy == "root":
        inter = interactive_root(p, q, relvocab)
    elif cfg.strategy == "cooccurrence":
        inter = interactive_cooccurrence(p, q, relvocab, cfg.stopwords)
    elif cfg.strategy == "full" or cfg.alpha == 1.0:
        inter = interactive_full(p, q, relvocab)
    else:
        sample_epoch = epoch if cfg.resample_each_epoch else None
        rng = np.random.default_rng(graph_seed(pair.pair_id, seed, sample_epoch))
        inter = interactive_denoise(p, q, relvocab, cfg.alpha, rng)
    if not inter:
        inter = interactive_root(p, q, relvocab)
    edges += inter
    edges += [Edge(i, i, relvocab.self_id, EdgeKind.SELF) for i in range(m + n)]
    return SentencePairGraph(list(p.tokens) + list(q.tokens), edges, m, n, cfg.strategy, seed)


def dump_graph(graph: SentencePairGraph, path: str | Path | None = None) -> str:
    text = json.dumps(graph.to_json(), indent=1)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


@dataclass
class GraphBatch:
    """Several pair graphs packed into one disjoint union.

    Node ids of pair ``b`` are shifted by ``node_offsets[b]``; within a pair
    the premise nodes come first.  ``sentence_of_node`` assigns premise of
    pair b to sentence 2b and its hypothesis to 2b+1.
    """

    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    num_nodes: int
    node_offsets: np.ndarray
    edge_offsets: np.ndarray
    premise_lens: np.ndarray
    hypothesis_lens: np.ndarray
    sentence_of_node: np.ndarray

    @property
    def num_pairs(self) -> int:
        return len(self.premise_lens)


def pack_graphs(graphs: Sequence[SentencePairGraph]) -> GraphBatch:
    srcs, dsts, rels, sent = [], [], [], []
    node_off, edge_off = [0], [0]
    for b, g in enumerate(graphs):
        s, d, r = g.arrays()
        srcs.append(s + node_off[-1])
        dsts.append(d + node_off[-1])
        rels.append(r)
        sent.append(np.repeat([2 * b, 2 * b + 1], [g.premise_len, g.hypothesis_len]))
        node_off.append(node_off[-1] + g.num_nodes)
        edge_off.append(edge_off[-1] + len(s))
    cat = lambda xs: np.concatenate(xs).astype(np.int64) if xs else np.zeros(0, dtype=np.int64)  # noqa: E731
    return GraphBatch(
        src=cat(srcs), dst=cat(dsts), rel=cat(rels),
        num_nodes=node_off[-1],
        node_offsets=np.array(node_off, dtype=np.int64),
        edge_offsets=np.array(edge_off, dtype=np.int64),
        premise_lens=np.array([g.premise_len for g in graphs], dtype=np.int64),
        hypothesis_lens=np.array([g.hypothesis_len for g in graphs], dtype=np.int64),
        sentence_of_node=cat(sent),
    )
