"""Node and edge importance from fusion weights, plus Graphviz DOT rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graph import EdgeKind, SentencePairGraph
from .model import ForwardTrace

_LO, _HI = 0.1, 1.0


@dataclass
class ImportanceReport:
    node_weights: np.ndarray  # premise nodes then hypothesis nodes
    edge_weights: np.ndarray  # aligned with graph.edges
    predicted_label: str
    logits: np.ndarray

    def to_json(self, graph: SentencePairGraph) -> dict:
        return {
            "predicted_label": self.predicted_label,
            "logits": [float(x) for x in self.logits],
            "nodes": [{"index": i, "token": tok, "weight": float(w)}
                      for i, (tok, w) in enumerate(zip(graph.nodes, self.node_weights))],
            "edges": [{"src": e.src, "dst": e.dst, "rel": e.relation, "kind": e.kind.value,
                       "weight": float(w)} for e, w in zip(graph.edges, self.edge_weights)],
        }

    def dumps(self, graph: SentencePairGraph) -> str:
        return json.dumps(self.to_json(graph), indent=2, sort_keys=True) + "\n"


def node_importance(trace: ForwardTrace) -> tuple[np.ndarray, np.ndarray]:
    """The fusion weights (premise, hypothesis) exactly as pooled."""
    return trace.alpha_P, trace.alpha_Q


def edge_importance(trace: ForwardTrace, graph: SentencePairGraph) -> np.ndarray:
    """Edge (u, v) scores w(u) + w(v)."""
    w = trace.node_weights
    src, dst, _ = graph.arrays()
    return w[src] + w[dst]


def importance_report(trace: ForwardTrace, graph: SentencePairGraph, labels) -> ImportanceReport:
    logits = np.asarray(trace.logits)
    return ImportanceReport(
        node_weights=trace.node_weights.copy(),
        edge_weights=edge_importance(trace, graph),
        predicted_label=labels[int(np.argmax(logits))],
        logits=logits,
    )


def default_threshold(report: ImportanceReport) -> float:
    return 0.5 * float(report.edge_weights.mean()) if report.edge_weights.size else 0.0


def _rescale(x: np.ndarray) -> np.ndarray:
    """Linear map of ``x`` onto [0.1, 1]; constant input maps to 1."""
    if x.size == 0:
        return x
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 0:
        return np.full_like(x, _HI, dtype=float)
    return _LO + (_HI - _LO) * (x - lo) / (hi - lo)


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _grey(level: float) -> str:
    # level 1 -> darkest
    v = int(round(255 * (1.0 - 0.85 * level)))
    return f"#{v:02x}{v:02x}{v:02x}"


def export_dot(graph: SentencePairGraph, report: ImportanceReport, threshold: float | None = None,
               relation_names=None) -> str:
    """Render the pair graph as a DOT digraph.

    Node fill darkness and edge pen width grow linearly with importance.
    Interactive edges whose weight is below ``threshold`` (default half the
    mean edge weight) are dropped; intra-sentence edges are always drawn.
    """
    if len(report.node_weights) != graph.num_nodes or len(report.edge_weights) != len(graph.edges):
        raise ValueError("report does not match graph")
    if threshold is None:
        threshold = default_threshold(report)
    node_level = _rescale(np.asarray(report.node_weights, dtype=float))
    edge_level = _rescale(np.asarray(report.edge_weights, dtype=float))
    m = graph.premise_len

    lines = ["digraph pair {", "  rankdir=LR;", "  node [shape=box, style=filled];"]
    for name, rng in (("premise", range(0, m)), ("hypothesis", range(m, graph.num_nodes))):
        lines.append(f"  subgraph cluster_{name} {{")
        lines.append(f"    label={_quote(name)};")
        for i in rng:
            fill = _grey(node_level[i])
            font = "white" if node_level[i] > 0.6 else "black"
            lines.append(f"    n{i} [label={_quote(graph.nodes[i])}, fillcolor={_quote(fill)}, "
                         f"fontcolor={font}, tooltip={_quote(f'{report.node_weights[i]:.6f}')}];")
        lines.append("  }")
    for k, e in enumerate(graph.edges):
        w = report.edge_weights[k]
        if e.kind is EdgeKind.INTERACTIVE and w < threshold:
            continue
        attrs = [f"penwidth={0.5 + 3.5 * edge_level[k]:.3f}", f"tooltip={_quote(f'{w:.6f}')}"]
        if relation_names is not None:
            attrs.append(f"label={_quote(relation_names[e.relation])}")
        if e.kind is EdgeKind.INTERACTIVE:
            attrs.append("style=dashed")
        lines.append(f"  n{e.src} -> n{e.dst} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
