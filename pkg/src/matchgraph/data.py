"""Parsed sentence pairs, vocabularies and embedding loading."""

from __future__ import annotations

import json
import logging
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ROOT = -1

PAD, UNK = "<pad>", "<unk>"
SELF, SEQ, INTER = "SELF", "SEQ", "INTER"
INVERSE_SUFFIX = "_inv"

LABEL_SETS = {
    "snli3": ("entailment", "neutral", "contradiction"),
    "binary": ("not_paraphrase", "paraphrase"),
}


class FormatError(ValueError):
    """Input text does not follow the expected file layout."""


class StructureError(ValueError):
    """Dependency heads do not form a single rooted tree."""


def _is_punct(token: str) -> bool:
    return bool(token) and all(ch in string.punctuation for ch in token)


def _tree_problem(heads: Sequence[int]) -> str | None:
    n = len(heads)
    if n == 0:
        return "empty sentence"
    roots = [i for i, h in enumerate(heads) if h == ROOT]
    if len(roots) != 1:
        return f"expected exactly one root, found {len(roots)}"
    for i, h in enumerate(heads):
        if h != ROOT and not 0 <= h < n:
            return f"head {h} of token {i} out of range"
        if h == i:
            return f"token {i} is its own head"
    # each token must reach the root without revisiting
    state = [0] * n  # 0 unknown, 1 on current path, 2 reaches root
    for start in range(n):
        path = []
        node = start
        while node != ROOT and state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node]
        if node != ROOT and state[node] == 1:
            return f"cycle through token {node}"
        for p in path:
            state[p] = 2
    return None


@dataclass(frozen=True)
class ParsedSentence:
    tokens: tuple[str, ...]
    heads: tuple[int, ...]
    deprels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "deprels", tuple(self.deprels))
        if not (len(self.tokens) == len(self.heads) == len(self.deprels)):
            raise FormatError(
                f"tokens/heads/deprels lengths differ: "
                f"{len(self.tokens)}/{len(self.heads)}/{len(self.deprels)}"
            )
        problem = _tree_problem(self.heads)
        if problem:
            raise StructureError(problem)

    def __len__(self):
        return len(self.tokens)

    @property
    def root_index(self) -> int:
        return self.heads.index(ROOT)

    def arcs(self) -> list[tuple[int, int, str]]:
        """(head, dependent, relation) for every non-root token."""
        return [(h, d, r) for d, (h, r) in enumerate(zip(self.heads, self.deprels)) if h != ROOT]

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "heads": list(self.heads), "deprels": list(self.deprels)}

    @classmethod
    def from_dict(cls, d: dict) -> ParsedSentence:
        return cls(d["tokens"], d["heads"], d["deprels"])


@dataclass(frozen=True)
class LabeledPair:
    premise: ParsedSentence
    hypothesis: ParsedSentence
    label: int
    pair_id: str

    def to_dict(self, labels: Sequence[str]) -> dict:
        return {
            "pair_id": self.pair_id,
            "label": labels[self.label],
            "premise": self.premise.to_dict(),
            "hypothesis": self.hypothesis.to_dict(),
        }


# ---------------------------------------------------------------------------
# CoNLL-U


def _split_columns(line: str) -> list[str]:
    return line.split("\t") if "\t" in line else line.split()


def parse_conllu_blocks(text: str) -> list[tuple[dict[str, str], ParsedSentence]]:
    """Parse CoNLL-U text, keeping ``# key = value`` comments per sentence.

    Accepts full 10-column rows (HEAD and DEPREL in columns 7 and 8) or a
    compact 4-column ``ID FORM HEAD DEPREL`` layout.  Multiword-token
    ranges and empty nodes are skipped.
    """
    blocks: list[tuple[dict[str, str], ParsedSentence]] = []
    meta: dict[str, str] = {}
    rows: list[tuple[int, list[str]]] = []

    def flush():
        nonlocal meta, rows
        if not rows:
            meta = {}
            return
        tokens, heads, deprels = [], [], []
        for lineno, cols in rows:
            if len(cols) >= 8:
                form, head, rel = cols[1], cols[6], cols[7]
            elif len(cols) == 4:
                form, head, rel = cols[1], cols[2], cols[3]
            else:
                raise FormatError(f"line {lineno}: expected 4 or >= 8 columns, got {len(cols)}")
            try:
                h = int(head)
            except ValueError:
                raise FormatError(f"line {lineno}: HEAD {head!r} is not an integer") from None
            tokens.append(form)
            heads.append(ROOT if h == 0 else h - 1)
            deprels.append(rel)
        try:
            sent = ParsedSentence(tokens, heads, deprels)
        except StructureError as exc:
            raise StructureError(f"sentence {len(blocks)}: {exc}") from None
        blocks.append((meta, sent))
        meta, rows = {}, []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, val = body.partition("=")
                meta[key.strip()] = val.strip()
            continue
        cols = _split_columns(line)
        if len(cols) < 4:
            raise FormatError(f"line {lineno}: expected 4 or >= 8 columns, got {len(cols)}")
        if "-" in cols[0] or "." in cols[0]:
            continue
        rows.append((lineno, cols))
    flush()
    for i, (_, sent) in enumerate(blocks):
        for tok in sent.tokens:
            if _is_punct(tok):
                logger.warning("sentence %d: punctuation-only token %r", i, tok)
    return blocks


def parse_conllu(text: str) -> list[ParsedSentence]:
    return [sent for _, sent in parse_conllu_blocks(text)]


def to_conllu(sentences: Iterable[ParsedSentence]) -> str:
    out = []
    for sent in sentences:
        for i, (tok, h, rel) in enumerate(zip(sent.tokens, sent.heads, sent.deprels), start=1):
            head = 0 if h == ROOT else h + 1
            out.append(f"{i}\t{tok}\t_\t_\t_\t_\t{head}\t{rel}\t_\t_")
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def pairs_from_conllu(text: str, labels: Sequence[str]) -> list[LabeledPair]:
    """Read premise/hypothesis sentences from alternating CoNLL-U blocks.

    The premise block carries ``# label = ...`` and optionally
    ``# pair_id = ...`` comments.
    """
    blocks = parse_conllu_blocks(text)
    if len(blocks) % 2:
        raise FormatError(f"odd number of sentences ({len(blocks)}); expected premise/hypothesis pairs")
    pairs = []
    for k in range(0, len(blocks), 2):
        meta = {**blocks[k + 1][0], **blocks[k][0]}
        pair_id = meta.get("pair_id", str(k // 2))
        if "label" not in meta:
            raise FormatError(f"pair {pair_id}: missing '# label = ...' comment")
        label = resolve_label(meta["label"], labels, pair_id)
        pairs.append(LabeledPair(blocks[k][1], blocks[k + 1][1], label, pair_id))
    return pairs


# ---------------------------------------------------------------------------
# JSONL pairs


def label_set(name_or_path: str) -> tuple[str, ...]:
    """Built-in label set name, or a path to a file with one label per line."""
    if name_or_path in LABEL_SETS:
        return LABEL_SETS[name_or_path]
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(f"label set {name_or_path!r} is neither built-in nor a file")
    labels = tuple(line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip())
    if not labels:
        raise FormatError(f"label file {name_or_path} is empty")
    return labels


def resolve_label(raw, labels: Sequence[str], pair_id: str) -> int:
    if isinstance(raw, bool):
        raw = int(raw)
    if isinstance(raw, int):
        if 0 <= raw < len(labels):
            return raw
        raise ValueError(f"pair {pair_id}: label index {raw} outside label set of size {len(labels)}")
    raw = str(raw)
    if raw in labels:
        return labels.index(raw)
    raise ValueError(f"pair {pair_id}: unknown label {raw!r}; expected one of {list(labels)}")


def load_pairs(path: str | Path, labels: Sequence[str] = LABEL_SETS["snli3"]) -> list[LabeledPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            pair_id = str(rec.get("pair_id", lineno - 1))
            try:
                premise = ParsedSentence.from_dict(rec["premise"])
                hypothesis = ParsedSentence.from_dict(rec["hypothesis"])
                raw_label = rec["label"]
            except KeyError as exc:
                raise FormatError(f"{path}:{lineno}: pair {pair_id} missing field {exc}") from None
            except StructureError as exc:
                raise StructureError(f"pair {pair_id}: {exc}") from None
            label = resolve_label(raw_label, labels, pair_id)
            pairs.append(LabeledPair(premise, hypothesis, label, pair_id))
    for pair in pairs:
        for sent in (pair.premise, pair.hypothesis):
            if any(_is_punct(t) for t in sent.tokens):
                logger.warning("pair %s: punctuation-only token present", pair.pair_id)
                break
    return pairs


def write_pairs(path: str | Path, pairs: Iterable[LabeledPair], labels: Sequence[str]):
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_dict(labels), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# vocabularies


@dataclass
class Vocab:
    """Lower-cased word ids; PAD is 0 and UNK is 1."""

    itos: list[str]
    min_count: int = 1
    stoi: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.itos[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with PAD and UNK")
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    pad_id = 0
    unk_id = 1

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word.lower() in self.stoi

    def lookup(self, word: str) -> int:
        return self.stoi.get(word.lower(), self.unk_id)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]


def word_counts(pairs: Iterable[LabeledPair]) -> Counter:
    counts: Counter = Counter()
    for pair in pairs:
        for sent in (pair.premise, pair.hypothesis):
            counts.update(t.lower() for t in sent.tokens)
    return counts


def build_vocab(pairs: Iterable[LabeledPair], min_count: int = 10) -> Vocab:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = word_counts(pairs)
    kept = sorted((w for w, c in counts.items() if c >= min_count and w not in (PAD, UNK)),
                  key=lambda w: (-counts[w], w))
    return Vocab([PAD, UNK] + kept, min_count)


@dataclass
class RelationVocab:
    itos: list[str]
    stoi: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.itos[:3] != [SELF, SEQ, INTER]:
            raise ValueError("relation vocabulary must start with SELF, SEQ, INTER")
        self.stoi = {r: i for i, r in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __getitem__(self, label: str) -> int:
        try:
            return self.stoi[label]
        except KeyError:
            raise KeyError(f"relation {label!r} not in relation vocabulary") from None

    def inverse(self, label: str) -> int:
        return self[label + INVERSE_SUFFIX]

    @property
    def self_id(self):
        return 0

    @property
    def seq_id(self):
        return 1

    @property
    def inter_id(self):
        return 2


def build_relation_vocab(pairs: Iterable[LabeledPair]) -> RelationVocab:
    rels = set()
    for pair in pairs:
        rels.update(pair.premise.deprels)
        rels.update(pair.hypothesis.deprels)
    # the root token's own label never becomes an edge, but keeping it is harmless
    labels = [SELF, SEQ, INTER]
    for r in sorted(rels):
        labels += [r, r + INVERSE_SUFFIX]
    return RelationVocab(labels)


# ---------------------------------------------------------------------------
# embeddings


def load_embeddings(path: str | Path | None, vocab: Vocab, dim: int = 300,
                    seed: int = 0, dtype=np.float64) -> tuple[np.ndarray, int]:
    """Build a |V| x dim matrix from a whitespace-separated vector file.

    Rows for words found in the file are copied; every other row except
    PAD (kept at zero) is drawn from U(-0.05, 0.05).  Returns the matrix
    and the number of vocabulary words found in the file.
    """
    rng = np.random.default_rng(seed)
    emb = rng.uniform(-0.05, 0.05, size=(len(vocab), dim)).astype(dtype)
    emb[vocab.pad_id] = 0.0
    if path is None:
        return emb, 0
    found = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip().split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            if len(parts) != dim + 1:
                raise FormatError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            word = parts[0].lower()
            idx = vocab.stoi.get(word)
            if idx is None or idx in (vocab.pad_id, vocab.unk_id) or idx in found:
                continue
            try:
                emb[idx] = np.asarray(parts[1:], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric vector entry") from None
            found.add(idx)
    return emb, len(found)
