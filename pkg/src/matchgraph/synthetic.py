"""Template-generated parsed sentence pairs for smoke tests and demos."""

from __future__ import annotations

import numpy as np

from .data import ROOT, LabeledPair, ParsedSentence

SUBJECTS = ["man", "woman", "dog", "child", "girl", "boy", "cat", "player"]
ADJECTIVES = ["tall", "young", "old", "small", "happy", "tired"]
VERBS = ["eats", "holds", "throws", "kicks", "paints", "carries", "watches", "drops"]
OBJECTS = ["ball", "apple", "box", "book", "stick", "cup", "hat", "kite"]


def _svo(subj: str, verb: str, obj: str, adj: str | None = None) -> ParsedSentence:
    # the [adj] subj verb the obj
    if adj is None:
        tokens = ["the", subj, verb, "the", obj]
        heads = [1, 2, ROOT, 4, 2]
        rels = ["det", "nsubj", "root", "det", "dobj"]
    else:
        tokens = ["the", adj, subj, verb, "the", obj]
        heads = [2, 2, 3, ROOT, 5, 3]
        rels = ["det", "amod", "nsubj", "root", "det", "dobj"]
    return ParsedSentence(tokens, heads, rels)


def template_pairs(n: int, seed: int = 0) -> list[LabeledPair]:
    """Balanced two-class pairs: label 1 iff the hypothesis repeats the premise's verb.

    Classes alternate, so any prefix of even length is balanced.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for k in range(n):
        subj, obj = rng.choice(SUBJECTS), rng.choice(OBJECTS)
        adj = rng.choice(ADJECTIVES)
        verb = rng.choice(VERBS)
        label = k % 2
        if label:
            verb2 = verb
        else:
            verb2 = rng.choice([v for v in VERBS if v != verb])
        premise = _svo(str(subj), str(verb), str(obj), str(adj))
        hypothesis = _svo(str(rng.choice(SUBJECTS)), str(verb2), str(rng.choice(OBJECTS)))
        pairs.append(LabeledPair(premise, hypothesis, label, f"tpl-{seed}-{k}"))
    return pairs


def _chain(tokens: list[str]) -> ParsedSentence:
    # right-branching chain rooted at the last token
    n = len(tokens)
    heads = [i + 1 for i in range(n - 1)] + [ROOT]
    rels = ["dep"] * (n - 1) + ["root"]
    return ParsedSentence(tokens, heads, rels)


def overlap_pairs(n: int, seed: int = 0, vocab_size: int = 40, premise_len: int = 6,
                  hypothesis_len: int = 3) -> list[LabeledPair]:
    """Balanced two-class pairs: label 1 iff the hypothesis shares a word with the premise.

    Solving it requires relating individual words across the two sentences.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab_size)]
    pairs = []
    for k in range(n):
        label = k % 2
        chosen = rng.choice(vocab_size, size=premise_len + hypothesis_len, replace=False)
        prem = [words[i] for i in chosen[:premise_len]]
        hyp = [words[i] for i in chosen[premise_len:]]
        if label:
            hyp[rng.integers(hypothesis_len)] = prem[rng.integers(premise_len)]
        pairs.append(LabeledPair(_chain(prem), _chain(hyp), label, f"ovl-{seed}-{k}"))
    return pairs


def slot_pairs(n: int, seed: int = 0, vocab_size: int = 6, slots: int = 4) -> list[LabeledPair]:
    """Balanced two-class lookup pairs.

    The premise is ``slots`` random words; the hypothesis is ``[s<k>, w]``
    and the label is 1 iff the premise word at position ``k`` is ``w``.
    Pooling the premise well requires knowing which slot the hypothesis
    asks about.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for k in range(n):
        label = k % 2
        prem = [f"w{i}" for i in rng.integers(0, vocab_size, size=slots)]
        slot = int(rng.integers(slots))
        if label:
            word = prem[slot]
        else:
            others = [f"w{i}" for i in range(vocab_size) if f"w{i}" != prem[slot]]
            word = others[int(rng.integers(len(others)))]
        pairs.append(LabeledPair(_chain(prem), _chain([f"s{slot}", word]), label, f"slot-{seed}-{k}"))
    return pairs


def single_pair(premise_len: int = 4, hypothesis_len: int = 5, seed: int = 0) -> LabeledPair:
    """One small pair with chain parses, for gradient checks."""
    rng = np.random.default_rng(seed)
    pool = SUBJECTS + VERBS + OBJECTS
    prem = [str(w) for w in rng.choice(pool, size=premise_len, replace=False)]
    hyp = [str(w) for w in rng.choice(pool, size=hypothesis_len, replace=False)]
    hyp[0] = prem[-1]
    return LabeledPair(_chain(prem), _chain(hyp), 0, f"single-{seed}")
