import json
import logging
from collections import Counter

import numpy as np
import pytest

from matchgraph.data import (LABEL_SETS, PAD, ROOT, SELF, SEQ, INTER, UNK, FormatError, LabeledPair,
                             ParsedSentence, StructureError, build_relation_vocab, build_vocab, label_set,
                             load_embeddings, load_pairs, pairs_from_conllu, parse_conllu, to_conllu,
                             write_pairs)


def _chain(tokens, rels=None):
    n = len(tokens)
    heads = [i + 1 for i in range(n - 1)] + [ROOT]
    return ParsedSentence(tokens, heads, rels or ["dep"] * (n - 1) + ["root"])


def _record(pair_id, label, prem, hyp):
    return {"pair_id": pair_id, "label": label, "premise": prem.to_dict(), "hypothesis": hyp.to_dict()}


# --- CoNLL-U --------------------------------------------------------------

def test_two_token_block_hand_parsed():
    (s,) = parse_conllu("1\tcats\t_\t_\t_\t_\t2\tnsubj\t_\t_\n2\tsleep\t_\t_\t_\t_\t0\troot\t_\t_\n")
    assert s.tokens == ("cats", "sleep")
    assert s.heads == (1, ROOT)
    assert s.root_index == 1
    assert s.deprels == ("nsubj", "root")


def test_compact_four_column_rows():
    (s,) = parse_conllu("1 cats 2 nsubj\n2 sleep 0 root\n")
    assert s.heads == (1, ROOT)


def test_single_token():
    (s,) = parse_conllu("1 hi 0 root\n")
    assert s.root_index == 0


def test_cycle_is_structural_error_with_index():
    text = "1 ok 0 root\n\n1 a 2 dep\n2 b 1 dep\n"
    with pytest.raises(StructureError, match="sentence 1"):
        parse_conllu(text)


@pytest.mark.parametrize("heads", [[ROOT, ROOT], [1, 2, 0], [ROOT, 1]])
def test_non_trees_rejected(heads):
    with pytest.raises(StructureError):
        ParsedSentence(["a"] * len(heads), heads, ["dep"] * len(heads))


def test_missing_columns_reports_line():
    with pytest.raises(FormatError, match="line 2"):
        parse_conllu("1 a 0 root\n2 b 1\n")


def test_bad_head_reports_line():
    with pytest.raises(FormatError, match="line 1"):
        parse_conllu("1 a x root\n")


def test_multiword_ranges_and_empty_nodes_skipped():
    text = ("1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n"
            "1\tdo\t_\t_\t_\t_\t0\troot\t_\t_\n"
            "2\tn't\t_\t_\t_\t_\t1\tadvmod\t_\t_\n"
            "2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n")
    (s,) = parse_conllu(text)
    assert s.tokens == ("do", "n't")


def test_conllu_round_trip(templates):
    sents = [p.premise for p in templates[:10]] + [p.hypothesis for p in templates[:10]]
    assert parse_conllu(to_conllu(sents)) == sents


def test_pairs_from_conllu():
    text = ("# pair_id = a\n# label = neutral\n1 cats 2 nsubj\n2 sleep 0 root\n\n"
            "1 dogs 0 root\n")
    (pair,) = pairs_from_conllu(text, LABEL_SETS["snli3"])
    assert pair.pair_id == "a" and pair.label == 1 and pair.hypothesis.tokens == ("dogs",)


def test_punctuation_only_token_warns(caplog):
    with caplog.at_level(logging.WARNING):
        parse_conllu("1 hi 0 root\n2 . 1 punct\n")
    assert "punctuation" in caplog.text


# --- JSONL pairs ------------------------------------------------------------

def test_load_snli_labels(tmp_path):
    path = tmp_path / "pairs.jsonl"
    s = _chain(["a", "b"])
    with open(path, "w") as fh:
        for i, lab in enumerate(LABEL_SETS["snli3"]):
            fh.write(json.dumps(_record(f"p{i}", lab, s, s)) + "\n")
    pairs = load_pairs(path, LABEL_SETS["snli3"])
    assert [p.label for p in pairs] == [0, 1, 2]


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_pairs(path) == []


def test_unknown_label_names_pair(tmp_path):
    path = tmp_path / "bad.jsonl"
    s = _chain(["a"])
    path.write_text(json.dumps(_record("xyz", "maybe", s, s)) + "\n")
    with pytest.raises(ValueError, match="xyz"):
        load_pairs(path, LABEL_SETS["snli3"])


def test_malformed_tree_in_jsonl(tmp_path):
    path = tmp_path / "bad.jsonl"
    rec = {"pair_id": "t", "label": "neutral", "premise": {"tokens": ["a", "b"], "heads": [1, 0],
                                                            "deprels": ["x", "y"]},
           "hypothesis": _chain(["a"]).to_dict()}
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(StructureError, match="pair t"):
        load_pairs(path)


def test_write_then_load(tmp_path, templates):
    path = tmp_path / "t.jsonl"
    write_pairs(path, templates, LABEL_SETS["binary"])
    assert load_pairs(path, LABEL_SETS["binary"]) == templates


def test_label_set_from_file(tmp_path):
    path = tmp_path / "labels.txt"
    path.write_text("yes\nno\n\n")
    assert label_set(str(path)) == ("yes", "no")
    assert label_set("binary") == LABEL_SETS["binary"]
    with pytest.raises(FileNotFoundError):
        label_set(str(tmp_path / "missing"))


# --- vocabularies -----------------------------------------------------------

def _corpus(counts: dict[str, int]) -> list[LabeledPair]:
    words = [w for w, c in counts.items() for _ in range(c)]
    return [LabeledPair(_chain([w]), _chain(["x"]), 0, str(i)) for i, w in enumerate(words)]


def test_frequency_cutoff_ten():
    vocab = build_vocab(_corpus({"cat": 10, "lynx": 9}), min_count=10)
    assert "cat" in vocab
    assert vocab.lookup("lynx") == vocab.unk_id
    assert vocab.lookup("Cat") == vocab.lookup("cat")


def test_min_count_one_keeps_everything(templates):
    vocab = build_vocab(templates, min_count=1)
    words = {t.lower() for p in templates for s in (p.premise, p.hypothesis) for t in s.tokens}
    assert set(vocab.itos[2:]) == words


def test_vocab_size_brute_force(templates):
    counts = Counter(t.lower() for p in templates for s in (p.premise, p.hypothesis) for t in s.tokens)
    for k in (1, 5, 10, 40):
        vocab = build_vocab(templates, min_count=k)
        assert len(vocab) == sum(c >= k for c in counts.values()) + 2
        assert vocab.itos[:2] == [PAD, UNK]


def test_vocab_order_independent(templates):
    a = build_vocab(templates, 3)
    b = build_vocab(list(reversed(templates)), 3)
    assert a.itos == b.itos


def test_unk_mapping_preserves_length(templates):
    vocab = build_vocab(templates, 50)
    for p in templates:
        assert len(vocab.encode(p.premise.tokens)) == len(p.premise)


def test_relation_vocab_counts():
    s = ParsedSentence(["a", "b", "c"], [1, ROOT, 1], ["nsubj", "root", "dobj"])
    rv = build_relation_vocab([LabeledPair(s, s, 0, "0")])
    # "root" labels the root token only; it is kept but never becomes an edge
    assert {"nsubj", "nsubj_inv", "dobj", "dobj_inv"} <= set(rv.itos)
    assert rv.itos[:3] == [SELF, SEQ, INTER]
    s2 = ParsedSentence(["a", "b"], [1, ROOT], ["nsubj", "dobj"])
    rv2 = build_relation_vocab([LabeledPair(s2, _chain(["x", "y"], ["nsubj", "dobj"]), 0, "0")])
    assert len(rv2) == 2 * 2 + 3


def test_relation_vocab_empty_corpus():
    assert len(build_relation_vocab([])) == 3


def test_unseen_relation_raises():
    rv = build_relation_vocab([])
    with pytest.raises(KeyError, match="nsubj"):
        rv["nsubj"]


# --- embeddings -------------------------------------------------------------

def _vocab(words):
    return build_vocab(_corpus({w: 1 for w in words}), 1)


def test_embeddings_full_coverage(tmp_path):
    vocab = _vocab(["cat", "dog"])
    path = tmp_path / "vec.txt"
    rows = {"cat": [1.0, 2.0, 3.0], "dog": [4.0, 5.0, 6.0], "x": [7.0, 8.0, 9.0]}
    path.write_text("".join(f"{w} {' '.join(map(str, v))}\n" for w, v in rows.items()))
    emb, hits = load_embeddings(path, vocab, dim=3)
    assert hits == 3
    for w, v in rows.items():
        assert np.array_equal(emb[vocab.lookup(w)], v)
    assert not emb[vocab.pad_id].any()
    assert np.all(np.abs(emb[vocab.unk_id]) <= 0.05)


def test_embeddings_empty_file(tmp_path):
    vocab = _vocab(["cat", "dog"])
    path = tmp_path / "vec.txt"
    path.write_text("")
    emb, hits = load_embeddings(path, vocab, dim=4, seed=3)
    assert hits == 0
    assert not emb[0].any()
    assert np.all((np.abs(emb[1:]) <= 0.05) & (emb[1:] != 0))


def test_embeddings_hit_count_brute_force(tmp_path, templates):
    vocab = build_vocab(templates, 1)
    file_words = ["man", "ball", "zebra", "MAN", "kite", "qqq"]
    path = tmp_path / "vec.txt"
    path.write_text("6 2\n" + "".join(f"{w} 0.5 0.5\n" for w in file_words))
    _, hits = load_embeddings(path, vocab, dim=2)
    assert hits == len({w.lower() for w in file_words} & set(vocab.itos[2:]))


def test_embeddings_dimension_mismatch(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("cat 1 2 3\ndog 1 2\n")
    with pytest.raises(FormatError, match=":2"):
        load_embeddings(path, _vocab(["cat"]), dim=3)


def test_embeddings_seeded():
    vocab = _vocab(["a", "b"])
    a, _ = load_embeddings(None, vocab, dim=5, seed=1)
    b, _ = load_embeddings(None, vocab, dim=5, seed=1)
    assert np.array_equal(a, b)


def test_template_pairs_are_valid(templates):
    assert len(templates) == 64
    assert Counter(p.label for p in templates) == {0: 32, 1: 32}
    assert len({p.pair_id for p in templates}) == 64
