import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syneslm.errors import EmptyCorpus, IdOutOfRange, VocabTooSmall
from syneslm.tokenizer import UNK_ID, BpeModel, decode_text, encode_text, train_bpe


def test_merge_order_breaks_count_ties_lexicographically():
    m = train_bpe(["aaab", "aaab"], 6)
    assert m.merges == (("a", "a"), ("aa", "a"), ("aaa", "b</w>"))
    assert m.vocab[-1] == "aaab</w>"
    assert m.encode("aaab") == [len(m.vocab)]


def test_base_symbols_only_when_budget_is_tight():
    m = train_bpe(["ab"], 2)
    assert m.vocab == ("a", "b</w>")
    assert m.merges == ()
    assert m.encode("ab") == [1, 2]


def test_vocab_never_exceeds_budget_and_stops_when_no_pairs_remain():
    m = train_bpe(["ab ab ba"], 100)
    assert len(m.vocab) <= 100
    assert set(m.vocab) >= {"ab</w>", "ba</w>"}


def test_unknown_symbol_maps_to_unk():
    m = train_bpe(["ab"], 2)
    assert m.encode("az") == [1, UNK_ID]
    assert decode_text(m, [UNK_ID]) == "<UNK>"


def test_decode_rejects_out_of_range_ids():
    m = train_bpe(["ab"], 2)
    with pytest.raises(IdOutOfRange):
        m.decode([m.n_ids])


def test_errors():
    with pytest.raises(EmptyCorpus):
        train_bpe(["   ", ""], 10)
    with pytest.raises(VocabTooSmall):
        train_bpe(["abc"], 2)


def test_json_roundtrip(tmp_path):
    m = train_bpe(["the cat sat on the mat", "the hat"], 30)
    path = tmp_path / "bpe.json"
    m.save(path)
    obj = json.loads(path.read_text())
    assert {"version", "vocab", "merges"} <= set(obj)
    m2 = BpeModel.load(path)
    assert m2 == m
    assert m2.encode("the mat sat") == m.encode("the mat sat")


def test_training_is_deterministic():
    lines = ["lo low lower lowest", "new newer newest", "wide wider widest"] * 3
    assert train_bpe(lines, 40) == train_bpe(list(lines), 40)


words = st.text(alphabet="abcdez", min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(words, min_size=1, max_size=5), min_size=1, max_size=6), st.integers(0, 30))
def test_roundtrip_on_training_lines(lines_words, extra):
    lines = [" ".join(ws) for ws in lines_words]
    base = len({c for ln in lines for w in ln.split() for c in w[:-1]} | {w[-1] + "</w>" for ln in lines for w in ln.split()})
    m = train_bpe(lines, base + extra)
    for ln in lines:
        assert decode_text(m, encode_text(m, ln)) == ln
        assert all(0 < i < m.n_ids for i in m.encode(ln))


def test_distinct_letters_give_exactly_those_letters():
    letters = [chr(ord("a") + i) for i in range(26)]
    m = train_bpe([" ".join(letters)], 26)
    assert m.merges == ()
    assert [s.removesuffix("</w>") for s in m.vocab] == letters


def test_empty_inputs():
    m = train_bpe(["ab"], 2)
    assert m.encode("") == []
    assert m.decode([]) == ""
