import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syneslm.errors import EmptyInput, EmptyReference, LengthMismatch
from syneslm.metrics import bleu, bleu_stats, corpus_wer, edit_ops, normalize, wer


def test_wer_reference_example():
    b = wer("a x c d", "a b c")
    assert (b.substitutions, b.insertions, b.deletions, b.ref_len) == (1, 1, 0, 3)
    assert b.wer == pytest.approx(66.6667, abs=0.01)


def test_wer_deletions_and_identity():
    assert wer("a c", "a b c").deletions == 1
    assert wer("the cat", "the cat").wer == 0.0
    assert wer("", "a b").wer == 100.0


def test_wer_can_exceed_100():
    assert wer("x y z w", "a").wer == 400.0


def test_corpus_wer_pools_counts():
    b = corpus_wer(["a b", "c"], ["a b", "d e"])
    assert b.ref_len == 4
    assert b.errors == 2
    assert b.wer == 50.0


def test_empty_reference_and_length_errors():
    with pytest.raises(EmptyReference):
        wer("a", "")
    with pytest.raises(LengthMismatch):
        corpus_wer(["a"], ["a", "b"])
    with pytest.raises(EmptyInput):
        bleu([], [])


def test_normalization_flags():
    assert normalize("Hello, World!", lowercase=True, strip_punct=True) == "hello world"
    assert wer("Hello", "hello").wer == 100.0
    assert wer("Hello", "hello", lowercase=True).wer == 0.0


def _brute_edit_distance(h, r):
    d = [[0] * (len(r) + 1) for _ in range(len(h) + 1)]
    for i in range(len(h) + 1):
        d[i][0] = i
    for j in range(len(r) + 1):
        d[0][j] = j
    for i in range(1, len(h) + 1):
        for j in range(1, len(r) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (h[i - 1] != r[j - 1]))
    return d[-1][-1]


toks = st.lists(st.sampled_from("abcd"), max_size=7)


@settings(max_examples=200, deadline=None)
@given(toks, toks)
def test_edit_ops_total_is_levenshtein(h, r):
    s, i, d = edit_ops(h, r)
    assert s + i + d == _brute_edit_distance(h, r)
    assert len(h) - len(r) == i - d


def test_bleu_identical_and_disjoint():
    refs = ["the cat sat on the mat", "a dog ran in the park today"]
    assert bleu(refs, refs) == pytest.approx(100.0)
    assert bleu(["x y z w v", "q r s t u"], refs) == 0.0


def test_bleu_hand_computed():
    hyp, ref = ["the cat sat on mat"], ["the cat sat on the mat"]
    st_ = bleu_stats(hyp, ref)
    assert st_["matches"] == [5, 3, 2, 1]
    assert st_["totals"] == [5, 4, 3, 2]
    logp = math.log(5 / 5) + math.log(4 / 5) + math.log(3 / 4) + math.log(2 / 3)
    expected = 100 * math.exp(1 - 6 / 5) * math.exp(logp / 4)
    assert bleu(hyp, ref) == pytest.approx(expected, abs=1e-6)


def test_bleu_short_hypothesis_hand_value():
    # p1 = 3/3; smoothed p2 = 3/3, p3 = 2/2, p4 = 1/1; brevity penalty e^(1 - 4/3)
    expected = 100 * math.exp(1 - 4 / 3)
    assert bleu(["the cat sat"], ["the cat sat down"]) == pytest.approx(expected, abs=1e-6)


def test_bleu_brevity_penalty_only_for_short_hypotheses():
    long_hyp = bleu(["the cat sat on the mat today"], ["the cat sat on the mat"])
    short_hyp = bleu(["the cat sat on the"], ["the cat sat on the mat"])
    assert 0 < short_hyp < long_hyp < 100
