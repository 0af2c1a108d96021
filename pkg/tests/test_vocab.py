import numpy as np
import pytest

from syneslm.errors import DuplicateLanguage, MalformedSequence, MissingModality, UnknownLanguage
from syneslm.tokenizer import train_bpe
from syneslm.vocab import Task, Vocabulary, assemble, build_vocab, parse, MultimodalSample


@pytest.fixture(scope="module")
def bpe():
    return train_bpe(["ka lo mi ka", "kalomi sunaru"], 30)


@pytest.fixture(scope="module")
def vocab(bpe):
    return build_vocab(bpe, 4, ["en", "pt"])


def sample(**kw):
    base = dict(sample_id="s", src_lang="en", tgt_lang="pt", text_src="ka lo", text_tgt="mi ka",
                dst_tokens=[0, 2, 3], visual_feature=np.ones(5))
    base.update(kw)
    return MultimodalSample(**base)


def test_layout_sizes(bpe, vocab):
    assert vocab.txt_start == 9
    assert vocab.n_txt == bpe.n_ids  # tokenizer vocab plus <UNK>
    assert vocab.dst_start == 9 + bpe.n_ids
    assert vocab.total_size == 9 + bpe.n_ids + 4
    assert [vocab[n] for n in ("<SOS>", "<EOS>", "<IMG>", "<SOT>", "<SOSP>", "<GT>", "<PAD>")] == list(range(7))
    assert vocab.lang_id("en") == 7 and vocab.lang_id("pt") == 8


def test_ranges_are_disjoint(vocab):
    specials = set(vocab.special.values())
    text = set(range(*vocab.txt_range))
    dst = set(range(*vocab.dst_range))
    assert not (specials & text or specials & dst or text & dst)
    assert specials | text | dst == set(range(vocab.total_size))


def test_deterministic_and_json_roundtrip(bpe, vocab, tmp_path):
    assert build_vocab(bpe, 4, ["en", "pt"]) == vocab
    vocab.save(tmp_path / "v.json")
    assert Vocabulary.load(tmp_path / "v.json") == vocab


def test_language_errors(bpe, vocab):
    with pytest.raises(DuplicateLanguage):
        build_vocab(bpe, 4, ["en", "EN"])
    with pytest.raises(UnknownLanguage):
        vocab.lang_id("fr")


def test_asr_layout_by_hand(bpe, vocab):
    a = assemble(sample(), "asr", vocab, bpe)
    y = [vocab.txt_start + i for i in bpe.encode("ka lo")]
    d = [vocab.dst_start + i for i in (0, 2, 3)]
    expected = [vocab["<SOS>"], vocab["<SOSP>"], vocab.lang_id("en"), *d, vocab["<GT>"], vocab.lang_id("en"), *y, vocab["<EOS>"]]
    assert a.ids.tolist() == expected
    assert a.loss_mask.tolist() == [False] * (len(expected) - len(y) - 1) + [True] * (len(y) + 1)
    assert a.img_slot is None


def test_vst_contains_task_tokens_in_order(bpe, vocab):
    a = assemble(sample(), "vst", vocab, bpe)
    wanted = [vocab[t] for t in ("<IMG>", "<SOSP>")] + [vocab.lang_id("en"), vocab["<GT>"], vocab.lang_id("pt")]
    pos = [a.ids.tolist().index(w) for w in wanted]
    assert pos == sorted(pos)
    assert a.img_slot == 1
    assert a.target()[:-1].tolist() == [vocab.txt_start + i for i in bpe.encode("mi ka")]


def test_missing_modalities(bpe, vocab):
    with pytest.raises(MissingModality):
        assemble(sample(visual_feature=None), "avasr", vocab, bpe)
    with pytest.raises(MissingModality):
        assemble(sample(dst_tokens=None), "asr", vocab, bpe)
    with pytest.raises(MissingModality):
        assemble(sample(text_src=""), "mt", vocab, bpe)
    with pytest.raises(MalformedSequence):
        assemble(sample(tgt_lang="en"), "st", vocab, bpe)


@pytest.mark.parametrize("task", list(Task))
def test_parse_inverts_assemble(bpe, vocab, task):
    a = assemble(sample(), task, vocab, bpe)
    p = parse(a.ids, vocab)
    assert p.task == task
    assert p.src_lang == "en"
    assert p.tgt_lang == ("en" if task.same_language else "pt")
    assert p.prompt_len == a.prompt_len
    assert p.has_eos


def test_task_table_is_a_bijection(bpe, vocab):
    seen = set()
    for task in Task:
        ids = assemble(sample(), task, vocab, bpe).ids.tolist()
        key = (vocab["<IMG>"] in ids, vocab["<SOSP>"] in ids, task.same_language)
        seen.add(key)
    assert len(seen) == 6


def test_parse_rejects_malformed(bpe, vocab):
    a = assemble(sample(), "mt", vocab, bpe).ids.tolist()
    with pytest.raises(MalformedSequence):
        parse([i for i in a if i != vocab["<GT>"]], vocab)
    with pytest.raises(MalformedSequence):
        parse(a[1:], vocab)
    sot_same = [vocab["<SOS>"], vocab["<SOT>"], vocab.lang_id("en"), vocab.txt_start, vocab["<GT>"], vocab.lang_id("en")]
    with pytest.raises(MalformedSequence):
        parse(sot_same, vocab)


def test_parse_mt_from_table(vocab):
    ids = [vocab["<SOS>"], vocab["<SOT>"], vocab.lang_id("en"), vocab.txt_start + 1, vocab["<GT>"], vocab.lang_id("pt")]
    assert parse(ids, vocab).task == Task.MT


def test_text_mask(vocab):
    m = vocab.text_mask()
    assert m[vocab["<EOS>"]] and not m[vocab["<SOS>"]]
    assert m[vocab.txt_start : vocab.dst_start].all() and not m[vocab.dst_start :].any()


def test_ten_subword_layout_example():
    # ten tokenizer symbols, four clusters, two languages; <UNK> takes one extra text id
    bpe10 = train_bpe(["abcdefghij"], 10)
    assert len(bpe10.vocab) == 10
    v = build_vocab(bpe10, 4, ["en", "pt"])
    assert v.total_size == 9 + 11 + 4
