import math

import numpy as np
import pytest

from syneslm import model as lm
from syneslm.errors import EmptyMask, MissingVisual, PromptTooLong, SeqTooLong
from syneslm.tokenizer import train_bpe
from syneslm.vocab import build_vocab

TINY = dict(vocab_total=11, n_layers=1, d_model=8, n_heads=2, max_seq_len=16, dropout_rate=0.0, visual_dim=5)


def tiny(seed=0, scale=0.3, dtype=np.float64, **kw):
    cfg = lm.ModelConfig(**(TINY | kw))
    p = lm.cast_params(lm.init_params(cfg, seed), dtype)
    rng = np.random.default_rng(seed + 100)
    p = {k: (v + rng.standard_normal(v.shape) * scale).astype(dtype) for k, v in p.items()}
    return cfg, p


def oracle_logits(p, ids):
    """Position-by-position recomputation with plain loops over heads and time."""
    T = len(ids)
    x = np.array([p["tok_emb"][i] + p["pos_emb"][t] for t, i in enumerate(ids)])

    def ln(v, g, b):
        mu = v.mean()
        var = ((v - mu) ** 2).mean()
        return (v - mu) / math.sqrt(var + 1e-5) * g + b

    def gelu(u):
        return 0.5 * u * (1 + np.tanh(math.sqrt(2 / math.pi) * (u + 0.044715 * u**3)))

    H, dh = 2, 4
    h = np.array([ln(x[t], p["h0.ln1.g"], p["h0.ln1.b"]) for t in range(T)])
    qkv = h @ p["h0.attn.w_qkv"] + p["h0.attn.b_qkv"]
    q, k, v = qkv[:, :8], qkv[:, 8:16], qkv[:, 16:]
    out = np.zeros((T, 8))
    for hd in range(H):
        sl = slice(hd * dh, (hd + 1) * dh)
        for t in range(T):
            scores = np.array([q[t, sl] @ k[s, sl] / math.sqrt(dh) for s in range(t + 1)])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            out[t, sl] = sum(w[s] * v[s, sl] for s in range(t + 1))
    x = x + out @ p["h0.attn.w_o"] + p["h0.attn.b_o"]
    h2 = np.array([ln(x[t], p["h0.ln2.g"], p["h0.ln2.b"]) for t in range(T)])
    x = x + gelu(h2 @ p["h0.ffn.w1"] + p["h0.ffn.b1"]) @ p["h0.ffn.w2"] + p["h0.ffn.b2"]
    hf = np.array([ln(x[t], p["lnf.g"], p["lnf.b"]) for t in range(T)])
    return hf @ p["tok_emb"].T


def test_forward_matches_loop_oracle():
    cfg, p = tiny(seed=3)
    ids = np.array([1, 4, 9, 2])
    got = lm.forward(p, cfg, lm.embed(p, ids))
    np.testing.assert_allclose(got, oracle_logits(p, ids), rtol=1e-5, atol=1e-9)


def test_zero_params_give_zero_logits():
    cfg = lm.ModelConfig(**TINY)
    p = {k: np.zeros_like(v) for k, v in lm.init_params(cfg).items()}
    assert not lm.forward(p, cfg, lm.embed(p, np.array([1, 2, 3]))).any()


def test_embed_rules():
    cfg, p = tiny()
    ids = np.array([0, 2, 5])
    plain = lm.embed(p, ids)
    np.testing.assert_array_equal(plain[2], p["tok_emb"][5] + p["pos_emb"][2])
    v1, v2 = np.ones(8), -np.ones(8)
    e1, e2 = lm.embed(p, ids, 1, v1), lm.embed(p, ids, 1, v2)
    np.testing.assert_array_equal(e1[1], v1 + p["pos_emb"][1])
    diff = np.any(e1 != e2, axis=1)
    assert diff.tolist() == [False, True, False]
    with pytest.raises(MissingVisual):
        lm.embed(p, ids, 1, None)
    with pytest.raises(SeqTooLong):
        lm.embed(p, np.zeros(17, dtype=int))


def test_ce_loss_examples():
    V = 7
    ids = np.array([0, 3, 4])
    mask = np.array([False, True, True])
    loss, per = lm.ce_loss(np.zeros((3, V)), ids, mask)
    assert loss == pytest.approx(math.log(V))
    sat = np.zeros((3, V))
    sat[0, 3] = sat[1, 4] = 1000.0
    assert lm.ce_loss(sat, ids, mask)[0] == pytest.approx(0.0, abs=1e-9)
    three = np.array([[1.0, 2.0, 3.0], [0, 0, 0]])
    loss3, _ = lm.ce_loss(three, np.array([0, 2]), np.array([False, True]))
    assert loss3 == pytest.approx(0.4076, abs=1e-4)
    with pytest.raises(EmptyMask):
        lm.ce_loss(np.zeros((3, V)), ids, np.zeros(3, bool))


def _batch(rng, B=2, T=7, V=11, dim=5):
    ids = rng.integers(0, V, (B, T))
    mask = np.zeros((B, T), bool)
    mask[0, 3:] = True
    mask[1, 2:5] = True
    return lm.Batch(ids, mask, np.array([T, 5]), np.array([1, -1]), rng.standard_normal((B, dim)))


def test_gradients_match_finite_differences():
    cfg, p = tiny(seed=1)
    rng = np.random.default_rng(2)
    b = _batch(rng)
    _, g = lm.loss_and_grads(p, cfg, b)
    for name in sorted(p):
        for _ in range(3):
            idx = tuple(int(rng.integers(0, s)) for s in p[name].shape)
            old = p[name][idx]
            p[name][idx] = old + 1e-5
            lp, _ = lm.loss_and_grads(p, cfg, b)
            p[name][idx] = old - 1e-5
            lm_, _ = lm.loss_and_grads(p, cfg, b)
            p[name][idx] = old
            num = (lp - lm_) / 2e-5
            assert g[name][idx] == pytest.approx(num, rel=1e-4, abs=1e-9), name


def test_loss_scale_scales_gradients():
    cfg, p = tiny(seed=4)
    b = _batch(np.random.default_rng(0))
    _, g1 = lm.loss_and_grads(p, cfg, b)
    _, g2 = lm.loss_and_grads(p, cfg, b, loss_scale=2.0)
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


def test_single_target_gradient_support_is_causal():
    cfg, p = tiny(seed=6)
    ids = np.array([[1, 2, 3, 4, 5, 6]])
    mask = np.zeros((1, 6), bool)
    mask[0, 3] = True
    _, g = lm.loss_and_grads(p, cfg, lm.Batch(ids, mask, np.array([6]), np.array([-1])))
    assert not g["pos_emb"][3:].any()
    assert g["pos_emb"][:3].any()


def test_causality_bitwise():
    cfg, p = tiny(seed=2, dtype=np.float32)
    rng = np.random.default_rng(0)
    x = lm.embed(p, rng.integers(0, 11, 9))
    base = lm.forward(p, cfg, x)
    for j in range(9):
        y = x.copy()
        y[j:] += rng.standard_normal(y[j:].shape).astype(y.dtype)
        assert np.array_equal(lm.forward(p, cfg, y)[:j], base[:j])


def test_padding_does_not_change_real_positions():
    cfg, p = tiny(seed=8)
    ids = np.array([[1, 2, 3, 4, 0, 0]])
    full = lm.forward(p, cfg, lm.embed(p, ids), lm.attention_mask(6, [4]))
    short = lm.forward(p, cfg, lm.embed(p, ids[:, :4]))
    np.testing.assert_allclose(full[0, :4], short[0], rtol=1e-12)


@pytest.fixture(scope="module")
def decode_setup():
    bpe = train_bpe(["ka lo mi"], 8)
    vocab = build_vocab(bpe, 3, ["en", "pt"])
    cfg = lm.ModelConfig(vocab_total=vocab.total_size, n_layers=1, d_model=8, n_heads=2, max_seq_len=24,
                         dropout_rate=0.0, visual_dim=4)
    return vocab, cfg


def test_zero_params_greedy_emits_smallest_text_id(decode_setup):
    vocab, cfg = decode_setup
    p = {k: np.zeros_like(v) for k, v in lm.init_params(cfg).items()}
    prompt = [vocab["<SOS>"], vocab["<SOT>"], vocab.lang_id("en"), vocab.txt_start + 1, vocab["<GT>"], vocab.lang_id("pt")]
    out = lm.generate(p, cfg, prompt, vocab, max_len=5)
    assert out == [vocab.txt_start] * 5


def test_beam_one_equals_greedy_and_greedy_is_stepwise_argmax(decode_setup):
    vocab, cfg = decode_setup
    allowed = vocab.text_mask()
    for seed in range(4):
        p = lm.cast_params(lm.init_params(cfg, seed), np.float64)
        p = {k: v + np.random.default_rng(seed).standard_normal(v.shape) for k, v in p.items()}
        prompt = [vocab["<SOS>"], vocab["<IMG>"], vocab["<SOSP>"], vocab.lang_id("en"), vocab.dst_start,
                  vocab["<GT>"], vocab.lang_id("en")]
        vis = np.random.default_rng(seed).standard_normal(4)
        g = lm.generate(p, cfg, prompt, vocab, visual=vis, max_len=8)
        assert lm.generate(p, cfg, prompt, vocab, visual=vis, strategy="beam:1", max_len=8) == g
        seq = list(prompt)
        vemb = lm.proj.project(lm.projector_of(p), vis)
        for tok in g:
            logits = lm.forward(p, cfg, lm.embed(p, np.array(seq), 1, vemb))[-1]
            z = np.where(allowed, logits, -np.inf)
            assert z[tok] == z.max()
            seq.append(tok)
        assert len(g) == 8 or g[-1] == vocab["<EOS>"]


def test_beam_emits_only_text_tokens_within_max_len(decode_setup):
    vocab, cfg = decode_setup
    p = lm.cast_params(lm.init_params(cfg, 3), np.float64)
    p = {k: v + np.random.default_rng(9).standard_normal(v.shape) for k, v in p.items()}
    prompt = [vocab["<SOS>"], vocab["<SOT>"], vocab.lang_id("en"), vocab.txt_start + 2, vocab["<GT>"], vocab.lang_id("pt")]
    out = lm.generate(p, cfg, prompt, vocab, strategy="beam:4", max_len=6)
    assert 1 <= len(out) <= 6
    assert all(vocab.text_mask()[t] for t in out)


def test_prompt_too_long(decode_setup):
    vocab, cfg = decode_setup
    p = lm.init_params(cfg)
    with pytest.raises(PromptTooLong):
        lm.generate(p, cfg, [vocab["<SOS>"]] * 20, vocab, max_len=10)


def test_sequence_logprob_equals_minus_length_times_loss(decode_setup):
    vocab, cfg = decode_setup
    p = lm.cast_params(lm.init_params(cfg, 1), np.float64)
    p = {k: v + np.random.default_rng(1).standard_normal(v.shape) * 0.5 for k, v in p.items()}
    prompt = [vocab["<SOS>"], vocab["<SOT>"], vocab.lang_id("en"), vocab.txt_start + 1, vocab["<GT>"], vocab.lang_id("pt")]
    target = [vocab.txt_start + 2, vocab.txt_start, vocab["<EOS>"]]
    ids = np.array([prompt + target])
    mask = np.zeros_like(ids, dtype=bool)
    mask[0, len(prompt):] = True
    loss, _ = lm.ce_loss(lm.batch_logits(p, cfg, lm.Batch(ids, mask, np.array([ids.shape[1]]), np.array([-1]))), ids, mask)
    assert lm.sequence_logprob(p, cfg, prompt, target, vocab) == pytest.approx(-len(target) * loss, abs=1e-6)


def test_parse_strategy():
    assert lm.parse_strategy("greedy") == ("greedy", 1)
    assert lm.parse_strategy("beam:3") == ("beam", 3)
    with pytest.raises(ValueError):
        lm.parse_strategy("sample")
