"""Decoder-only causal transformer over the unified token space.

Pre-norm blocks, GELU feed-forward, learned positions and an output head tied
to the token embedding. Forward and backward are written out by hand in numpy
so the same code runs in float32 for training and float64 for gradient checks.

Parameters live in a flat ``dict[str, ndarray]``; the visual projector shares
the dict under the ``proj.`` prefix.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import projector as proj
from .errors import (
    DimMismatch,
    EmptyMask,
    MissingVisual,
    NonFiniteActivation,
    NonFiniteGradient,
    PromptTooLong,
    SeqTooLong,
    ShapeMismatch,
)

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    vocab_total: int
    n_layers: int = 12
    d_model: int = 768
    n_heads: int = 12
    d_ff: Optional[int] = None
    max_seq_len: int = 512
    dropout_rate: float = 0.1
    visual_dim: int = 32
    projector_hidden: Optional[int] = None
    projector_depth: int = 2
    init_std: float = 0.02

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.projector_hidden is None:
            self.projector_hidden = self.d_model

    @classmethod
    def desk(cls, vocab_total: int, **overrides) -> "ModelConfig":
        """Small preset. Init std keeps std * sqrt(D) at its D=768 value (0.02), so 0.069 at D=64;
        0.02 at this width leaves attention nearly uniform for hundreds of steps."""
        base = dict(n_layers=2, d_model=64, n_heads=4, max_seq_len=128, dropout_rate=0.0)
        base.update(overrides)
        base.setdefault("init_std", 0.02 * math.sqrt(768 / base["d_model"]))
        return cls(vocab_total=vocab_total, **base)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> dict:
    """Normal(0, std) weights, zero biases, unit layer-norm scales."""
    rng = np.random.default_rng(seed)
    D, F, std = config.d_model, config.d_ff, config.init_std

    def normal(*shape):
        return (rng.standard_normal(shape) * std).astype(dtype)

    def zeros(*shape):
        return np.zeros(shape, dtype=dtype)

    p = {
        "tok_emb": normal(config.vocab_total, D),
        "pos_emb": normal(config.max_seq_len, D),
    }
    for l in range(config.n_layers):
        pre = f"h{l}."
        p[pre + "ln1.g"] = np.ones(D, dtype=dtype)
        p[pre + "ln1.b"] = zeros(D)
        p[pre + "attn.w_qkv"] = normal(D, 3 * D)
        p[pre + "attn.b_qkv"] = zeros(3 * D)
        p[pre + "attn.w_o"] = normal(D, D)
        p[pre + "attn.b_o"] = zeros(D)
        p[pre + "ln2.g"] = np.ones(D, dtype=dtype)
        p[pre + "ln2.b"] = zeros(D)
        p[pre + "ffn.w1"] = normal(D, F)
        p[pre + "ffn.b1"] = zeros(F)
        p[pre + "ffn.w2"] = normal(F, D)
        p[pre + "ffn.b2"] = zeros(D)
    p["lnf.g"] = np.ones(D, dtype=dtype)
    p["lnf.b"] = zeros(D)
    pp = proj.ProjectorParams.init(
        config.visual_dim,
        D,
        hidden=config.projector_hidden,
        depth=config.projector_depth,
        seed=int(rng.integers(2**31)),
        std=std,
        dtype=dtype,
    )
    p.update(pp.named())
    return p


def projector_of(params: dict) -> proj.ProjectorParams:
    return proj.ProjectorParams.from_named(params)


def cast_params(params: dict, dtype) -> dict:
    return {k: v.astype(dtype) for k, v in params.items()}


# ---------------------------------------------------------------- batching


@dataclass
class Batch:
    ids: np.ndarray  # (B, T) int64, right-padded with <PAD>
    loss_mask: np.ndarray  # (B, T) bool
    lengths: np.ndarray  # (B,)
    img_slots: np.ndarray  # (B,) int, -1 where no <IMG>
    visual: Optional[np.ndarray] = None  # (B, visual_dim) raw features; rows without <IMG> ignored
    tasks: list = field(default_factory=list)

    @property
    def shape(self):
        return self.ids.shape

    @classmethod
    def collate(cls, seqs: Sequence, visuals: Sequence, pad_id: int, visual_dim: int) -> "Batch":
        B = len(seqs)
        T = max(len(s.ids) for s in seqs)
        ids = np.full((B, T), pad_id, dtype=np.int64)
        mask = np.zeros((B, T), dtype=bool)
        slots = np.full(B, -1, dtype=np.int64)
        vis = np.zeros((B, visual_dim), dtype=np.float64)
        for b, (s, v) in enumerate(zip(seqs, visuals)):
            n = len(s.ids)
            ids[b, :n] = s.ids
            mask[b, :n] = s.loss_mask
            if s.img_slot is not None:
                if v is None:
                    raise MissingVisual("sequence has <IMG> but no visual feature")
                slots[b] = s.img_slot
                vis[b] = v
        lengths = np.array([len(s.ids) for s in seqs], dtype=np.int64)
        return cls(ids, mask, lengths, slots, vis, [s.task for s in seqs])


# ---------------------------------------------------------------- forward


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxhat = dy * g
    dx = inv * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def attention_mask(T: int, lengths=None, B: int = 1) -> np.ndarray:
    """(B, 1, T, T) boolean: causal and restricted to non-pad keys."""
    causal = np.tril(np.ones((T, T), dtype=bool))
    if lengths is None:
        return np.broadcast_to(causal, (B, 1, T, T))
    key_ok = np.arange(T)[None, :] < np.asarray(lengths)[:, None]  # (B, T)
    return causal[None, None] & key_ok[:, None, None, :]


def _dropout(x, rate, rng):
    if rate <= 0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * keep, keep


def embed(params: dict, ids, img_slot=None, visual=None) -> np.ndarray:
    """Token plus positional embedding; the <IMG> row is replaced by ``visual``.

    Works on a single sequence (T,) with ``visual`` a projected (D,) vector, or
    on a batch (B, T) with ``img_slot`` (B,) and ``visual`` (B, D).
    """
    ids = np.asarray(ids)
    T = ids.shape[-1]
    if T > params["pos_emb"].shape[0]:
        raise SeqTooLong(f"sequence length {T} > max_seq_len {params['pos_emb'].shape[0]}")
    x = params["tok_emb"][ids] + params["pos_emb"][:T]
    if ids.ndim == 1:
        if img_slot is not None:
            if visual is None:
                raise MissingVisual("img_slot set but no visual embedding given")
            v = np.asarray(visual)
            if v.shape != (x.shape[-1],):
                raise DimMismatch(f"visual embedding shape {v.shape} != ({x.shape[-1]},)")
            x[img_slot] = v + params["pos_emb"][img_slot]
        return x
    if img_slot is not None:
        slots = np.asarray(img_slot)
        rows = np.nonzero(slots >= 0)[0]
        if len(rows):
            if visual is None:
                raise MissingVisual("img_slot set but no visual embedding given")
            x[rows, slots[rows]] = np.asarray(visual)[rows] + params["pos_emb"][slots[rows]]
    return x


def _forward(params, config: ModelConfig, x, mask, rng=None):
    """Transformer stack on embeddings ``x`` (B, T, D). Returns final hidden and cache."""
    B, T, D = x.shape
    H, dh = config.n_heads, config.head_dim
    scale = 1.0 / math.sqrt(dh)
    rate = config.dropout_rate if rng is not None else 0.0
    x, drop_emb = _dropout(x, rate, rng)
    layers = []
    for l in range(config.n_layers):
        pre = f"h{l}."
        c = {}
        h, c["ln1"] = _layer_norm(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        qkv = h @ params[pre + "attn.w_qkv"] + params[pre + "attn.b_qkv"]
        q, k, v = qkv.reshape(B, T, 3, H, dh).transpose(2, 0, 3, 1, 4)
        s = (q @ k.swapaxes(-1, -2)) * scale
        s = np.where(mask, s, -np.inf)
        s = s - s.max(axis=-1, keepdims=True)
        e = np.exp(s)
        P = e / e.sum(axis=-1, keepdims=True)
        o = (P @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
        a = o @ params[pre + "attn.w_o"] + params[pre + "attn.b_o"]
        a, c["drop_a"] = _dropout(a, rate, rng)
        x = x + a
        h2, c["ln2"] = _layer_norm(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        u = h2 @ params[pre + "ffn.w1"] + params[pre + "ffn.b1"]
        gl = proj.gelu(u)
        f = gl @ params[pre + "ffn.w2"] + params[pre + "ffn.b2"]
        f, c["drop_f"] = _dropout(f, rate, rng)
        x = x + f
        c.update(h=h, q=q, k=k, v=v, P=P, o=o, h2=h2, u=u, gl=gl)
        layers.append(c)
    hf, ln_f = _layer_norm(x, params["lnf.g"], params["lnf.b"])
    return hf, {"layers": layers, "ln_f": ln_f, "drop_emb": drop_emb, "shape": (B, T, D)}


def forward(params: dict, config: ModelConfig, embeddings, attn_mask=None) -> np.ndarray:
    """Logits for every position; position i scores the token at i + 1.

    Accepts (T, D) or (B, T, D) embeddings. ``attn_mask`` defaults to causal.
    """
    x = np.asarray(embeddings)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != config.d_model:
        raise ShapeMismatch(f"embeddings shape {x.shape} does not end in d_model={config.d_model}")
    B, T, _ = x.shape
    if attn_mask is None:
        attn_mask = attention_mask(T, B=B)
    elif attn_mask.ndim == 2:
        attn_mask = attn_mask[None, None]
    hf, _ = _forward(params, config, x, attn_mask)
    logits = hf @ params["tok_emb"].T
    if not np.all(np.isfinite(logits)):
        raise NonFiniteActivation("non-finite logits")
    return logits[0] if single else logits


def visual_embeddings(params: dict, batch: Batch):
    rows = np.nonzero(batch.img_slots >= 0)[0]
    if not len(rows):
        return None, None, rows
    out, cache = proj.project_with_cache(projector_of(params), batch.visual[rows])
    full = np.zeros((len(batch.img_slots), out.shape[-1]), dtype=out.dtype)
    full[rows] = out
    return full, cache, rows


def batch_logits(params: dict, config: ModelConfig, batch: Batch) -> np.ndarray:
    vis, _, _ = visual_embeddings(params, batch)
    x = embed(params, batch.ids, batch.img_slots, vis)
    return forward(params, config, x, attention_mask(x.shape[1], batch.lengths))


# ---------------------------------------------------------------- loss


def log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def ce_loss(logits, ids, loss_mask):
    """Masked next-token cross-entropy.

    Position i with ``loss_mask[i]`` true is scored by ``logits[i - 1]``.
    Returns (mean loss over true positions, per-position losses aligned to ids).
    """
    logits = np.asarray(logits)
    ids = np.asarray(ids)
    mask = np.asarray(loss_mask, dtype=bool)
    if logits.shape[:-1] != ids.shape or mask.shape != ids.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs ids {ids.shape} vs mask {mask.shape}")
    if mask[..., 0].any():
        raise ShapeMismatch("position 0 has no preceding prediction and cannot be in the loss")
    if not mask.any():
        raise EmptyMask("loss mask has no true positions")
    lp = log_softmax(logits[..., :-1, :])
    tgt = ids[..., 1:]
    picked = np.take_along_axis(lp, tgt[..., None], axis=-1)[..., 0]
    per_pos = np.zeros(ids.shape, dtype=lp.dtype)
    per_pos[..., 1:] = np.where(mask[..., 1:], -picked, 0.0)
    return per_pos.sum() / mask.sum(), per_pos


# ---------------------------------------------------------------- backward


def loss_and_grads(params: dict, config: ModelConfig, batch: Batch, rng=None, loss_scale: float = 1.0):
    """Teacher-forced masked CE and its gradient w.r.t. every parameter.

    Only the positions that predict a loss-masked token go through the output
    head. ``rng`` enables dropout. Returns (loss, grads) where grads share the
    keys of ``params``.
    """
    ids, mask = batch.ids, batch.loss_mask
    if mask[:, 0].any():
        raise ShapeMismatch("position 0 cannot be in the loss")
    n = int(mask.sum())
    if n == 0:
        raise EmptyMask("batch loss mask has no true positions")
    B, T = ids.shape
    vis, vcache, vrows = visual_embeddings(params, batch)
    x0 = embed(params, ids, batch.img_slots, vis)
    amask = attention_mask(T, batch.lengths)
    hf, cache = _forward(params, config, x0, amask, rng)

    bi, ti = np.nonzero(mask[:, 1:])  # prediction at (b, t) scores ids[b, t + 1]
    E = params["tok_emb"]
    h_sel = hf[bi, ti]
    logits = h_sel @ E.T
    lp = log_softmax(logits)
    tgt = ids[bi, ti + 1]
    loss = -lp[np.arange(n), tgt].sum() / n
    if not np.isfinite(loss):
        raise NonFiniteActivation("non-finite loss")

    dlogits = np.exp(lp)
    dlogits[np.arange(n), tgt] -= 1.0
    dlogits *= loss_scale / n

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    grads["tok_emb"] += dlogits.T @ h_sel
    dhf = np.zeros_like(hf)
    dhf[bi, ti] = dlogits @ E

    dx = _backward(params, config, cache, dhf, grads)

    # embedding lookup; <IMG> rows route into the projector instead
    pos_grad = dx.sum(axis=0)
    grads["pos_emb"][:T] += pos_grad
    tok_dx = dx
    if len(vrows):
        slots = batch.img_slots[vrows]
        dvis = dx[vrows, slots].copy()
        tok_dx = dx.copy()
        tok_dx[vrows, slots] = 0.0
        pgrads, _ = proj.project_backward(projector_of(params), vcache, dvis)
        for i, (dw, db) in enumerate(pgrads):
            grads[f"proj.{i}.w"] += dw
            grads[f"proj.{i}.b"] += db
    _scatter_rows(grads["tok_emb"], ids.reshape(-1), tok_dx.reshape(-1, tok_dx.shape[-1]))
    # gradient flowing into the <IMG> token row from substituted slots is zero by construction
    return float(loss) * loss_scale, grads


def _scatter_rows(target, idx, rows):
    """target[idx] += rows with repeated indices accumulated (a faster np.add.at)."""
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    uniq, starts = np.unique(sorted_idx, return_index=True)
    target[uniq] += np.add.reduceat(rows[order], starts, axis=0)


def _backward(params, config, cache, dhf, grads):
    B, T, D = cache["shape"]
    H, dh = config.n_heads, config.head_dim
    scale = 1.0 / math.sqrt(dh)
    dx, dg, db = _layer_norm_back(dhf, params["lnf.g"], cache["ln_f"])
    grads["lnf.g"] += dg
    grads["lnf.b"] += db
    for l in range(config.n_layers - 1, -1, -1):
        pre = f"h{l}."
        c = cache["layers"][l]
        # feed-forward branch
        df = dx if c["drop_f"] is None else dx * c["drop_f"]
        grads[pre + "ffn.w2"] += c["gl"].reshape(-1, c["gl"].shape[-1]).T @ df.reshape(-1, D)
        grads[pre + "ffn.b2"] += df.sum(axis=(0, 1))
        dgl = df @ params[pre + "ffn.w2"].T
        du = dgl * proj.gelu_grad(c["u"])
        grads[pre + "ffn.w1"] += c["h2"].reshape(-1, D).T @ du.reshape(-1, du.shape[-1])
        grads[pre + "ffn.b1"] += du.sum(axis=(0, 1))
        dh2 = du @ params[pre + "ffn.w1"].T
        dln, dg, db = _layer_norm_back(dh2, params[pre + "ln2.g"], c["ln2"])
        grads[pre + "ln2.g"] += dg
        grads[pre + "ln2.b"] += db
        dx = dx + dln
        # attention branch
        da = dx if c["drop_a"] is None else dx * c["drop_a"]
        grads[pre + "attn.w_o"] += c["o"].reshape(-1, D).T @ da.reshape(-1, D)
        grads[pre + "attn.b_o"] += da.sum(axis=(0, 1))
        do = (da @ params[pre + "attn.w_o"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        P, q, k, v = c["P"], c["q"], c["k"], c["v"]
        dP = do @ v.swapaxes(-1, -2)
        dv = P.swapaxes(-1, -2) @ do
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) * scale
        dq = dS @ k
        dk = dS.swapaxes(-1, -2) @ q
        dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, T, 3 * D)
        grads[pre + "attn.w_qkv"] += c["h"].reshape(-1, D).T @ dqkv.reshape(-1, 3 * D)
        grads[pre + "attn.b_qkv"] += dqkv.sum(axis=(0, 1))
        dhh = dqkv @ params[pre + "attn.w_qkv"].T
        dln, dg, db = _layer_norm_back(dhh, params[pre + "ln1.g"], c["ln1"])
        grads[pre + "ln1.g"] += dg
        grads[pre + "ln1.b"] += db
        dx = dx + dln
    if cache["drop_emb"] is not None:
        dx = dx * cache["drop_emb"]
    return dx


def backward(params: dict, config: ModelConfig, batch: Batch, rng=None, loss_scale: float = 1.0) -> dict:
    loss, grads = loss_and_grads(params, config, batch, rng, loss_scale)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    return grads


# ---------------------------------------------------------------- decoding


def _pick(logits_row: np.ndarray, allowed: np.ndarray, eos: int) -> int:
    """Argmax over allowed ids; ties go to the lowest text id, <EOS> only if it strictly wins."""
    z = np.where(allowed, logits_row, -np.inf)
    best = z.max()
    cands = np.nonzero(z == best)[0]
    non_eos = cands[cands != eos]
    return int(non_eos[0]) if len(non_eos) else int(cands[0])


def _check_prompt(config, prompt_len, max_len):
    if prompt_len >= config.max_seq_len or prompt_len + max_len > config.max_seq_len:
        raise PromptTooLong(f"prompt {prompt_len} + max_len {max_len} exceeds max_seq_len {config.max_seq_len}")


def _step_logits(params, config, seqs: np.ndarray, img_slot, vis_emb):
    """Last-position logits for a (B, t) batch of equal-length prefixes."""
    B, t = seqs.shape
    slots = np.full(B, -1 if img_slot is None else img_slot)
    x = embed(params, seqs, slots, vis_emb)
    hf, _ = _forward(params, config, x, attention_mask(t, B=B))
    logits = hf[:, -1] @ params["tok_emb"].T
    if not np.all(np.isfinite(logits)):
        raise NonFiniteActivation("non-finite logits during decoding")
    return logits


def greedy_decode(params, config, prompts, img_slot, visuals, allowed, eos, max_len):
    """Greedy decoding for a group of equal-length prompts sharing one ``img_slot``."""
    prompts = np.asarray(prompts)
    B, P = prompts.shape
    _check_prompt(config, P, max_len)
    vis_emb = None
    if img_slot is not None:
        if visuals is None:
            raise MissingVisual("prompt has <IMG> but no visual feature")
        vis_emb = proj.project(projector_of(params), np.asarray(visuals))
    seqs = prompts.copy()
    done = np.zeros(B, dtype=bool)
    outs = [[] for _ in range(B)]
    for _ in range(max_len):
        logits = _step_logits(params, config, seqs, img_slot, vis_emb)
        nxt = np.array([_pick(logits[b], allowed, eos) for b in range(B)])
        for b in range(B):
            if not done[b]:
                outs[b].append(int(nxt[b]))
                done[b] = nxt[b] == eos
        if done.all():
            break
        seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
    return outs


def beam_decode(params, config, prompt, img_slot, visual, allowed, eos, max_len, width):
    """Beam search over one prompt; hypotheses ranked by mean log-probability per generated token."""
    prompt = np.asarray(prompt)
    _check_prompt(config, len(prompt), max_len)
    vis_emb = None
    if img_slot is not None:
        if visual is None:
            raise MissingVisual("prompt has <IMG> but no visual feature")
        vis_emb = proj.project(projector_of(params), np.asarray(visual))[None]
    beams = [((), 0.0, False)]  # (tokens, summed log-prob, finished)
    allowed_ids = np.nonzero(allowed)[0]
    for _ in range(max_len):
        live = [b for b in beams if not b[2]]
        if not live:
            break
        seqs = np.array([np.concatenate([prompt, np.asarray(b[0], dtype=prompt.dtype)]) for b in live])
        vis = None if vis_emb is None else np.repeat(vis_emb, len(live), axis=0)
        lp = log_softmax(_step_logits(params, config, seqs, img_slot, vis))
        cands = []
        for hi, (toks, total, _) in enumerate(live):
            for t in allowed_ids:
                s = total + float(lp[hi, t])
                rank = np.inf if t == eos else t
                cands.append((-s / (len(toks) + 1), -float(lp[hi, t]), hi, rank, toks + (int(t),), s, t == eos))
        for toks, total, fin in beams:
            if fin:
                cands.append((-total / len(toks), 0.0, -1, -1, toks, total, True))
        cands.sort(key=lambda c: c[:4])
        beams = [(c[4], c[5], c[6]) for c in cands[:width]]
    best = min(beams, key=lambda b: -b[1] / max(len(b[0]), 1))
    return list(best[0])


def generate(params, config, prompt, vocab, visual=None, strategy="greedy", max_len=32, img_slot=None):
    """Decode text for one prompt (ids through the target-language token).

    ``visual`` is the raw visual feature; it is projected here. Output excludes
    the prompt and ends at <EOS> or after ``max_len`` tokens.
    """
    prompt = np.asarray(prompt, dtype=np.int64)
    if img_slot is None and vocab["<IMG>"] in prompt:
        img_slot = int(np.nonzero(prompt == vocab["<IMG>"])[0][0])
    allowed = vocab.text_mask()
    eos = vocab["<EOS>"]
    kind, width = parse_strategy(strategy)
    if kind == "greedy":
        vis = None if visual is None else np.asarray(visual)[None]
        return greedy_decode(params, config, prompt[None], img_slot, vis, allowed, eos, max_len)[0]
    return beam_decode(params, config, prompt, img_slot, visual, allowed, eos, max_len, width)


def parse_strategy(strategy) -> tuple[str, int]:
    if isinstance(strategy, tuple):
        return strategy
    s = str(strategy).lower()
    if s == "greedy":
        return "greedy", 1
    if s.startswith("beam"):
        _, _, w = s.partition(":")
        width = int(w) if w else 4
        if width < 1:
            raise ValueError("beam width must be positive")
        return "beam", width
    raise ValueError(f"unknown decoding strategy {strategy!r}")


def sequence_logprob(params, config, prompt, target, vocab, visual=None, img_slot=None) -> float:
    """Sum of per-step log p(target_i | prefix), computed one prefix at a time."""
    prompt = np.asarray(prompt, dtype=np.int64)
    if img_slot is None and vocab["<IMG>"] in prompt:
        img_slot = int(np.nonzero(prompt == vocab["<IMG>"])[0][0])
    vis = None
    if img_slot is not None:
        vis = proj.project(projector_of(params), np.asarray(visual))[None]
    seq = prompt[None]
    total = 0.0
    for t in target:
        lp = log_softmax(_step_logits(params, config, seq, img_slot, vis))
        total += float(lp[0, int(t)])
        seq = np.concatenate([seq, [[int(t)]]], axis=1)
    return total
