"""Multitask training loop and evaluation."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from . import model as lm
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, warm_start
from .data import all_frames, read_jsonl, texts, with_dst_tokens, write_records
from .errors import DivergedLoss, EmptyDataset, MissingModality, NonFiniteActivation, TaskModalityMismatch
from .metrics import bleu, corpus_wer
from .quantizer import Codebook, fit_kmeans
from .tokenizer import BpeModel, train_bpe
from .vocab import Task, Vocabulary, assemble, build_vocab

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.98)
ADAM_EPS = 1e-9


@dataclass
class TrainConfig:
    tasks: dict  # task name -> dataset path (or list of samples when driven from Python)
    dev: dict = field(default_factory=dict)
    batch_size: int = 32
    peak_lr: float = 3e-3
    warmup_steps: int = 100
    total_steps: int = 1000
    seed: int = 0
    eval_every: int = 0
    grad_clip: float = 1.0
    model: dict = field(default_factory=dict)  # overrides on the desk preset
    preset: str = "desk"
    bpe_vocab_size: int = 3000
    k: int = 64
    kmeans_iters: int = 50
    kmeans_n_init: int = 1  # restarts cost a full fit each; one is enough for well-separated units
    dedup: bool = True
    languages: tuple = ("en", "pt")
    bpe_path: Optional[str] = None
    codebook_path: Optional[str] = None
    init_checkpoint: Optional[str] = None
    out_dir: Optional[str] = None
    deterministic: bool = True
    log_every: int = 1

    def __post_init__(self):
        if not self.tasks:
            raise EmptyDataset("at least one task is required")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps must not exceed total_steps")

    @classmethod
    def from_json(cls, obj: dict, base_dir=None) -> "TrainConfig":
        obj = dict(obj)
        base = Path(base_dir) if base_dir else None

        def resolve(p):
            if p is None or base is None or Path(p).is_absolute():
                return p
            return str(base / p)

        obj["tasks"] = {Task.parse(t).value: resolve(p) for t, p in obj["tasks"].items()}
        obj["dev"] = {Task.parse(t).value: resolve(p) for t, p in obj.get("dev", {}).items()}
        for key in ("bpe_path", "codebook_path", "init_checkpoint", "out_dir"):
            obj[key] = resolve(obj.get(key))
        if "languages" in obj:
            obj["languages"] = tuple(obj["languages"])
        return cls(**obj)

    def to_json(self) -> dict:
        d = asdict(self)
        d["tasks"] = {t: p if isinstance(p, str) else "<in-memory>" for t, p in self.tasks.items()}
        d["dev"] = {t: p if isinstance(p, str) else "<in-memory>" for t, p in self.dev.items()}
        d["languages"] = list(self.languages)
        return d


def _portable(cfg: TrainConfig) -> dict:
    # where the run was written is not part of the model; leaving it out keeps
    # checkpoints from identical configs byte-identical across output directories
    d = cfg.to_json()
    d.pop("out_dir")
    return d


def lr_at(step: int, peak: float, warmup: int) -> float:
    """Linear warmup then inverse-square-root decay; ``step`` counts from 0."""
    s = step + 1
    w = max(warmup, 1)
    return peak * min(s / w, math.sqrt(w / s))


def make_multitask_sampler(datasets: dict, batch_size: int, seed: int = 0) -> Iterator[list]:
    """Endless stream of batches of (task, index) pairs.

    Each batch element picks its task uniformly over the active tasks; within a
    task, indices cycle through a fresh seeded shuffle every epoch.
    """
    tasks = sorted(datasets, key=lambda t: Task.parse(t).value)
    for t in tasks:
        if len(datasets[t]) == 0:
            raise EmptyDataset(f"task {t} has no samples")
    rng = np.random.default_rng(seed)
    orders = {t: iter(()) for t in tasks}

    def draw(t):
        try:
            return next(orders[t])
        except StopIteration:
            orders[t] = iter(rng.permutation(len(datasets[t])).tolist())
            return next(orders[t])

    while True:
        picks = rng.integers(len(tasks), size=batch_size)
        yield [(tasks[i], draw(tasks[i])) for i in picks]


def _thread_limit(deterministic: bool):
    if not deterministic:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        return nullcontext()
    return threadpool_limits(1)


@dataclass
class Assets:
    vocab: Vocabulary
    bpe: BpeModel
    codebook: Codebook


def build_assets(train_samples, languages=("en", "pt"), bpe_vocab_size=3000, k=64, seed=0, kmeans_iters=50,
                 bpe: Optional[BpeModel] = None, codebook: Optional[Codebook] = None, kmeans_n_init=1) -> Assets:
    """Fit (or reuse) the tokenizer and codebook on training data and lay out the vocabulary."""
    if bpe is None:
        bpe = train_bpe(texts(train_samples), bpe_vocab_size)
    if codebook is None:
        cb = fit_kmeans(all_frames(train_samples), k=k, max_iters=kmeans_iters, seed=seed,
                        n_init=kmeans_n_init)
        # round-trip through float32 so the in-memory codebook equals the serialized one
        codebook = Codebook(cb.centroids.astype(np.float32).astype(np.float64), cb.fitted_inertia,
                            cb.inertia_history, cb.n_iter)
    return Assets(build_vocab(bpe, codebook.k, languages), bpe, codebook)


def _visual_of(sample, task: Task):
    return sample.visual_feature if task.visual else None


def assemble_all(datasets: dict, assets: Assets) -> dict:
    out = {}
    for t, samples in datasets.items():
        task = Task.parse(t)
        try:
            out[task] = [(assemble(s, task, assets.vocab, assets.bpe), _visual_of(s, task)) for s in samples]
        except MissingModality as exc:
            raise TaskModalityMismatch(str(exc)) from None
    return out


@dataclass
class TrainResult:
    params: dict
    config: lm.ModelConfig
    metrics: list
    checkpoint_path: Optional[Path] = None

    def checkpoint(self, assets: Assets, meta=None) -> Checkpoint:
        return Checkpoint(self.config, self.params, assets.vocab, assets.bpe, assets.codebook, meta or {})


def model_config_for(cfg: TrainConfig, vocab: Vocabulary, visual_dim: int) -> lm.ModelConfig:
    if cfg.preset == "desk":
        return lm.ModelConfig.desk(vocab.total_size, visual_dim=visual_dim, **cfg.model)
    return lm.ModelConfig(vocab_total=vocab.total_size, visual_dim=visual_dim, **cfg.model)


def train(cfg: TrainConfig, datasets: dict, assets: Assets, on_step: Optional[Callable] = None,
          model_config: Optional[lm.ModelConfig] = None) -> TrainResult:
    """Train on in-memory datasets {task: [MultimodalSample]} whose dst tokens are set.

    Adam with warmup + inverse-sqrt decay and global-norm clipping. A NaN/inf
    loss aborts with ``DivergedLoss`` after saving the last good parameters.
    """
    with _thread_limit(cfg.deterministic):
        return _train(cfg, datasets, assets, on_step, model_config)


def _train(cfg, datasets, assets, on_step, model_config):
    seqs = assemble_all(datasets, assets)
    visual_dim = next(
        (len(s.visual_feature) for ss in datasets.values() for s in ss if s.visual_feature is not None), 32
    )
    mcfg = model_config or model_config_for(cfg, assets.vocab, visual_dim)
    longest = max(len(a.ids) for pairs in seqs.values() for a, _ in pairs)
    if longest > mcfg.max_seq_len:
        raise lm.SeqTooLong(f"longest training sequence {longest} > max_seq_len {mcfg.max_seq_len}")

    params = lm.init_params(mcfg, seed=cfg.seed)
    if cfg.init_checkpoint:
        params = warm_start(params, load_checkpoint(cfg.init_checkpoint))
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2 = ADAM_BETAS

    sampler = make_multitask_sampler(seqs, cfg.batch_size, cfg.seed)
    drop_rng = np.random.default_rng([cfg.seed, 7]) if mcfg.dropout_rate > 0 else None
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    metrics = []
    ckpt_path = out_dir / "model.ckpt" if out_dir else None

    def save(p, step):
        if ckpt_path is not None:
            res = TrainResult(p, mcfg, metrics)
            save_checkpoint(ckpt_path, res.checkpoint(assets, {"step": step, "dedup": cfg.dedup, "train": _portable(cfg)}))

    for step in range(cfg.total_steps):
        picks = next(sampler)
        batch = lm.Batch.collate(
            [seqs[t][i][0] for t, i in picks],
            [seqs[t][i][1] for t, i in picks],
            assets.vocab.pad,
            mcfg.visual_dim,
        )
        try:
            loss, grads = lm.loss_and_grads(params, mcfg, batch, rng=drop_rng)
        except NonFiniteActivation:
            loss, grads = float("nan"), None
        if grads is None or not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            save(params, step)
            raise DivergedLoss(f"loss diverged at step {step}", step=step, checkpoint=ckpt_path)

        norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
        clip = 1.0
        if cfg.grad_clip and norm > cfg.grad_clip:
            clip = cfg.grad_clip / norm
        lr = lr_at(step, cfg.peak_lr, cfg.warmup_steps)
        t = step + 1
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for k, p in params.items():
            g = grads[k] * np.float32(clip) if clip != 1.0 else grads[k]
            m[k] = b1 * m[k] + (1 - b1) * g
            v2[k] = b2 * v2[k] + (1 - b2) * g * g
            upd = (m[k] / c1) / (np.sqrt(v2[k] / c2) + ADAM_EPS)
            params[k] = (p - np.float32(lr) * upd).astype(p.dtype, copy=False)

        counts = Counter(Task.parse(tk).value for tk, _ in picks)
        rec = {"step": step, "loss": loss, "lr": lr, "grad_norm": norm, "task_counts": dict(sorted(counts.items()))}
        metrics.append(rec)
        if on_step is not None:
            on_step(rec)
        if cfg.log_every and step % cfg.log_every == 0:
            log.debug("step %d loss %.4f lr %.2e", step, loss, lr)
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0 and step + 1 < cfg.total_steps:
            save(params, step + 1)

    save(params, cfg.total_steps)
    if out_dir:
        write_records(out_dir / "metrics.jsonl", metrics)
    return TrainResult(params, mcfg, metrics, ckpt_path)


# ---------------------------------------------------------------- evaluation


def decode_samples(params, mcfg, assets: Assets, samples, task, strategy="greedy", max_len=None):
    """Greedy/beam decode every sample's prompt; returns hypothesis strings in input order."""
    task = Task.parse(task)
    vocab, bpe = assets.vocab, assets.bpe
    prepared = []
    for s in samples:
        try:
            a = assemble(s, task, vocab, bpe)
        except MissingModality as exc:
            raise TaskModalityMismatch(str(exc)) from None
        prepared.append((a.prompt(), _visual_of(s, task), a.img_slot))
    kind, width = lm.parse_strategy(strategy)
    allowed = vocab.text_mask()
    eos = vocab["<EOS>"]
    hyps = [None] * len(samples)

    def limit(plen):
        room = mcfg.max_seq_len - plen
        return room if max_len is None else min(max_len, room)

    if kind == "greedy":
        groups = {}
        for i, (p, v, slot) in enumerate(prepared):
            groups.setdefault((len(p), slot), []).append(i)
        for (plen, slot), idx in sorted(groups.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])):
            prompts = np.stack([prepared[i][0] for i in idx])
            vis = None if slot is None else np.stack([prepared[i][1] for i in idx])
            outs = lm.greedy_decode(params, mcfg, prompts, slot, vis, allowed, eos, limit(plen))
            for i, o in zip(idx, outs):
                hyps[i] = o
    else:
        for i, (p, v, slot) in enumerate(prepared):
            hyps[i] = lm.beam_decode(params, mcfg, p, slot, v, allowed, eos, limit(len(p)), width)
    return [ids_to_text(h, assets) for h in hyps]


def ids_to_text(ids, assets: Assets) -> str:
    vocab = assets.vocab
    eos = vocab["<EOS>"]
    text_ids = []
    for t in ids:
        if t == eos:
            break
        if vocab.is_text(t):
            text_ids.append(t - vocab.txt_start)
    return assets.bpe.decode(text_ids)


def reference(sample, task) -> str:
    task = Task.parse(task)
    return sample.text_src if task.same_language else sample.text_tgt


def evaluate(params, mcfg, assets: Assets, samples, task, strategy="greedy", max_len=None) -> dict:
    """Decode then score with WER (recognition tasks) or BLEU (translation tasks)."""
    task = Task.parse(task)
    if not samples:
        raise EmptyDataset("evaluation set is empty")
    with _thread_limit(True):
        hyps = decode_samples(params, mcfg, assets, samples, task, strategy, max_len)
    refs = [reference(s, task) for s in samples]
    outputs = [{"id": s.sample_id, "hyp": h, "ref": r} for s, h, r in zip(samples, hyps, refs)]
    if task.metric == "wer":
        b = corpus_wer(hyps, refs)
        return {"task": task.value, "metric": "wer", "value": b.wer, "details": b.to_json(), "outputs": outputs}
    return {"task": task.value, "metric": "bleu", "value": bleu(hyps, refs), "outputs": outputs}


def evaluate_checkpoint(ckpt: Checkpoint, samples, task, strategy="greedy", max_len=None) -> dict:
    assets = Assets(ckpt.vocab, ckpt.bpe, ckpt.codebook)
    samples = with_dst_tokens(samples, ckpt.codebook, ckpt.meta.get("dedup", True))
    return evaluate(ckpt.params, ckpt.config, assets, samples, task, strategy, max_len)


# ---------------------------------------------------------------- config-file driver


def load_datasets(cfg: TrainConfig) -> dict:
    out = {}
    cache = {}
    for t, src in cfg.tasks.items():
        if isinstance(src, (str, Path)):
            key = str(src)
            if key not in cache:
                cache[key] = read_jsonl(src)
            out[Task.parse(t).value] = cache[key]
        else:
            out[Task.parse(t).value] = list(src)
    return out


def run_training(cfg: TrainConfig) -> tuple[TrainResult, Assets]:
    """Fit assets if needed, quantize speech, train, and write checkpoint + metrics to ``out_dir``."""
    datasets = load_datasets(cfg)
    pool = []
    seen = set()
    for samples in datasets.values():
        if id(samples) not in seen:
            seen.add(id(samples))
            pool.extend(samples)
    assets = build_assets(
        pool,
        cfg.languages,
        cfg.bpe_vocab_size,
        cfg.k,
        cfg.seed,
        cfg.kmeans_iters,
        bpe=BpeModel.load(cfg.bpe_path) if cfg.bpe_path else None,
        codebook=Codebook.load(cfg.codebook_path) if cfg.codebook_path else None,
        kmeans_n_init=cfg.kmeans_n_init,
    )
    quantized = {}
    prepared = {}
    for t, samples in datasets.items():
        if id(samples) not in quantized:
            quantized[id(samples)] = with_dst_tokens(samples, assets.codebook, cfg.dedup)
        prepared[t] = quantized[id(samples)]
    result = train(cfg, prepared, assets)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        assets.vocab.save(out / "vocab.json")
        assets.bpe.save(out / "bpe.json")
        assets.codebook.save(out / "codebook.bin")
        (out / "train_config.json").write_text(json.dumps(cfg.to_json(), indent=1) + "\n")
    return result, assets
