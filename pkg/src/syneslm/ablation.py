"""Visual-condition ablation: no visual, random visual, visual, visual after recovery.

All four variants of one seed share the corpus, tokenizer, codebook, model
config, initialisation seed and batch order; only the visual features change.

* ``no_visual``: speech-only recognition.
* ``random_visual``: features deranged across samples in every split.
* ``visual``: a fraction of training features replaced by background frames
  (the poorly aligned data regime); dev/test keep their true features.
* ``visual_recovered``: the same corrupted training data passed through
  ``recover_dataset`` with the mock clients before training.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import corpus as corpus_mod
from .data import read_jsonl, replace_visual, with_dst_tokens
from .recovery import DEFAULT_TAU, MockClients, neutral_vector, recover_dataset
from .trainer import Assets, TrainConfig, build_assets, evaluate, train

log = logging.getLogger(__name__)

VARIANTS = ("no_visual", "random_visual", "visual", "visual_recovered")


@dataclass
class AblationConfig:
    corpus_dir: Optional[str] = None
    corpus: dict = field(default_factory=dict)  # CorpusSpec overrides when generating
    seeds: tuple = (0, 1, 2)
    total_steps: int = 3000
    warmup_steps: int = 300
    # 3e-3 leaves enough word drop/repeat errors to swamp the visual effect
    peak_lr: float = 8e-3
    batch_size: int = 32
    model: dict = field(default_factory=dict)
    multitask: bool = False
    corrupt_fraction: float = 0.3
    tau: float = DEFAULT_TAU
    bpe_vocab_size: int = 3000
    k: int = 64
    quantizer_seed: int = 0
    eval_split: str = "test"

    @classmethod
    def from_json(cls, obj: dict) -> "AblationConfig":
        obj = dict(obj)
        if "seeds" in obj:
            obj["seeds"] = tuple(obj["seeds"])
        return cls(**obj)

    def to_json(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation with no fixed points (rejection sampling)."""
    if n < 2:
        raise ValueError("a derangement needs at least two elements")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def corrupt_visuals(samples, fraction: float, rng, scale: float, noise_std: float):
    """Replace ``fraction`` of the features by background-frame features. Returns (samples, indices)."""
    n = len(samples)
    idx = np.sort(rng.choice(n, size=int(round(fraction * n)), replace=False))
    dim = len(samples[0].visual_feature)
    feats = [s.visual_feature for s in samples]
    for i in idx:
        feats[i] = scale * neutral_vector(dim) + rng.standard_normal(dim) * noise_std
    return replace_visual(samples, feats), idx.tolist()


def _tasks(visual: bool, multitask: bool) -> tuple:
    if visual:
        return ("avasr", "vst", "vmt") if multitask else ("avasr",)
    return ("asr", "st", "mt") if multitask else ("asr",)


@dataclass
class _Job:
    variant: str
    seed: int
    train: list
    test: list
    assets: Assets
    cfg: dict


def _run_job(job: _Job) -> dict:
    visual = job.variant != "no_visual"
    tasks = _tasks(visual, job.cfg["multitask"])
    tcfg = TrainConfig(
        tasks={t: "<in-memory>" for t in tasks},
        batch_size=job.cfg["batch_size"],
        peak_lr=job.cfg["peak_lr"],
        warmup_steps=job.cfg["warmup_steps"],
        total_steps=job.cfg["total_steps"],
        seed=job.seed,
        model=dict(job.cfg["model"]),
    )
    t0 = time.perf_counter()
    res = train(tcfg, {t: job.train for t in tasks}, job.assets)
    ev = evaluate(res.params, res.config, job.assets, job.test, tasks[0])
    return {
        "variant": job.variant,
        "seed": job.seed,
        "wer": ev["value"],
        "details": ev["details"],
        "losses": [m["loss"] for m in res.metrics],
        "seconds": time.perf_counter() - t0,
    }


def load_corpus(cfg: AblationConfig):
    if cfg.corpus_dir:
        manifest = corpus_mod.load_manifest(cfg.corpus_dir)
        base = Path(cfg.corpus_dir)
        splits = {name: read_jsonl(base / fname) for name, fname in manifest["files"].items()}
        spec = corpus_mod.CorpusSpec(**manifest["spec"])
    else:
        spec = corpus_mod.CorpusSpec(**cfg.corpus)
        splits = corpus_mod.generate(spec)
        manifest = {"spec": asdict(spec), "lexicon": corpus_mod.build_lexicon(spec).to_json()}
    return spec, splits, manifest


def ablate(cfg: AblationConfig, parallel: bool = False, on_result=None) -> dict:
    """Train and evaluate the four visual conditions for every seed; returns the report."""
    spec, splits, manifest = load_corpus(cfg)
    train_raw, test_raw = splits["train"], splits[cfg.eval_split]
    assets = build_assets(train_raw, (spec.src_lang, spec.tgt_lang), cfg.bpe_vocab_size, cfg.k, cfg.quantizer_seed)
    train_q = with_dst_tokens(train_raw, assets.codebook)
    test_q = with_dst_tokens(test_raw, assets.codebook)
    objects = frozenset(manifest["lexicon"]["object_words"])
    jcfg = {k: getattr(cfg, k) for k in ("multitask", "batch_size", "peak_lr", "warmup_steps", "total_steps", "model")}

    jobs, recovery = [], {}
    for seed in cfg.seeds:
        rng = np.random.default_rng([seed, 11])
        perm_train = derangement(len(train_q), rng)
        perm_test = derangement(len(test_q), rng)
        rand_train = replace_visual(train_q, [train_q[i].visual_feature for i in perm_train])
        rand_test = replace_visual(test_q, [test_q[i].visual_feature for i in perm_test])
        corrupted, idx = corrupt_visuals(
            train_q, cfg.corrupt_fraction, np.random.default_rng([seed, 13]), spec.visual_scale, spec.visual_noise_std
        )
        clients = MockClients(
            dim=spec.visual_dim, object_words=objects, scale=spec.visual_scale, noise_std=spec.visual_noise_std, seed=seed
        )
        rec = recover_dataset(corrupted, clients, cfg.tau)
        st = rec.stats()
        recovery[seed] = {
            "n_corrupted": len(idx),
            "flagged_fraction": st["flagged_fraction"],
            "flagged_fraction_after": st["flagged_fraction_after"],
            "n_errors": len(st["errors"]),
        }
        data = {
            "no_visual": (train_q, test_q),
            "random_visual": (rand_train, rand_test),
            "visual": (corrupted, test_q),
            "visual_recovered": (rec.samples, test_q),
        }
        for v in VARIANTS:
            jobs.append(_Job(v, seed, data[v][0], data[v][1], assets, jcfg))

    if parallel:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = []
        for job in jobs:
            r = _run_job(job)
            log.info("seed %d %-16s WER %.2f (%.0fs)", r["seed"], r["variant"], r["wer"], r["seconds"])
            if on_result:
                on_result(r)
            results.append(r)
    return build_report(cfg, spec, results, recovery, assets)


def build_report(cfg, spec, results, recovery, assets) -> dict:
    runs = []
    for seed in cfg.seeds:
        by = {r["variant"]: r for r in results if r["seed"] == seed}
        run = {"seed": seed}
        for v in VARIANTS:
            run[f"wer_{v}"] = by[v]["wer"]
        run["recovery"] = recovery[seed]
        run["checks"] = pattern_checks(run)
        runs.append(run)
    summary = {f"wer_{v}": float(np.mean([r[f"wer_{v}"] for r in runs])) for v in VARIANTS}
    return {
        "config": cfg.to_json(),
        "corpus_spec": asdict(spec),
        "vocab_total": assets.vocab.total_size,
        "runs": runs,
        "mean": summary,
        "all_checks_pass": all(all(r["checks"].values()) for r in runs),
        "_losses": {f"{r['variant']}/seed{r['seed']}": r["losses"] for r in results},
        "_seconds": {f"{r['variant']}/seed{r['seed']}": r["seconds"] for r in results},
    }


def pattern_checks(run: dict) -> dict:
    """The expected ordering: visual helps, random visual does not, recovery does not hurt."""
    nv, rv = run["wer_no_visual"], run["wer_random_visual"]
    v, vr = run["wer_visual"], run["wer_visual_recovered"]
    return {
        "visual_beats_no_visual_by_20pct": v <= 0.8 * nv and v < nv,
        "random_matches_no_visual_within_3": abs(rv - nv) <= 3.0,
        "recovered_within_0.5_of_visual": vr <= v + 0.5,
    }


def write_report(report: dict, out_dir, figures: bool = True) -> dict:
    """Write ablation.json (deterministic), ablation.csv and figures; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    public = {k: v for k, v in report.items() if not k.startswith("_")}
    paths = {"json": out / "ablation.json", "csv": out / "ablation.csv"}
    paths["json"].write_text(json.dumps(public, indent=1, sort_keys=True) + "\n")
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed"] + [f"wer_{v}" for v in VARIANTS] + ["checks_pass"])
        for r in report["runs"]:
            w.writerow([r["seed"]] + [f"{r[f'wer_{v}']:.4f}" for v in VARIANTS] + [all(r["checks"].values())])
    if "_seconds" in report:
        (out / "timings.json").write_text(json.dumps(report["_seconds"], indent=1, sort_keys=True) + "\n")
    if figures:
        from . import plots

        paths["figure"] = plots.plot_ablation(report, out / "ablation.png")
        if report.get("_losses"):
            paths["loss_figure"] = plots.plot_losses(report["_losses"], out / "ablation_loss.png")
    return paths
