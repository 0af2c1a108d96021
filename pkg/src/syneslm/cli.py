"""``syneslm`` command line.

Exit codes: 0 ok, 1 usage, 2 data error, 3 runtime failure or divergence.
Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import SynesError

log = logging.getLogger("syneslm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj, out=None):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _seed(args, own=None):
    if own is not None:
        return own
    return args.seed if args.seed is not None else 0


def _read_lines(path) -> list[str]:
    return Path(path).read_text().splitlines()


def _read_text_corpus(path) -> list[str]:
    from .data import read_jsonl

    if str(path).endswith(".jsonl"):
        out = []
        for s in read_jsonl(path):
            out.extend(t for t in (s.text_src, s.text_tgt) if t)
        return out
    return [ln for ln in _read_lines(path) if ln.strip()]


def _read_frames(path):
    """(ids, [frames]) from a .npy array (one sequence) or a dataset JSONL."""
    from .data import read_jsonl

    if str(path).endswith(".npy"):
        return None, [np.load(path)]
    samples = read_jsonl(path)
    return [s.sample_id for s in samples], [s.frames for s in samples]


# ---------------------------------------------------------------- handlers


def cmd_tokenizer_train(args):
    from .tokenizer import train_bpe

    model = train_bpe(_read_text_corpus(args.corpus), args.vocab_size)
    model.save(args.out)
    _emit({"vocab_size": model.vocab_size, "n_merges": len(model.merges), "out": args.out})


def cmd_quantizer_fit(args):
    from .quantizer import fit_kmeans

    _, seqs = _read_frames(args.frames)
    frames = np.concatenate([np.asarray(f) for f in seqs if f is not None and len(f)], axis=0)
    cb = fit_kmeans(frames, k=args.k, max_iters=args.max_iters, seed=_seed(args, args.quantizer_seed),
                    n_init=args.n_init)
    cb.save(args.out, fmt=args.format)
    _emit({"k": cb.k, "dim": cb.dim, "inertia": cb.fitted_inertia, "n_iter": cb.n_iter, "out": args.out})


def cmd_quantizer_encode(args):
    from .quantizer import Codebook, quantize

    cb = Codebook.load(args.codebook)
    ids, seqs = _read_frames(args.frames)
    if ids is None:
        sys.stdout.write(json.dumps(quantize(cb, seqs[0], dedup=not args.no_dedup)) + "\n")
        return
    for sid, f in zip(ids, seqs):
        sys.stdout.write(json.dumps({"id": sid, "dst_tokens": quantize(cb, f, dedup=not args.no_dedup)}) + "\n")


def cmd_corpus_gen(args):
    from dataclasses import replace

    from .corpus import CorpusSpec, write_corpus

    spec = CorpusSpec.from_json(json.loads(Path(args.spec).read_text())) if args.spec else CorpusSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    manifest = write_corpus(spec, args.out_dir)
    _emit({"out_dir": args.out_dir, "files": manifest["files"], "seed": manifest["seed"]})


def cmd_train(args):
    from dataclasses import replace

    from .trainer import TrainConfig, run_training

    path = Path(args.config)
    cfg = TrainConfig.from_json(json.loads(path.read_text()), base_dir=path.parent)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out_dir:
        cfg = replace(cfg, out_dir=args.out_dir)
    result, _ = run_training(cfg)
    summary = {
        "steps": len(result.metrics),
        "final_loss": result.metrics[-1]["loss"] if result.metrics else None,
        "checkpoint": str(result.checkpoint_path) if result.checkpoint_path else None,
    }
    if cfg.out_dir and result.metrics and not args.no_figures:
        from .plots import plot_losses

        summary["figure"] = str(plot_losses({"train": [m["loss"] for m in result.metrics]}, Path(cfg.out_dir) / "loss.png"))
    _emit(summary)


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .data import read_jsonl, write_records
    from .trainer import evaluate_checkpoint

    ckpt = load_checkpoint(args.ckpt)
    res = evaluate_checkpoint(ckpt, read_jsonl(args.data), args.task, args.strategy, args.max_len)
    if args.out:
        write_records(args.out, res["outputs"])
    _emit({k: res[k] for k in ("task", "metric", "value")} | {"details": res.get("details", {}), "n": len(res["outputs"])})


def cmd_decode(args):
    from .checkpoint import load_checkpoint
    from .data import read_jsonl, with_dst_tokens
    from .trainer import Assets, _thread_limit, decode_samples

    ckpt = load_checkpoint(args.ckpt)
    samples = with_dst_tokens(read_jsonl(args.input), ckpt.codebook, ckpt.meta.get("dedup", True))
    assets = Assets(ckpt.vocab, ckpt.bpe, ckpt.codebook)
    with _thread_limit(True):
        hyps = decode_samples(ckpt.params, ckpt.config, assets, samples, args.task, args.strategy, args.max_len)
    lines = [json.dumps({"id": s.sample_id, "task": args.task, "hyp": h}) + "\n" for s, h in zip(samples, hyps)]
    if args.out:
        Path(args.out).write_text("".join(lines))
    else:
        sys.stdout.write("".join(lines))


def cmd_recover(args):
    from .corpus import load_manifest
    from .data import read_jsonl, write_jsonl
    from .recovery import HttpClients, MockClients, recover_dataset

    samples = read_jsonl(args.data)
    if args.clients == "http":
        if not args.url:
            raise UsageError("--clients http requires --url")
        clients = HttpClients(args.url)
    else:
        dim = next((len(s.visual_feature) for s in samples if s.visual_feature is not None), 32)
        objects, scale, noise = None, 3.0, 0.0
        if args.lexicon:
            manifest = load_manifest(args.lexicon)
            objects = frozenset(manifest["lexicon"]["object_words"])
            scale = manifest["spec"]["visual_scale"]
            noise = manifest["spec"]["visual_noise_std"]
        clients = MockClients(dim=dim, object_words=objects, scale=scale, noise_std=noise, seed=_seed(args))
    res = recover_dataset(samples, clients, args.tau, workers=args.workers)
    write_jsonl(args.out, res.samples)
    stats = res.stats()
    stats["flagged_ids"] = res.flagged_before
    report = Path(args.report)
    _emit(stats, report)
    if not args.no_figures:
        from .plots import plot_similarity

        plot_similarity(stats, report.with_suffix(".png"))
    _emit({k: stats[k] for k in ("n_samples", "flagged_fraction", "flagged_fraction_after", "n_regenerated")}
          | {"n_errors": len(stats["errors"])})


def cmd_score(args):
    from .errors import LengthMismatch
    from .metrics import BLEU_SMOOTHING, bleu, bleu_stats, corpus_wer

    hyps, refs = _read_lines(args.hyp), _read_lines(args.ref)
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    kw = {"lowercase": args.lowercase, "strip_punct": args.strip_punct}
    if args.metric == "wer":
        b = corpus_wer(hyps, refs, **kw)
        _emit({"metric": "wer", "value": b.wer, "details": b.to_json()})
    else:
        st = bleu_stats(hyps, refs, **kw)
        _emit({"metric": "bleu", "value": bleu(hyps, refs, **kw), "details": st | {"smoothing": BLEU_SMOOTHING}})


def cmd_ablate(args):
    from .ablation import AblationConfig, ablate, write_report

    obj = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.corpus_dir:
        obj["corpus_dir"] = args.corpus_dir
    if args.seeds:
        obj["seeds"] = args.seeds
    elif args.seed is not None:
        obj["seeds"] = [args.seed, args.seed + 1, args.seed + 2]
    if args.steps:
        obj["total_steps"] = args.steps
    cfg = AblationConfig.from_json(obj)
    report = ablate(cfg, parallel=args.parallel)
    paths = write_report(report, args.out_dir, figures=not args.no_figures)
    _emit({"mean": report["mean"], "all_checks_pass": report["all_checks_pass"]}
          | {"files": {k: str(v) for k, v in paths.items()}})


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="syneslm", description="Multimodal speech/text LM toolkit.")
    p.add_argument("--seed", type=int, default=None, help="global seed for every stochastic component")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    tok = sub.add_parser("tokenizer", help="BPE tokenizer").add_subparsers(dest="action", required=True, parser_class=_Parser)
    t = tok.add_parser("train", help="learn BPE merges from a text file or dataset JSONL")
    t.add_argument("--corpus", required=True)
    t.add_argument("--vocab-size", type=int, default=3000)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tokenizer_train)

    q = sub.add_parser("quantizer", help="k-means speech quantizer").add_subparsers(dest="action", required=True, parser_class=_Parser)
    f = q.add_parser("fit", help="fit a codebook on frames (.npy or dataset JSONL)")
    f.add_argument("--frames", required=True)
    f.add_argument("--k", type=int, default=64)
    f.add_argument("--seed", dest="quantizer_seed", type=int, default=None)
    f.add_argument("--max-iters", type=int, default=100)
    f.add_argument("--n-init", type=int, default=10, help="k-means++ restarts; the lowest inertia wins")
    f.add_argument("--format", choices=("binary", "json"), default="binary")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_quantizer_fit)
    e = q.add_parser("encode", help="map frames to cluster ids")
    e.add_argument("--codebook", required=True)
    e.add_argument("--frames", required=True)
    e.add_argument("--no-dedup", action="store_true")
    e.set_defaults(func=cmd_quantizer_encode)

    c = sub.add_parser("corpus", help="synthetic corpus").add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = c.add_parser("gen", help="generate train/dev/test JSONL and a manifest")
    g.add_argument("--spec", default=None, help="JSON corpus spec (defaults when omitted)")
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_corpus_gen)

    tr = sub.add_parser("train", help="train from a JSON config")
    tr.add_argument("--config", required=True)
    tr.add_argument("--out-dir", default=None, help="overrides out_dir in the config")
    tr.add_argument("--no-figures", action="store_true")
    tr.set_defaults(func=cmd_train)

    tasks = ("asr", "avasr", "st", "vst", "mt", "vmt")
    ev = sub.add_parser("eval", help="score a checkpoint on a dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--task", required=True, choices=tasks)
    ev.add_argument("--out", default=None, help="per-sample JSONL {id, hyp, ref}")
    ev.add_argument("--strategy", default="greedy", help="greedy or beam:K")
    ev.add_argument("--max-len", type=int, default=None)
    ev.set_defaults(func=cmd_eval)

    d = sub.add_parser("decode", help="generate outputs for a dataset")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--task", required=True, choices=tasks)
    d.add_argument("--input", required=True)
    d.add_argument("--strategy", default="greedy")
    d.add_argument("--max-len", type=int, default=32)
    d.add_argument("--out", default=None)
    d.set_defaults(func=cmd_decode)

    r = sub.add_parser("recover", help="flag and regenerate poorly aligned visual features")
    r.add_argument("--data", required=True)
    r.add_argument("--tau", type=float, default=0.2)
    r.add_argument("--clients", choices=("mock", "http"), default="mock")
    r.add_argument("--url", default=None, help="base URL for --clients http")
    r.add_argument("--lexicon", default=None, help="corpus manifest; lets the mock prompt name object words")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", required=True)
    r.add_argument("--report", required=True)
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_recover)

    s = sub.add_parser("score", help="WER or BLEU of line-aligned files")
    s.add_argument("--metric", required=True, choices=("wer", "bleu"))
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--lowercase", action="store_true")
    s.add_argument("--strip-punct", action="store_true")
    s.set_defaults(func=cmd_score)

    a = sub.add_parser("ablate", help="visual-condition ablation over several seeds")
    a.add_argument("--config", default=None, help="JSON AblationConfig overrides")
    a.add_argument("--corpus-dir", default=None, help="use an existing generated corpus")
    a.add_argument("--seeds", type=int, nargs="+", default=None)
    a.add_argument("--steps", type=int, default=None)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--parallel", action="store_true")
    a.add_argument("--no-figures", action="store_true")
    a.set_defaults(func=cmd_ablate)
    return p


def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code} | extra) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), 1)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        return _fail("UsageError", str(exc), 1)
    except SynesError as exc:
        extra = {}
        if getattr(exc, "step", None) is not None:
            extra = {"step": exc.step, "checkpoint": str(exc.checkpoint) if exc.checkpoint else None}
        return _fail(type(exc).__name__, str(exc), exc.exit_code, **extra)
    except (FileNotFoundError, IsADirectoryError, json.JSONDecodeError, KeyError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except Exception as exc:  # noqa: BLE001
        return _fail(type(exc).__name__, str(exc), 3)
    return 0


if __name__ == "__main__":
    sys.exit(main())
