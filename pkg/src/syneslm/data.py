"""JSON-lines dataset I/O and preparation into model-ready sequences."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError
from .quantizer import Codebook, quantize
from .vocab import MultimodalSample

_ROUND = 5


def _floats(arr) -> list:
    return np.round(np.asarray(arr, dtype=np.float64), _ROUND).tolist()


def sample_to_json(s: MultimodalSample) -> dict:
    obj = {
        "id": s.sample_id,
        "src_lang": s.src_lang,
        "tgt_lang": s.tgt_lang,
        "text_src": s.text_src,
        "text_tgt": s.text_tgt,
    }
    if s.frames is not None:
        obj["frames"] = _floats(s.frames)
    if s.dst_tokens is not None:
        obj["dst_tokens"] = [int(t) for t in s.dst_tokens]
    obj["visual_feature"] = None if s.visual_feature is None else _floats(s.visual_feature)
    return obj


def sample_from_json(obj: dict, base_dir: Optional[Path] = None) -> MultimodalSample:
    try:
        frames = obj.get("frames")
        if frames is None and obj.get("frames_path"):
            fp = Path(obj["frames_path"])
            if base_dir is not None and not fp.is_absolute():
                fp = base_dir / fp
            frames = np.load(fp)
        vis = obj.get("visual_feature")
        return MultimodalSample(
            sample_id=str(obj["id"]),
            src_lang=obj["src_lang"],
            tgt_lang=obj["tgt_lang"],
            text_src=obj.get("text_src", ""),
            text_tgt=obj.get("text_tgt", ""),
            dst_tokens=obj.get("dst_tokens"),
            visual_feature=None if vis is None else np.asarray(vis, dtype=np.float64),
            frames=None if frames is None else np.asarray(frames, dtype=np.float64),
        )
    except KeyError as exc:
        raise DataError(f"sample missing field {exc}") from None


def read_jsonl(path) -> list[MultimodalSample]:
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            out.append(sample_from_json(obj, path.parent))
    return out


def write_jsonl(path, samples: Iterable[MultimodalSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_json(s), ensure_ascii=False) + "\n")


def write_records(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


def read_records(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def with_dst_tokens(samples: Sequence[MultimodalSample], codebook: Codebook, dedup: bool = True):
    """Copies of ``samples`` whose ``dst_tokens`` come from quantizing their frames."""
    out = []
    for s in samples:
        dst = s.dst_tokens
        if s.frames is not None and len(s.frames):
            dst = quantize(codebook, s.frames, dedup)
        out.append(_replace(s, dst_tokens=dst))
    return out


def _replace(s: MultimodalSample, **changes) -> MultimodalSample:
    fields = dict(s.__dict__)
    fields.update(changes)
    return MultimodalSample(**fields)


def replace_visual(samples: Sequence[MultimodalSample], features) -> list[MultimodalSample]:
    return [_replace(s, visual_feature=None if f is None else np.asarray(f)) for s, f in zip(samples, features)]


def texts(samples: Sequence[MultimodalSample]) -> list[str]:
    return [t for s in samples for t in (s.text_src, s.text_tgt) if t]


def all_frames(samples: Sequence[MultimodalSample]) -> np.ndarray:
    return np.concatenate([s.frames for s in samples if s.frames is not None and len(s.frames)])


def dataset_digest(samples: Sequence[MultimodalSample]) -> str:
    """Hash of every field, used to show training never mutates its inputs."""
    h = hashlib.sha256()
    for s in samples:
        h.update(json.dumps([s.sample_id, s.src_lang, s.tgt_lang, s.text_src, s.text_tgt]).encode())
        for arr in (s.frames, s.visual_feature):
            h.update(b"-" if arr is None else np.ascontiguousarray(arr).tobytes())
        h.update(json.dumps(None if s.dst_tokens is None else [int(t) for t in s.dst_tokens]).encode())
    return h.hexdigest()
