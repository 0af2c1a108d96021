"""Checkpoint file: ``SYNCKPT1``, u64 header length, JSON header, float32 tensors.

The header holds the model config, a tensor table (name -> shape, byte offset
into the payload) and the assets needed to decode: vocabulary, tokenizer and
codebook. Tensors are little-endian float32, row-major, in sorted name order.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .model import ModelConfig
from .quantizer import Codebook
from .tokenizer import BpeModel
from .vocab import Vocabulary

MAGIC = b"SYNCKPT1"


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    vocab: Optional[Vocabulary] = None
    bpe: Optional[BpeModel] = None
    codebook: Optional[Codebook] = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = dict(ckpt.params)
    if ckpt.codebook is not None:
        tensors["codebook.centroids"] = ckpt.codebook.centroids
    table = {}
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name]
        table[name] = {"shape": list(arr.shape), "offset": offset}
        offset += int(np.prod(arr.shape)) * 4
    header = {
        "config": ckpt.config.to_json(),
        "tensors": table,
        "vocab": None if ckpt.vocab is None else ckpt.vocab.to_json(),
        "bpe": None if ckpt.bpe is None else ckpt.bpe.to_json(),
        "meta": ckpt.meta,
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in sorted(tensors):
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + hlen].decode("utf-8"))
    base = start + hlen
    params = {}
    for name, info in header["tensors"].items():
        count = int(np.prod(info["shape"]))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=base + info["offset"])
        params[name] = arr.reshape(info["shape"]).astype(np.float32)
    centroids = params.pop("codebook.centroids", None)
    return Checkpoint(
        config=ModelConfig.from_json(header["config"]),
        params=params,
        vocab=None if header.get("vocab") is None else Vocabulary.from_json(header["vocab"]),
        bpe=None if header.get("bpe") is None else BpeModel.from_json(header["bpe"]),
        codebook=None if centroids is None else Codebook(centroids.astype(np.float64)),
        meta=header.get("meta", {}),
    )


def warm_start(params: dict, ckpt: Checkpoint) -> dict:
    """Copy checkpoint tensors into ``params`` where names and shapes agree."""
    out = dict(params)
    for name, arr in ckpt.params.items():
        if name in out and out[name].shape == arr.shape:
            out[name] = arr.astype(out[name].dtype)
    return out
