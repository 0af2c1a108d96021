"""K-means codebook over speech feature frames and frame-sequence quantization."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DimMismatch, EmptySequence, NonFiniteInput, TooFewPoints

MAGIC = b"SYNKMEANS"
VERSION = 1
_CHUNK = 2048


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray  # (k, dim) float64
    fitted_inertia: Optional[float] = None
    inertia_history: tuple = field(default=(), compare=False)
    n_iter: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def save(self, path, fmt: str = "binary") -> None:
        path = Path(path)
        if fmt == "json":
            obj = {
                "version": VERSION,
                "k": self.k,
                "dim": self.dim,
                "fitted_inertia": self.fitted_inertia,
                "centroids": self.centroids.tolist(),
            }
            path.write_text(json.dumps(obj) + "\n")
            return
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<III", VERSION, self.k, self.dim))
            fh.write(np.ascontiguousarray(self.centroids, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "Codebook":
        raw = Path(path).read_bytes()
        if raw.startswith(MAGIC):
            version, k, dim = struct.unpack_from("<III", raw, len(MAGIC))
            if version != VERSION:
                raise DataError(f"unsupported codebook version {version}")
            offset = len(MAGIC) + 12
            data = np.frombuffer(raw, dtype="<f4", count=k * dim, offset=offset)
            return cls(data.reshape(k, dim).astype(np.float64))
        obj = json.loads(raw)
        cents = np.asarray(obj["centroids"], dtype=np.float64).reshape(obj["k"], obj["dim"])
        return cls(cents, obj.get("fitted_inertia"))


def _as_frames(frames, dim: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 2:
        raise DimMismatch(f"frames must be 2-d, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DimMismatch(f"frame dim {arr.shape[1]} != codebook dim {dim}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("frames contain NaN or inf")
    return arr


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # explicit differences rather than the |x|^2 - 2xc + |c|^2 expansion, so
    # exact ties stay exact
    out = np.empty((x.shape[0], c.shape[0]))
    for s in range(0, x.shape[0], _CHUNK):
        d = x[s : s + _CHUNK, None, :] - c[None, :, :]
        out[s : s + _CHUNK] = np.einsum("nkd,nkd->nk", d, d)
    return out


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            break
        idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
        idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


def fit_kmeans(frames, k: int = 64, max_iters: int = 100, seed: int = 0, n_init: int = 10) -> Codebook:
    """Lloyd's algorithm from k-means++ seeds, best of ``n_init`` restarts.

    Each run stops when assignments no longer change or after ``max_iters``
    rounds. A cluster that loses all its points is moved onto the point
    currently farthest from its own centroid. The first run draws from
    ``default_rng(seed)``, run r > 0 from ``default_rng([seed, r])``; the run
    with the lowest inertia wins (earliest on ties).
    """
    x = _as_frames(frames)
    if k < 1 or max_iters < 1 or n_init < 1:
        raise DataError("k, max_iters and n_init must be positive")
    n_distinct = np.unique(x, axis=0).shape[0]
    if n_distinct < k:
        raise TooFewPoints(f"{n_distinct} distinct frames < k={k}")
    best = None
    for r in range(n_init):
        rng = np.random.default_rng(seed if r == 0 else [seed, r])
        cb = _lloyd(x, k, max_iters, rng)
        if best is None or cb.fitted_inertia < best.fitted_inertia:
            best = cb
    return best


def _lloyd(x, k, max_iters, rng) -> Codebook:
    centroids = _kmeans_pp(x, k, rng)
    assign = None
    history = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d = _sq_dists(x, centroids)
        new_assign = np.argmin(d, axis=1)
        point_d = d[np.arange(len(x)), new_assign]
        history.append(float(point_d.sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        taken = set()
        for j in range(k):
            if counts[j]:
                centroids[j] = sums[j] / counts[j]
                continue
            order = np.argsort(-point_d, kind="stable")
            far = next(int(i) for i in order if int(i) not in taken)
            taken.add(far)
            centroids[j] = x[far]
            point_d[far] = 0.0
    d = _sq_dists(x, centroids)
    inertia = float(d.min(axis=1).sum())
    if not history or inertia != history[-1]:
        history.append(inertia)
    return Codebook(centroids, inertia, tuple(history), n_iter)


def nearest(codebook: Codebook, frames) -> np.ndarray:
    x = _as_frames(frames, codebook.dim)
    # argmin returns the first minimum, i.e. the lowest centroid index on ties
    return np.argmin(_sq_dists(x, codebook.centroids), axis=1)


def quantize(codebook: Codebook, frames, dedup: bool = True) -> list[int]:
    """Map each frame to its nearest centroid; optionally collapse repeated ids."""
    x = np.asarray(frames, dtype=np.float64)
    if x.size == 0:
        raise EmptySequence("cannot quantize an empty frame sequence")
    ids = nearest(codebook, x).tolist()
    if dedup:
        ids = [t for i, t in enumerate(ids) if i == 0 or t != ids[i - 1]]
    return ids


def quantize_many(codebook: Codebook, sequences: Sequence, dedup: bool = True) -> list[list[int]]:
    return [quantize(codebook, f, dedup) for f in sequences]
