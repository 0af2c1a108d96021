"""Visual data recovery: score image-text agreement per word and regenerate weak visuals.

A sample is flagged when even its best-matching word has cosine similarity
below ``tau`` with the image. Flagged samples get a new visual feature from a
prompt generator (LLM role) chained into an image generator (diffusion role).
Both roles, and the text/image embedders, sit behind a small client protocol
with a deterministic offline mock and a JSON-over-HTTP implementation.
"""

from __future__ import annotations

import hashlib
import json
import logging
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .errors import ClientFailure, EmbedderFailure, EmptyTranscript, NonFiniteInput

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.2
PROMPT_PREFIX = "a photo of "
BACKGROUND = "background"


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise EmbedderFailure("cannot normalise a zero or non-finite vector")
    return v / n


def concept_vector(word: str, dim: int) -> np.ndarray:
    """Deterministic unit vector for ``word``, orthogonal to the background axis 0."""
    seed = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(dim)
    v[0] = 0.0
    return _unit(v)


def neutral_vector(dim: int) -> np.ndarray:
    v = np.zeros(dim)
    v[0] = 1.0
    return v


class RecoveryClients(Protocol):
    def embed_text(self, words: Sequence[str]) -> np.ndarray: ...

    def embed_image(self, feature: np.ndarray) -> np.ndarray: ...

    def prompt(self, transcript: str) -> str: ...

    def image(self, prompt: str) -> np.ndarray: ...


@dataclass
class MockClients:
    """Offline stand-in for CLIP, an LLM and a diffusion model.

    With an ``object_words`` lexicon the prompt names the first object word of
    the transcript (or the background when there is none); without one it
    names the first word. The generated feature is ``scale`` times that word's
    concept vector plus seeded noise.
    """

    dim: int = 32
    object_words: Optional[frozenset] = None
    scale: float = 3.0
    noise_std: float = 0.0
    seed: int = 0

    def embed_text(self, words):
        return np.array([concept_vector(w, self.dim) for w in words])

    def embed_image(self, feature):
        return _unit(np.asarray(feature, dtype=np.float64))

    def prompt(self, transcript):
        words = transcript.split()
        if self.object_words is None:
            subject = words[0]
        else:
            subject = next((w for w in words if w in self.object_words), BACKGROUND)
        return PROMPT_PREFIX + subject

    def image(self, prompt):
        subject = prompt[len(PROMPT_PREFIX) :] if prompt.startswith(PROMPT_PREFIX) else prompt
        base = neutral_vector(self.dim) if subject == BACKGROUND else concept_vector(subject, self.dim)
        feat = self.scale * base
        if self.noise_std > 0:
            s = int.from_bytes(hashlib.sha256(f"{self.seed}:{prompt}".encode()).digest()[:8], "little")
            feat = feat + np.random.default_rng(s).standard_normal(self.dim) * self.noise_std
        return feat


@dataclass
class HttpClients:
    """JSON-over-HTTP clients.

    POST /embed_text {words} -> {vectors}; POST /prompt {transcript} -> {prompt};
    POST /image {prompt} -> {feature}. Image features are already in the shared
    embedding space, so image embedding is local normalisation.
    """

    base_url: str
    timeout: float = 30.0

    def _post(self, route, payload):
        req = urllib.request.Request(
            self.base_url.rstrip("/") + route,
            data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read())

    def embed_text(self, words):
        return np.asarray(self._post("/embed_text", {"words": list(words)})["vectors"], dtype=np.float64)

    def embed_image(self, feature):
        return _unit(np.asarray(feature, dtype=np.float64))

    def prompt(self, transcript):
        return str(self._post("/prompt", {"transcript": transcript})["prompt"])

    def image(self, prompt):
        return np.asarray(self._post("/image", {"prompt": prompt})["feature"], dtype=np.float64)


@dataclass
class SimilarityReport:
    sample_id: str
    per_word: list  # [(word, score)]
    max_score: float
    flagged: bool

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "per_word": [[w, s] for w, s in self.per_word],
            "max_score": self.max_score,
            "flagged": self.flagged,
        }


def score_sample(transcript: str, image_feature, clients, tau: float = DEFAULT_TAU, sample_id: str = "") -> SimilarityReport:
    words = transcript.split()
    if not words:
        raise EmptyTranscript(f"{sample_id or 'sample'}: empty transcript")
    feat = np.asarray(image_feature, dtype=np.float64)
    if not np.all(np.isfinite(feat)):
        raise NonFiniteInput(f"{sample_id or 'sample'}: non-finite image feature")
    try:
        text = np.asarray(clients.embed_text(words), dtype=np.float64)
        img = np.asarray(clients.embed_image(feat), dtype=np.float64)
    except EmbedderFailure:
        raise
    except Exception as exc:
        raise EmbedderFailure(f"{sample_id or 'sample'}: {exc}") from exc
    if text.shape != (len(words), img.shape[-1]):
        raise EmbedderFailure(f"text embeddings shape {text.shape} do not match {len(words)} words")
    text = text / np.linalg.norm(text, axis=1, keepdims=True)
    img = img / np.linalg.norm(img)
    scores = np.clip(text @ img, -1.0, 1.0)
    per_word = [(w, float(s)) for w, s in zip(words, scores)]
    best = float(scores.max())
    return SimilarityReport(sample_id, per_word, best, best < tau)


def _with_retry(fn, *args, retries=1):
    for attempt in range(retries + 1):
        try:
            return fn(*args)
        except Exception as exc:  # client errors are opaque; retry once then give up
            if attempt == retries:
                raise
            log.warning("client call failed (%s), retrying", exc)


@dataclass
class RecoveryResult:
    samples: list
    reports_before: list
    reports_after: list
    errors: list = field(default_factory=list)
    tau: float = DEFAULT_TAU

    @property
    def flagged_before(self) -> list:
        return [r.sample_id for r in self.reports_before if r.flagged]

    def stats(self, bins: int = 20) -> dict:
        before = np.array([r.max_score for r in self.reports_before])
        after = np.array([r.max_score for r in self.reports_after])
        counts, edges = np.histogram(before, bins=bins, range=(-1.0, 1.0))
        n = len(self.reports_before)
        return {
            "n_samples": n,
            "tau": self.tau,
            "flagged_fraction": sum(r.flagged for r in self.reports_before) / n if n else 0.0,
            "flagged_fraction_after": sum(r.flagged for r in self.reports_after) / n if n else 0.0,
            "n_regenerated": n - len(self.errors) - sum(not r.flagged for r in self.reports_before),
            "score_histogram": {"edges": edges.round(6).tolist(), "counts": counts.tolist()},
            "score_histogram_after": {
                "edges": edges.round(6).tolist(),
                "counts": np.histogram(after, bins=bins, range=(-1.0, 1.0))[0].tolist(),
            },
            "errors": list(self.errors),
        }


def _recover_one(sample, clients, tau):
    rep = score_sample(sample.text_src, sample.visual_feature, clients, tau, sample.sample_id)
    if not rep.flagged:
        return sample, rep, rep, None
    try:
        prompt = _with_retry(clients.prompt, sample.text_src)
        feature = np.asarray(_with_retry(clients.image, prompt), dtype=np.float64)
        if feature.shape != np.shape(sample.visual_feature) or not np.all(np.isfinite(feature)):
            raise ValueError(f"generated feature has shape {feature.shape}")
    except Exception as exc:
        err = ClientFailure(str(exc), sample.sample_id)
        return sample, rep, rep, {"sample_id": sample.sample_id, "error": str(err)}
    fields = dict(sample.__dict__)
    fields["visual_feature"] = feature
    new = type(sample)(**fields)
    after = score_sample(new.text_src, feature, clients, tau, sample.sample_id)
    return new, rep, after, None


def recover_dataset(samples: Sequence, clients, tau: float = DEFAULT_TAU, workers: int = 1) -> RecoveryResult:
    """Regenerate the visual feature of every flagged sample.

    Samples are never dropped: a sample whose client calls fail (after one
    retry) keeps its original feature and is listed in ``errors``. Output order
    follows input order whatever ``workers`` is.
    """
    for s in samples:
        if s.visual_feature is None or not s.text_src:
            raise EmptyTranscript(f"{s.sample_id}: recovery needs a transcript and a visual feature")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda s: _recover_one(s, clients, tau), samples))
    else:
        results = [_recover_one(s, clients, tau) for s in samples]
    return RecoveryResult(
        samples=[r[0] for r in results],
        reports_before=[r[1] for r in results],
        reports_after=[r[2] for r in results],
        errors=[r[3] for r in results if r[3] is not None],
        tau=tau,
    )


def make_fixture(n: int = 50, n_flagged: int = 31, dim: int = 32, seed: int = 0):
    """Dataset where exactly ``n_flagged`` of ``n`` images match none of their words.

    Matching samples carry the concept vector of their first word; the others
    carry the background vector, which is orthogonal to every word.
    """
    from .vocab import MultimodalSample

    rng = np.random.default_rng(seed)
    words = [f"w{i:02d}" for i in range(40)]
    flagged = set(rng.choice(n, size=n_flagged, replace=False).tolist())
    out = []
    for i in range(n):
        sent = [words[j] for j in rng.choice(len(words), size=int(rng.integers(3, 7)), replace=False)]
        feat = neutral_vector(dim) if i in flagged else concept_vector(sent[0], dim)
        out.append(
            MultimodalSample(
                sample_id=f"fx-{i:03d}",
                src_lang="en",
                tgt_lang="pt",
                text_src=" ".join(sent),
                visual_feature=3.0 * feat,
            )
        )
    return out
