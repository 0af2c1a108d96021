"""Seeded synthetic audio-visual corpus.

Every English word has an acoustic prototype; homophone pairs share one, so
their speech is identical and only the visual feature tells them apart. The
visual feature of a sentence is the concept vector of its object word (the
same vector the mock text embedder returns for that word) plus noise, or a
neutral "background" vector when no object is mentioned. Targets are a
word-by-word toy translation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import write_jsonl
from .errors import InvalidSpec
from .recovery import concept_vector, neutral_vector
from .vocab import MultimodalSample

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class CorpusSpec:
    n_object_words: int = 20
    n_filler_words: int = 30
    homophone_pairs: int = 4
    frame_dim: int = 16
    frames_per_subunit: int = 2
    acoustic_noise_std: float = 0.05
    visual_dim: int = 32
    visual_noise_std: float = 0.3
    visual_scale: float = 3.0
    min_words: int = 3
    max_words: int = 8
    object_prob: float = 0.9
    src_lang: str = "en"
    tgt_lang: str = "pt"
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    seed: int = 0

    def validate(self) -> None:
        if self.n_object_words < 1 or self.n_filler_words < 1:
            raise InvalidSpec("need at least one object and one filler word")
        if not 0 <= self.homophone_pairs <= self.n_object_words // 2:
            raise InvalidSpec("homophone_pairs must be within [0, n_object_words / 2]")
        if min(self.acoustic_noise_std, self.visual_noise_std) < 0:
            raise InvalidSpec("noise standard deviations must be non-negative")
        if not 1 <= self.min_words <= self.max_words:
            raise InvalidSpec("need 1 <= min_words <= max_words")
        if self.frames_per_subunit < 1 or self.frame_dim < 1 or self.visual_dim < 2:
            raise InvalidSpec("frame/visual dimensions must be positive (visual_dim >= 2)")
        if not 0 <= self.object_prob <= 1:
            raise InvalidSpec("object_prob must be a probability")
        if self.src_lang == self.tgt_lang:
            raise InvalidSpec("source and target language must differ")
        if self.n_filler_words < 2 and self.max_words > 1:
            raise InvalidSpec("need two filler words to avoid immediate repeats")

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusSpec":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"unknown corpus spec fields {sorted(unknown)}")
        return cls(**obj)


@dataclass
class Lexicon:
    objects: list
    fillers: list
    translation: dict
    homophones: list  # [[w1, w2], ...]
    acoustic: dict  # word -> prototype (frame_dim,)
    visual: dict  # object word -> prototype (visual_dim,)
    neutral: np.ndarray

    def to_json(self) -> dict:
        return {
            "object_words": self.objects,
            "filler_words": self.fillers,
            "translation": self.translation,
            "homophone_pairs": self.homophones,
        }


def _pseudo_words(rng, n, syllables, taken):
    out = []
    while len(out) < n:
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(syllables))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def build_lexicon(spec: CorpusSpec) -> Lexicon:
    spec.validate()
    rng = np.random.default_rng([spec.seed, 1000])
    taken = set()
    n_en = spec.n_object_words + spec.n_filler_words
    en = _pseudo_words(rng, n_en, 2, taken)
    pt = _pseudo_words(rng, n_en, 3, taken)
    objects, fillers = en[: spec.n_object_words], en[spec.n_object_words :]
    translation = dict(zip(en, pt))

    homophones = [[objects[2 * i], objects[2 * i + 1]] for i in range(spec.homophone_pairs)]
    acoustic = {w: rng.standard_normal(spec.frame_dim) for w in en}
    for a, b in homophones:
        acoustic[b] = acoustic[a].copy()

    visual = {w: spec.visual_scale * concept_vector(w, spec.visual_dim) for w in objects}
    margin = 4 * spec.visual_noise_std
    for a, b in homophones:
        if np.linalg.norm(visual[a] - visual[b]) < margin:
            raise InvalidSpec(f"visual prototypes of homophones {a}/{b} closer than {margin}")
    neutral = spec.visual_scale * neutral_vector(spec.visual_dim)
    return Lexicon(objects, fillers, translation, homophones, acoustic, visual, neutral)


def _sentence(rng, spec: CorpusSpec, lex: Lexicon) -> tuple[list, str | None]:
    n = int(rng.integers(spec.min_words, spec.max_words + 1))
    obj_pos = int(rng.integers(n)) if rng.random() < spec.object_prob else -1
    obj = lex.objects[int(rng.integers(len(lex.objects)))] if obj_pos >= 0 else None
    words = []
    for i in range(n):
        if i == obj_pos:
            words.append(obj)
            continue
        while True:
            w = lex.fillers[int(rng.integers(len(lex.fillers)))]
            if not words or w != words[-1]:
                break
        words.append(w)
    return words, obj


def _make_sample(rng, spec, lex, sample_id) -> MultimodalSample:
    words, obj = _sentence(rng, spec, lex)
    frames = []
    for w in words:
        # one realisation per word occurrence, held for frames_per_subunit frames
        real = lex.acoustic[w] + rng.standard_normal(spec.frame_dim) * spec.acoustic_noise_std
        frames.extend([real] * spec.frames_per_subunit)
    base = lex.visual[obj] if obj is not None else lex.neutral
    visual = base + rng.standard_normal(spec.visual_dim) * spec.visual_noise_std
    return MultimodalSample(
        sample_id=sample_id,
        src_lang=spec.src_lang,
        tgt_lang=spec.tgt_lang,
        text_src=" ".join(words),
        text_tgt=" ".join(lex.translation[w] for w in words),
        visual_feature=visual,
        frames=np.asarray(frames),
    )


SPLITS = ("train", "dev", "test")


def generate(spec: CorpusSpec) -> dict:
    """Build {train, dev, test} sample lists; each split draws from its own subseed."""
    lex = build_lexicon(spec)
    sizes = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    out = {}
    for i, split in enumerate(SPLITS):
        rng = np.random.default_rng([spec.seed, i])
        out[split] = [_make_sample(rng, spec, lex, f"{split}-{j:05d}") for j in range(sizes[split])]
    return out


def write_corpus(spec: CorpusSpec, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = generate(spec)
    files = {}
    for split, samples in splits.items():
        path = out_dir / f"{split}.jsonl"
        write_jsonl(path, samples)
        files[split] = path.name
    manifest = {
        "spec": asdict(spec),
        "seed": spec.seed,
        "files": files,
        "lexicon": build_lexicon(spec).to_json(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return json.loads(path.read_text())


def ambiguity_bound(samples, lexicon_json: dict) -> float:
    """Best achievable audio-only accuracy on object words.

    Each homophone occurrence is a coin flip between two acoustically identical
    words, so expected accuracy is 1 - homophone_occurrences / (2 * object_occurrences).
    """
    objects = set(lexicon_json["object_words"])
    homo = {w for pair in lexicon_json["homophone_pairs"] for w in pair}
    n_obj = n_homo = 0
    for s in samples:
        for w in s.text_src.split():
            n_obj += w in objects
            n_homo += w in homo
    if n_obj == 0:
        return 1.0
    return 1.0 - n_homo / (2 * n_obj)
