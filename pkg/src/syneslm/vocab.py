"""Unified speech-text vocabulary and task-specific sequence layout.

Id layout is ``[specials][text][dst]``. Tasks are encoded by which special
tokens appear in the prompt:

    speech input: <SOS> [<IMG>] <SOSP> <src> dst... <GT> <tgt> text... <EOS>
    text input:   <SOS> [<IMG>] <SOT>  <src> text... <GT> <tgt> text... <EOS>

ASR is the speech route with ``src == tgt``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DuplicateLanguage, MalformedSequence, MissingModality, UnknownLanguage
from .tokenizer import BpeModel

BASE_SPECIALS = ("<SOS>", "<EOS>", "<IMG>", "<SOT>", "<SOSP>", "<GT>", "<PAD>")


class Task(str, Enum):
    ASR = "asr"
    AVASR = "avasr"
    ST = "st"
    VST = "vst"
    MT = "mt"
    VMT = "vmt"

    @property
    def speech(self) -> bool:
        return self in (Task.ASR, Task.AVASR, Task.ST, Task.VST)

    @property
    def visual(self) -> bool:
        return self in (Task.AVASR, Task.VST, Task.VMT)

    @property
    def same_language(self) -> bool:
        return self in (Task.ASR, Task.AVASR)

    @property
    def metric(self) -> str:
        return "wer" if self.same_language else "bleu"

    @classmethod
    def parse(cls, name) -> "Task":
        if isinstance(name, Task):
            return name
        return cls(str(name).lower().replace("-", ""))


_TASK_TABLE = {
    (False, True, True): Task.ASR,
    (True, True, True): Task.AVASR,
    (False, True, False): Task.ST,
    (True, True, False): Task.VST,
    (False, False, False): Task.MT,
    (True, False, False): Task.VMT,
}


def lang_token(code: str) -> str:
    return f"<{code.upper()}>"


@dataclass(frozen=True)
class Vocabulary:
    special: dict
    txt_start: int
    n_txt: int
    dst_start: int
    n_dst: int
    languages: tuple

    @property
    def total_size(self) -> int:
        return self.dst_start + self.n_dst

    @property
    def txt_range(self) -> tuple[int, int]:
        return self.txt_start, self.txt_start + self.n_txt

    @property
    def dst_range(self) -> tuple[int, int]:
        return self.dst_start, self.dst_start + self.n_dst

    def __getitem__(self, name: str) -> int:
        return self.special[name]

    @property
    def pad(self) -> int:
        return self.special["<PAD>"]

    def lang_id(self, code: str) -> int:
        try:
            return self.special[lang_token(code)]
        except KeyError:
            raise UnknownLanguage(f"language {code!r} not configured") from None

    def lang_code(self, token_id: int) -> Optional[str]:
        for code in self.languages:
            if self.special[lang_token(code)] == token_id:
                return code
        return None

    def is_text(self, i: int) -> bool:
        return self.txt_start <= i < self.txt_start + self.n_txt

    def is_dst(self, i: int) -> bool:
        return self.dst_start <= i < self.dst_start + self.n_dst

    def text_mask(self) -> np.ndarray:
        """Boolean mask of ids a text decoder may emit: text ids and ``<EOS>``."""
        m = np.zeros(self.total_size, dtype=bool)
        m[self.txt_start : self.txt_start + self.n_txt] = True
        m[self.special["<EOS>"]] = True
        return m

    def to_json(self) -> dict:
        return {
            "specials": dict(self.special),
            "txt_start": self.txt_start,
            "dst_start": self.dst_start,
            "total": self.total_size,
            "languages": list(self.languages),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(
            special=dict(obj["specials"]),
            txt_start=obj["txt_start"],
            n_txt=obj["dst_start"] - obj["txt_start"],
            dst_start=obj["dst_start"],
            n_dst=obj["total"] - obj["dst_start"],
            languages=tuple(obj["languages"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_vocab(bpe: BpeModel, k: int, languages: Sequence[str]) -> Vocabulary:
    if k < 1:
        raise ValueError("dst count must be positive")
    if not languages:
        raise ValueError("at least one language required")
    codes = [c.lower() for c in languages]
    if len(set(codes)) != len(codes):
        raise DuplicateLanguage(f"duplicate language in {list(languages)}")
    names = list(BASE_SPECIALS) + [lang_token(c) for c in codes]
    special = {name: i for i, name in enumerate(names)}
    txt_start = len(special)
    return Vocabulary(
        special=special,
        txt_start=txt_start,
        n_txt=bpe.n_ids,
        dst_start=txt_start + bpe.n_ids,
        n_dst=k,
        languages=tuple(codes),
    )


@dataclass
class MultimodalSample:
    sample_id: str
    src_lang: str
    tgt_lang: str
    text_src: str = ""
    text_tgt: str = ""
    dst_tokens: Optional[list] = None
    visual_feature: Optional[np.ndarray] = None
    frames: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class AssembledSequence:
    ids: np.ndarray
    loss_mask: np.ndarray
    prompt_len: int
    img_slot: Optional[int] = None
    task: Optional[Task] = None

    @property
    def n_target(self) -> int:
        return int(self.loss_mask.sum())

    def prompt(self) -> np.ndarray:
        return self.ids[: self.prompt_len]

    def target(self) -> np.ndarray:
        return self.ids[self.prompt_len :]


def prompt_ids(task: Task, vocab: Vocabulary, src_lang: str, tgt_lang: str, source_ids: Sequence[int]) -> list[int]:
    ids = [vocab["<SOS>"]]
    if task.visual:
        ids.append(vocab["<IMG>"])
    ids.append(vocab["<SOSP>"] if task.speech else vocab["<SOT>"])
    ids.append(vocab.lang_id(src_lang))
    ids.extend(int(i) for i in source_ids)
    ids.append(vocab["<GT>"])
    ids.append(vocab.lang_id(tgt_lang))
    return ids


def assemble(sample: MultimodalSample, task, vocab: Vocabulary, bpe: BpeModel) -> AssembledSequence:
    task = Task.parse(task)
    src = sample.src_lang
    tgt = src if task.same_language else sample.tgt_lang
    vocab.lang_id(src)
    vocab.lang_id(tgt)
    if not task.same_language and src == tgt:
        raise MalformedSequence(f"{task.value} needs distinct source and target languages")

    if task.speech:
        if sample.dst_tokens is None or len(sample.dst_tokens) == 0:
            raise MissingModality(f"{sample.sample_id}: {task.value} needs speech tokens")
        source = [vocab.dst_start + int(d) for d in sample.dst_tokens]
        if any(not vocab.is_dst(i) for i in source):
            raise MalformedSequence(f"{sample.sample_id}: dst token outside codebook range")
    else:
        if not sample.text_src:
            raise MissingModality(f"{sample.sample_id}: {task.value} needs source text")
        source = [vocab.txt_start + i for i in bpe.encode(sample.text_src)]
    if task.visual and sample.visual_feature is None:
        raise MissingModality(f"{sample.sample_id}: {task.value} needs a visual feature")

    target_text = sample.text_src if task.same_language else sample.text_tgt
    target = [vocab.txt_start + i for i in bpe.encode(target_text)]

    prompt = prompt_ids(task, vocab, src, tgt, source)
    ids = prompt + target + [vocab["<EOS>"]]
    mask = np.zeros(len(ids), dtype=bool)
    mask[len(prompt) :] = True
    return AssembledSequence(
        ids=np.asarray(ids, dtype=np.int64),
        loss_mask=mask,
        prompt_len=len(prompt),
        img_slot=1 if task.visual else None,
        task=task,
    )


@dataclass(frozen=True)
class ParsedSequence:
    task: Task
    src_lang: str
    tgt_lang: str
    source: tuple  # (start, end) of the source span
    prompt_len: int
    target: tuple  # (start, end) of target text, excluding <EOS>
    has_eos: bool


def parse(ids: Sequence[int], vocab: Vocabulary) -> ParsedSequence:
    ids = [int(i) for i in ids]
    if not ids or ids[0] != vocab["<SOS>"]:
        raise MalformedSequence("sequence must start with <SOS>")
    pos = 1
    has_img = len(ids) > pos and ids[pos] == vocab["<IMG>"]
    pos += has_img
    if len(ids) <= pos + 1:
        raise MalformedSequence("truncated prompt")
    if ids[pos] == vocab["<SOSP>"]:
        speech = True
    elif ids[pos] == vocab["<SOT>"]:
        speech = False
    else:
        raise MalformedSequence("expected <SOSP> or <SOT> after <SOS>/<IMG>")
    src = vocab.lang_code(ids[pos + 1])
    if src is None:
        raise MalformedSequence("missing source language token")
    start = pos + 2
    try:
        gt = ids.index(vocab["<GT>"], start)
    except ValueError:
        raise MalformedSequence("missing <GT>") from None
    in_range = vocab.is_dst if speech else vocab.is_text
    if any(not in_range(i) for i in ids[start:gt]):
        raise MalformedSequence("source span mixes vocabulary classes")
    if gt + 1 >= len(ids):
        raise MalformedSequence("missing target language token")
    tgt = vocab.lang_code(ids[gt + 1])
    if tgt is None:
        raise MalformedSequence("missing target language token")
    task = _TASK_TABLE.get((has_img, speech, src == tgt))
    if task is None:
        raise MalformedSequence("text input with identical source and target language")
    prompt_len = gt + 2
    eos = vocab["<EOS>"]
    end = ids.index(eos, prompt_len) if eos in ids[prompt_len:] else len(ids)
    if any(not vocab.is_text(i) for i in ids[prompt_len:end]):
        raise MalformedSequence("target span contains non-text ids")
    return ParsedSequence(task, src, tgt, (start, gt), prompt_len, (prompt_len, end), end < len(ids))
