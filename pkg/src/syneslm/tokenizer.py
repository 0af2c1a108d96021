"""Byte-pair-encoding subword tokenizer.

Words are split on whitespace and the final symbol of every word carries the
``</w>`` marker, so decoding can put the spaces back. Text ids are local to the
tokenizer: id 0 is ``<UNK>`` and ids ``1..len(vocab)`` index ``vocab``. The
unified vocabulary shifts them into its text range.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyCorpus, IdOutOfRange, VocabTooSmall

END_OF_WORD = "</w>"
UNK = "<UNK>"
UNK_ID = 0
FORMAT_VERSION = 1


def _split_word(word: str) -> tuple[str, ...]:
    chars = list(word)
    chars[-1] = chars[-1] + END_OF_WORD
    return tuple(chars)


def _merge_symbols(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(pair[0] + pair[1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]
    vocab: tuple[str, ...]
    vocab_size: int = 3000
    _index: dict = field(init=False, repr=False, compare=False)
    _ranks: dict = field(init=False, repr=False, compare=False)
    _cache: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i + 1 for i, s in enumerate(self.vocab)})
        object.__setattr__(self, "_ranks", {tuple(m): r for r, m in enumerate(self.merges)})
        object.__setattr__(self, "_cache", {})

    @property
    def n_ids(self) -> int:
        """Number of text ids including ``<UNK>``."""
        return len(self.vocab) + 1

    def token(self, idx: int) -> str:
        if idx == UNK_ID:
            return UNK
        if not 0 < idx <= len(self.vocab):
            raise IdOutOfRange(f"text id {idx} outside [0, {self.n_ids})")
        return self.vocab[idx - 1]

    def _segment(self, word: str) -> tuple[str, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = _split_word(word)
        while len(symbols) > 1:
            best = None
            for pair in zip(symbols, symbols[1:]):
                rank = self._ranks.get(pair)
                if rank is not None and (best is None or rank < best[0]):
                    best = (rank, pair)
            if best is None:
                break
            symbols = _merge_symbols(symbols, best[1])
        self._cache[word] = symbols
        return symbols

    def encode(self, text: str) -> list[int]:
        ids = []
        for word in text.split():
            for sym in self._segment(word):
                ids.append(self._index.get(sym, UNK_ID))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        pieces = [self.token(int(i)) for i in ids]
        text = "".join(p if p != UNK else UNK + END_OF_WORD for p in pieces)
        return text.replace(END_OF_WORD, " ").strip()

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "vocab_size": self.vocab_size,
            "vocab": list(self.vocab),
            "merges": [list(m) for m in self.merges],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BpeModel":
        return cls(
            merges=tuple(tuple(m) for m in obj["merges"]),
            vocab=tuple(obj["vocab"]),
            vocab_size=int(obj.get("vocab_size", len(obj["vocab"]))),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def train_bpe(corpus: Sequence[str], vocab_size: int = 3000) -> BpeModel:
    """Learn merges greedily by pair frequency.

    Ties between equally frequent pairs go to the lexicographically smallest
    merged string, which makes training fully deterministic.
    """
    word_counts = Counter(w for line in corpus for w in line.split())
    if not word_counts:
        raise EmptyCorpus("corpus contains no words")

    words = {_split_word(w): c for w, c in word_counts.items()}
    base = sorted({s for symbols in words for s in symbols})
    if vocab_size < len(base):
        raise VocabTooSmall(f"vocab_size {vocab_size} < {len(base)} base symbols")

    vocab = list(base)
    merges = []
    while len(vocab) < vocab_size:
        pairs = Counter()
        for symbols, count in words.items():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += count
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0][0] + kv[0][1], kv[0]))[0]
        merges.append(best)
        merged = best[0] + best[1]
        if merged not in vocab:
            vocab.append(merged)
        words = {_merge_symbols(s, best): c for s, c in words.items()}
    return BpeModel(merges=tuple(merges), vocab=tuple(vocab), vocab_size=vocab_size)


def encode_text(model: BpeModel, text: str) -> list[int]:
    return model.encode(text)


def decode_text(model: BpeModel, ids: Sequence[int]) -> str:
    return model.decode(ids)
