"""Word error rate and corpus BLEU."""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import EmptyInput, EmptyReference, LengthMismatch

BLEU_SMOOTHING = "add-one on n-gram precisions for n >= 2"
_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def normalize(text: str, lowercase: bool = False, strip_punct: bool = False) -> str:
    if lowercase:
        text = text.lower()
    if strip_punct:
        text = _PUNCT.sub("", text)
    return " ".join(text.split())


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    insertions: int
    deletions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        return 100.0 * self.errors / self.ref_len

    def to_json(self) -> dict:
        return {**asdict(self), "wer": self.wer}


def edit_ops(hyp: Sequence[str], ref: Sequence[str]) -> tuple[int, int, int]:
    """Levenshtein alignment of ``hyp`` against ``ref`` with unit costs.

    Returns (substitutions, insertions, deletions). When several alignments have
    the same cost the backtrace takes the diagonal first, then an insertion,
    then a deletion.
    """
    n, m = len(hyp), len(ref)
    # dist[i][j]: cost of aligning hyp[:i] with ref[:j]
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev = dist[i], dist[i - 1]
        h = hyp[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (h != ref[j - 1])
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        cur = dist[i][j]
        if i > 0 and j > 0 and cur == dist[i - 1][j - 1] + (hyp[i - 1] != ref[j - 1]):
            subs += hyp[i - 1] != ref[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cur == dist[i - 1][j] + 1:
            ins += 1
            i -= 1
        else:
            dels += 1
            j -= 1
    return subs, ins, dels


def wer(hypothesis: str, reference: str, lowercase: bool = False, strip_punct: bool = False) -> WerBreakdown:
    ref = normalize(reference, lowercase, strip_punct).split()
    if not ref:
        raise EmptyReference("reference has no words")
    hyp = normalize(hypothesis, lowercase, strip_punct).split()
    s, i, d = edit_ops(hyp, ref)
    return WerBreakdown(s, i, d, len(ref))


def corpus_wer(hypotheses: Sequence[str], references: Sequence[str], **kw) -> WerBreakdown:
    """Pool edit counts over a corpus; the rate is total errors over total reference words."""
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not references:
        raise EmptyInput("no sentence pairs")
    s = i = d = n = 0
    for hyp, ref in zip(hypotheses, references):
        b = wer(hyp, ref, **kw)
        s, i, d, n = s + b.substitutions, i + b.insertions, d + b.deletions, n + b.ref_len
    return WerBreakdown(s, i, d, n)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[k : k + n]) for k in range(len(tokens) - n + 1))


def bleu_stats(hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4, **kw) -> dict:
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EmptyInput("no sentence pairs")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = normalize(hyp, **kw).split()
        r = normalize(ref, **kw).split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return {"matches": matches, "totals": totals, "hyp_len": hyp_len, "ref_len": ref_len}


def bleu(hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4, **kw) -> float:
    """Corpus BLEU-4 on a 0-100 scale with uniform weights and a brevity penalty."""
    st = bleu_stats(hypotheses, references, max_n, **kw)
    if st["hyp_len"] == 0 or st["matches"][0] == 0:
        return 0.0
    log_p = math.log(st["matches"][0] / st["totals"][0])
    for n in range(1, max_n):
        log_p += math.log((st["matches"][n] + 1) / (st["totals"][n] + 1))
    c, r = st["hyp_len"], st["ref_len"]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p / max_n)
