"""Plain ROUGE-N (no stemming, no stopword removal)."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

TokenSequence = tuple[str, ...]

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> TokenSequence:
    """Lowercase and split on every run of non-alphanumeric characters."""
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class RougeScore:
    recall: float
    precision: float
    f1: float

    @classmethod
    def from_pr(cls, recall: float, precision: float) -> "RougeScore":
        total = precision + recall
        f1 = 2 * precision * recall / total if total > 0 else 0.0
        return cls(recall, precision, f1)

    def to_dict(self) -> dict:
        return {"recall": self.recall, "precision": self.precision, "f1": self.f1}


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(reference: str, candidate: str, n: int) -> RougeScore:
    if n < 1:
        raise ValueError("n must be >= 1")
    ref = ngrams(tokenize(reference), n)
    cand = ngrams(tokenize(candidate), n)
    overlap = sum((ref & cand).values())
    ref_total = sum(ref.values())
    cand_total = sum(cand.values())
    recall = overlap / ref_total if ref_total else 0.0
    precision = overlap / cand_total if cand_total else 0.0
    return RougeScore.from_pr(recall, precision)


def pairwise_agreement(texts: Sequence[str]) -> list[float]:
    """For each text, the summed unigram recall of every other text against it.

    ``texts[e]`` plays the reference role and ``texts[j]`` the candidate.
    """
    if not texts:
        raise ValueError("need at least one text")
    return [
        sum((rouge_n(ref, cand, 1).recall for j, cand in enumerate(texts) if j != e), 0.0)
        for e, ref in enumerate(texts)
    ]
