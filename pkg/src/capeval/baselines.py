"""Reference baseline scorers: BLEU and sentence-averaged cosine.

The sentence splitter is deliberately naive and pinned by golden tests;
baseline scores depend on it, so its rule is part of the contract:
split after '.', '!' or '?' when followed by whitespace and an uppercase
letter, or at end of text.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, ValidationError

_TERMINATORS = frozenset(".!?")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip per-token edge punctuation."""
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and unicodedata.category(raw[start]).startswith("P"):
            start += 1
        while end > start and unicodedata.category(raw[end - 1]).startswith("P"):
            end -= 1
        if end > start:
            tokens.append(raw[start:end])
    return tokens


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidate: Sequence[str],
    references: Sequence[Sequence[str]],
    max_order: int = 4,
) -> float:
    """Geometric mean of clipped n-gram precisions times the brevity penalty.

    No smoothing: any zero precision zeroes the score. Orders longer than
    the candidate are skipped so a candidate identical to one of its
    references always scores 1. The brevity penalty uses the reference
    whose length is closest to the candidate (ties prefer the shorter).
    """
    if not candidate:
        raise ValidationError("candidate must be non-empty")
    if not references:
        raise ValidationError("need at least one reference")
    if max_order < 1:
        raise ValidationError("max_order must be >= 1")

    c = len(candidate)
    orders = range(1, min(max_order, c) + 1)
    log_sum = 0.0
    for n in orders:
        counts = ngram_counts(candidate, n)
        max_ref = Counter()
        for ref in references:
            for gram, k in ngram_counts(ref, n).items():
                if k > max_ref[gram]:
                    max_ref[gram] = k
        clipped = sum(min(k, max_ref[gram]) for gram, k in counts.items())
        total = sum(counts.values())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    precision = math.exp(log_sum / len(list(orders)))

    r = min((len(ref) for ref in references), key=lambda L: (abs(L - c), L))
    bp = min(1.0, math.exp(1.0 - r / c))
    return bp * precision


def sentence_spans(paragraph: str) -> list[str]:
    """Exact-cover spans: each span ends after a sentence terminator (plus
    any following whitespace); concatenating the spans reproduces the
    paragraph byte for byte."""
    if not paragraph:
        raise ValidationError("paragraph must be non-empty")
    spans = []
    start = 0
    i = 0
    n = len(paragraph)
    while i < n:
        ch = paragraph[i]
        if ch in _TERMINATORS:
            j = i + 1
            while j < n and paragraph[j].isspace():
                j += 1
            if j >= n or paragraph[j].isupper():
                spans.append(paragraph[start:j])
                start = j
                i = j
                continue
        i += 1
    if start < n:
        spans.append(paragraph[start:])
    return spans


def sentence_split(paragraph: str) -> list[str]:
    """Stripped, non-empty sentences; whole paragraph if no boundary."""
    return [s for s in (span.strip() for span in sentence_spans(paragraph)) if s]


def avg_segment_cosine(
    image_vec: Sequence[float], sentence_vecs: Sequence[Sequence[float]]
) -> float:
    """Mean cosine similarity between the image and each sentence vector."""
    img = np.asarray(image_vec, dtype=np.float64)
    if img.ndim != 1:
        raise ValidationError("image vector must be one-dimensional")
    img_norm = np.linalg.norm(img)
    if img_norm == 0.0:
        raise ValidationError("image vector has zero norm")
    if len(sentence_vecs) == 0:
        raise ValidationError("need at least one sentence vector")
    cosines = []
    for i, sv in enumerate(sentence_vecs):
        v = np.asarray(sv, dtype=np.float64)
        if v.shape != img.shape:
            raise DimensionMismatchError(
                f"sentence vector {i} has dim {v.shape}, image has {img.shape}"
            )
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValidationError(f"sentence vector {i} has zero norm")
        cosines.append(float(img @ v / (img_norm * norm)))
    return math.fsum(cosines) / len(cosines)
