"""Greedy CTC decoding and word error rate."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .model import WORD_SEPARATOR, Vocab


def collapse(ids: Sequence[int], blank_index: int) -> list[int]:
    """Best-path rule: merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for i in ids:
        if i != prev and i != blank_index:
            out.append(int(i))
        prev = i
    return out


def greedy_decode(posteriors: np.ndarray, vocab: Vocab) -> str:
    ids = np.argmax(posteriors, axis=-1)
    chars = []
    for i in collapse(ids.tolist(), vocab.blank_index):
        tok = vocab.tokens[i]
        chars.append(" " if tok == WORD_SEPARATOR else tok)
    return "".join(chars)


def edit_distance(hyp: Sequence[str], ref: Sequence[str]) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i]
        for j, r in enumerate(ref, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r)))
        prev = cur
    return prev[-1]


def word_errors(hypothesis: str, reference: str) -> tuple[int, int]:
    """Return ``(edit distance, reference word count)`` over whitespace-split words."""
    ref = reference.split()
    if not ref:
        raise InvalidArgument("reference transcript has no words")
    return edit_distance(hypothesis.split(), ref), len(ref)


def word_error_rate(hypothesis: str, reference: str) -> float:
    errors, words = word_errors(hypothesis, reference)
    return errors / words


def corpus_wer(pairs: Sequence[tuple[str, str]]) -> float:
    """Total edit distance over total reference words."""
    errors = words = 0
    for hyp, ref in pairs:
        e, n = word_errors(hyp, ref)
        errors += e
        words += n
    return errors / words if words else 0.0
