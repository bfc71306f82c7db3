"""Corpus-level BLEU with clipped n-gram precision and brevity penalty."""

from __future__ import annotations

import math
from collections import Counter

from .errors import DataError

MAX_ORDER = 4


def ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: list[list[str]], references: list[list[str]]) -> float:
    """BLEU-4 over a corpus, case-insensitive, scaled to 0..100.

    Precision counts are clipped against the reference, accumulated over the
    corpus, and combined geometrically; a hypothesis corpus shorter than the
    reference pays exp(1 - ref_len/hyp_len).  Orders the hypothesis corpus
    is too short to produce drop out of the mean; any produced order with
    zero matches yields 0 (no smoothing).
    """
    if len(hypotheses) != len(references):
        raise DataError(
            f"{len(hypotheses)} hypotheses against {len(references)} references")
    if not hypotheses:
        raise DataError("BLEU of an empty corpus is undefined")
    matched = [0] * MAX_ORDER
    possible = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = [t.lower() for t in hyp]
        ref = [t.lower() for t in ref]
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            counts = ngram_counts(hyp, n)
            if not counts:
                continue
            ref_counts = ngram_counts(ref, n)
            possible[n - 1] += sum(counts.values())
            matched[n - 1] += sum(min(c, ref_counts[g]) for g, c in counts.items())
    orders = [(m, p) for m, p in zip(matched, possible) if p > 0]
    if hyp_len == 0 or not orders or any(m == 0 for m, _ in orders):
        return 0.0
    log_prec = sum(math.log(m / p) for m, p in orders) / len(orders)
    bp = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(log_prec)
