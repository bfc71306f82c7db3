"""Synthetic corpus generators: copy, scramble, relabeled-vocabulary and a
toy bitext language with a known translation rule.

The toy bitext pairs a seeded bigram target process with a deterministic
type-level dictionary plus a local reordering rule on the source side, so a
rule-based oracle can translate it perfectly and a learned model's headroom
is known exactly.  Languages are identified by their seeds: two specs with
the same target seed share a target language; changing the mapping seed or
the reorder rule yields a different source language over the same meaning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

REORDER_RULES = ("none", "swap", "reverse")


def permute_vocabulary(corpus: list[list[str]], seed) -> tuple[list[list[str]], dict[str, str]]:
    """Relabel every type in the corpus through one uniform random bijection.

    Returns the rewritten corpus and the bijection, so callers can invert it.
    """
    types = sorted({t for line in corpus for t in line})
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(types))
    bijection = {types[i]: types[perm[i]] for i in range(len(types))}
    return [[bijection[t] for t in line] for line in corpus], bijection


def make_copy_corpus(mono: list[list[str]]) -> list[tuple[list[str], list[str]]]:
    """Pair every sentence with itself."""
    return [(list(s), list(s)) for s in mono]


def make_perm_corpus(mono: list[list[str]], seed) -> list[tuple[list[str], list[str]]]:
    """Pair a seeded uniform shuffle of every sentence with the original."""
    rng = np.random.default_rng(seed)
    out = []
    for s in mono:
        order = rng.permutation(len(s))
        out.append(([s[i] for i in order], list(s)))
    return out


@dataclass(frozen=True)
class GrammarSpec:
    """Identity of one toy language pair.

    ``tgt_seed`` fixes the target bigram process, ``src_map_seed`` the
    type-level dictionary, ``reorder`` the deterministic local rule applied
    to the mapped source.  Specs sharing ``tgt_seed`` translate the same
    meanings.
    """

    vocab_size: int = 12
    min_len: int = 3
    max_len: int = 8
    branching: int = 3
    tgt_seed: int = 7
    src_map_seed: int = 11
    reorder: str = "swap"
    src_prefix: str = "s"

    def __post_init__(self):
        if self.vocab_size < 2:
            raise DataError(f"need at least 2 word types, got {self.vocab_size}")
        if not 1 <= self.min_len <= self.max_len:
            raise DataError(f"bad length range [{self.min_len}, {self.max_len}]")
        if not 1 <= self.branching <= self.vocab_size:
            raise DataError(f"branching {self.branching} outside [1, {self.vocab_size}]")
        if self.reorder not in REORDER_RULES:
            raise DataError(f"unknown reorder rule {self.reorder!r}")

    # -- target process -------------------------------------------------------

    def target_types(self) -> list[str]:
        return [f"w{i:03d}" for i in range(self.vocab_size)]

    def target_process(self) -> tuple[np.ndarray, np.ndarray]:
        """(start probabilities (V,), transition matrix (V, V)) of the
        target bigram process, fully determined by tgt_seed."""
        rng = np.random.default_rng([self.tgt_seed, 0])
        V, K = self.vocab_size, self.branching

        def sparse_row() -> np.ndarray:
            succ = rng.choice(V, size=K, replace=False)
            w = rng.uniform(0.5, 1.5, size=K)
            row = np.zeros(V)
            row[succ] = w / w.sum()
            return row

        start = sparse_row()
        trans = np.stack([sparse_row() for _ in range(V)])
        return start, trans

    # -- dictionary and reordering --------------------------------------------

    def source_map(self) -> dict[str, str]:
        """Deterministic type-level dictionary from target to source types."""
        perm = np.random.default_rng([self.src_map_seed, 1]).permutation(self.vocab_size)
        return {f"w{i:03d}": f"{self.src_prefix}{perm[i]:03d}" for i in range(self.vocab_size)}

    def apply_reorder(self, tokens: list[str]) -> list[str]:
        if self.reorder == "none":
            return list(tokens)
        if self.reorder == "reverse":
            return list(reversed(tokens))
        out = list(tokens)
        for i in range(0, len(out) - 1, 2):
            out[i], out[i + 1] = out[i + 1], out[i]
        return out


def gen_toy_bitext(spec: GrammarSpec, count: int, seed) -> list[tuple[list[str], list[str]]]:
    """Sample ``count`` parallel sentences from the toy language."""
    if count < 0:
        raise DataError(f"count must be >= 0, got {count}")
    start, trans = spec.target_process()
    types = spec.target_types()
    mapping = spec.source_map()
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        ids = [int(rng.choice(spec.vocab_size, p=start))]
        while len(ids) < length:
            ids.append(int(rng.choice(spec.vocab_size, p=trans[ids[-1]])))
        tgt = [types[i] for i in ids]
        src = spec.apply_reorder([mapping[t] for t in tgt])
        pairs.append((src, tgt))
    return pairs


def oracle_translate(spec: GrammarSpec, src_tokens: list[str]) -> list[str]:
    """Invert the generation rule exactly: undo the reorder, then the map.

    Both reorder rules are involutions, so undoing is re-applying.  Unknown
    source tokens are rejected; the oracle only covers the toy language.
    """
    inverse = {s: t for t, s in spec.source_map().items()}
    unordered = spec.apply_reorder(src_tokens)
    missing = [t for t in unordered if t not in inverse]
    if missing:
        raise DataError(f"tokens outside the toy language: {missing[:3]}")
    return [inverse[t] for t in unordered]


def true_corpus_ppl(spec: GrammarSpec, corpus: list[list[str]]) -> float:
    """Perplexity of target sentences under the generating process itself.

    Includes the end-of-sentence factor: a sentence of length L costs
    log P(L) on top of its bigram factors, amortized over L + 1 predicted
    tokens.  No autoregressive model can beat this on data the process
    generated.
    """
    start, trans = spec.target_process()
    index = {t: i for i, t in enumerate(spec.target_types())}
    n_lengths = spec.max_len - spec.min_len + 1
    total_nll = 0.0
    total_tokens = 0
    for sent in corpus:
        ids = [index[t] for t in sent]
        lp = math.log(start[ids[0]]) + math.log(1.0 / n_lengths)
        for a, b in zip(ids, ids[1:]):
            lp += math.log(trans[a, b])
        total_nll -= lp
        total_tokens += len(sent) + 1
    return math.exp(total_nll / total_tokens)
