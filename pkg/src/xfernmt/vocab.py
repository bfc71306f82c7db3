"""Vocabularies and the plain-text corpus format.

Corpora are UTF-8 text, one sentence per line, whitespace-tokenized; parallel
files are aligned by line number.  A vocabulary maps word types to integer
ids with four reserved ids at the front:

    0 <pad>   1 <unk>   2 <s>   3 </s>

Vocabulary files list one type per line; a type's id is its line number plus
the number of reserved ids.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError, VocabularyError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")
N_RESERVED = len(RESERVED)


@dataclass
class Vocabulary:
    """Bijection between non-reserved word types and ids >= N_RESERVED."""

    types: list[str]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {t: i + N_RESERVED for i, t in enumerate(self.types)}
        if len(self._index) != len(self.types):
            raise VocabularyError("duplicate types in vocabulary")
        for t in self.types:
            if t in RESERVED:
                raise VocabularyError(f"reserved token {t!r} listed as a plain type")

    def __len__(self) -> int:
        return N_RESERVED + len(self.types)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.types == other.types

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def token_of(self, idx: int) -> str:
        if 0 <= idx < N_RESERVED:
            return RESERVED[idx]
        if idx < len(self):
            return self.types[idx - N_RESERVED]
        raise VocabularyError(f"id {idx} out of range for vocabulary of size {len(self)}")

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.token_of(i) for i in ids]

    @classmethod
    def from_corpus(cls, sentences: list[list[str]], max_size: int | None = None) -> "Vocabulary":
        """Build by frequency; ties broken lexicographically for determinism."""
        counts = Counter()
        for sent in sentences:
            counts.update(sent)
        for r in RESERVED:
            counts.pop(r, None)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - N_RESERVED)]
        return cls([t for t, _ in ranked])

    def save(self, path: str) -> None:
        from .ioutil import atomic_write_text

        atomic_write_text(path, "".join(t + "\n" for t in self.types))

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            types = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(types)


def read_corpus(path: str) -> list[list[str]]:
    """Read a tokenized corpus file; empty lines become empty sentences."""
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f]


def write_corpus(path: str, sentences: list[list[str]]) -> None:
    from .ioutil import atomic_write_text

    atomic_write_text(path, "".join(" ".join(s) + "\n" for s in sentences))


def encode_pairs(
    src_sents: list[list[str]],
    tgt_sents: list[list[str]],
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
) -> list[tuple[list[int], list[int]]]:
    """Id-encode a parallel corpus, dropping pairs with an empty side."""
    if len(src_sents) != len(tgt_sents):
        raise DataError(f"parallel files differ in length: {len(src_sents)} vs {len(tgt_sents)}")
    pairs = []
    for src, tgt in zip(src_sents, tgt_sents):
        if not src or not tgt:
            continue
        pairs.append((src_vocab.encode(src), tgt_vocab.encode(tgt)))
    return pairs
