"""N-best list parsing, neural feature scoring, weight tuning and reranking.

The list format is one entry per line:

    sentence_id ||| token sequence ||| name=value feature pairs ||| total

The trailing total is the external system's own score and is carried as the
feature named "external".  Reranking scores each entry as the weighted sum
of its features; tuning grid-searches interpolation weights on the simplex
to maximize corpus BLEU of the reranked 1-best.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

from .errors import DataError
from .evalkit import bleu
from .ioutil import atomic_write_text

EXTERNAL_FEATURE = "external"
SEP = " ||| "


@dataclass
class NBestEntry:
    sid: int
    tokens: list[str]
    features: dict[str, float]
    rank: int  # 1-based position within its sentence's original list


@dataclass
class NBestList:
    entries: list[NBestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen: dict[int, set[int]] = {}
        for e in self.entries:
            ranks = seen.setdefault(e.sid, set())
            if e.rank in ranks:
                raise DataError(f"duplicate rank {e.rank} for sentence {e.sid}")
            ranks.add(e.rank)

    def sids(self) -> list[int]:
        return sorted({e.sid for e in self.entries})

    def group(self, sid: int) -> list[NBestEntry]:
        return sorted((e for e in self.entries if e.sid == sid), key=lambda e: e.rank)

    def __len__(self) -> int:
        return len(self.entries)


def read_nbest(path: str) -> NBestList:
    entries: list[NBestEntry] = []
    next_rank: dict[int, int] = {}
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split(SEP)
            if len(parts) != 4:
                raise DataError(f"{path}:{ln}: expected 4 fields, got {len(parts)}")
            sid_s, tok_s, feat_s, total_s = parts
            try:
                sid = int(sid_s)
            except ValueError:
                raise DataError(f"{path}:{ln}: bad sentence id {sid_s!r}") from None
            tokens = tok_s.split()
            if not tokens:
                raise DataError(f"{path}:{ln}: empty hypothesis")
            features: dict[str, float] = {}
            for pair in feat_s.split():
                name, eq, value = pair.partition("=")
                if not eq or not name:
                    raise DataError(f"{path}:{ln}: bad feature pair {pair!r}")
                try:
                    features[name] = float(value)
                except ValueError:
                    raise DataError(f"{path}:{ln}: bad feature value {pair!r}") from None
            if EXTERNAL_FEATURE in features:
                raise DataError(
                    f"{path}:{ln}: feature name {EXTERNAL_FEATURE!r} is reserved for the total")
            try:
                features[EXTERNAL_FEATURE] = float(total_s)
            except ValueError:
                raise DataError(f"{path}:{ln}: bad total {total_s!r}") from None
            rank = next_rank.get(sid, 0) + 1
            next_rank[sid] = rank
            entries.append(NBestEntry(sid, tokens, features, rank))
    return NBestList(entries)


def write_nbest(nbest: NBestList, path: str) -> None:
    lines = []
    for sid in nbest.sids():
        for e in nbest.group(sid):
            named = " ".join(f"{k}={e.features[k]!r}" for k in sorted(e.features)
                             if k != EXTERNAL_FEATURE)
            lines.append(SEP.join([str(e.sid), " ".join(e.tokens), named,
                                   repr(e.features[EXTERNAL_FEATURE])]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def add_feature(nbest: NBestList, scorer, name: str,
                sources: list[list[str]] | None = None) -> NBestList:
    """Return a copy of the list with one neural feature added per entry.

    A translation-model scorer conditions on the source sentence indexed by
    the entry's sentence id (``sources`` required); a language-model scorer
    scores the hypothesis alone.  Values are log-probabilities divided by
    hypothesis length.  Re-adding an existing name overwrites it.
    """
    from .rnn_lm import LanguageModel, lm_score

    out = []
    for e in nbest.entries:
        if scorer.kind == "lm":
            ids = scorer.vocab.encode(e.tokens)
            value = lm_score(scorer, ids) / len(e.tokens)
        else:
            if sources is None:
                raise DataError("translation-model scoring needs the source sentences")
            if not 0 <= e.sid < len(sources):
                raise DataError(f"sentence id {e.sid} outside the source corpus")
            src_ids = scorer.src_vocab.encode(sources[e.sid])
            hyp_ids = scorer.tgt_vocab.encode(e.tokens)
            value = scorer.sentence_logprob(src_ids, hyp_ids) / len(e.tokens)
        feats = dict(e.features)
        feats[name] = value
        out.append(replace(e, features=feats))
    return NBestList(out)


def _entry_score(entry: NBestEntry, weights: dict[str, float]) -> float:
    total = 0.0
    for name, w in weights.items():
        if name not in entry.features:
            raise DataError(f"entry for sentence {entry.sid} lacks feature {name!r}")
        total += w * entry.features[name]
    return total


def rerank(nbest: NBestList, weights: dict[str, float]) -> list[NBestEntry]:
    """1-best per sentence under the weighted feature sum, ties by origin rank."""
    if not weights:
        raise DataError("rerank needs at least one weight")
    best = []
    for sid in nbest.sids():
        group = nbest.group(sid)
        best.append(max(group, key=lambda e: (_entry_score(e, weights), -e.rank)))
    return best


def simplex_grid(n_features: int, step: float = 0.1) -> list[tuple[float, ...]]:
    """All non-negative weight vectors with the given step summing to one."""
    if n_features < 1:
        raise DataError("need at least one feature to tune")
    units = round(1.0 / step)
    if units < 1 or abs(units * step - 1.0) > 1e-9:
        raise DataError(f"step {step} does not divide 1.0")
    grid = []
    for combo in itertools.product(range(units + 1), repeat=n_features):
        if sum(combo) == units:
            grid.append(tuple(k * step for k in combo))
    return grid


def tune_weights(nbest: NBestList, references: list[list[str]],
                 feature_names: list[str], step: float = 0.1) -> dict[str, float]:
    """Grid-search simplex weights maximizing reranked corpus BLEU.

    Ties go to the candidate with more weight on the external score, then to
    the lexicographically largest vector, so the result is deterministic.
    """
    sids = nbest.sids()
    if len(sids) != len(references) or sids != list(range(len(references))):
        raise DataError("references are not aligned with n-best sentence ids")
    if not feature_names:
        raise DataError("need at least one feature to tune")
    best_key = None
    best_weights = None
    for vector in simplex_grid(len(feature_names), step):
        weights = dict(zip(feature_names, vector))
        hyps = [e.tokens for e in rerank(nbest, weights)]
        score = bleu(hyps, references)
        key = (score, weights.get(EXTERNAL_FEATURE, 0.0), vector)
        if best_key is None or key > best_key:
            best_key = key
            best_weights = weights
    return best_weights


def write_weights(weights: dict[str, float], path: str) -> None:
    atomic_write_text(path, "".join(f"{k}={weights[k]!r}\n" for k in sorted(weights)))


def read_weights(path: str) -> dict[str, float]:
    weights: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            name, eq, value = line.partition("=")
            if not eq:
                raise DataError(f"{path}:{ln}: expected name=value, got {line!r}")
            weights[name] = float(value)
    return weights
