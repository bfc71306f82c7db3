"""Parent-to-child model transfer: block copying, embedding assignment,
freezing, and regularization toward the parent.

A child model starts from a trained parent.  Recurrent, attention and output
blocks copy over verbatim; source embeddings are re-indexed through an
assignment map from child source types to parent embedding rows (random, or
informed by a composed translation table); target embeddings copy wherever
the type name matches and are freshly initialized elsewhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError
from .ioutil import atomic_write_text
from .seq2seq import (
    BLOCK_ORDER,
    ModelConfig,
    Seq2SeqModel,
    block_shapes,
    init_params,
)
from .vocab import N_RESERVED, Vocabulary

logger = logging.getLogger(__name__)

TTABLE_ROW_TOLERANCE = 1e-3


@dataclass(frozen=True)
class FreezeMask:
    """Named parameter blocks excluded from SGD updates."""

    frozen: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "frozen", frozenset(self.frozen))
        unknown = self.frozen - set(BLOCK_ORDER)
        if unknown:
            raise ValueError(f"unknown parameter blocks: {sorted(unknown)}")

    @classmethod
    def none(cls) -> "FreezeMask":
        return cls(frozenset())

    @classmethod
    def default_child(cls) -> "FreezeMask":
        """The standard child mask: both target embedding blocks stay fixed."""
        return cls(frozenset({"target_input_embeddings", "target_output_embeddings"}))

    def is_frozen(self, block: str) -> bool:
        return block in self.frozen

    def as_dict(self) -> dict[str, bool]:
        return {b: b in self.frozen for b in BLOCK_ORDER}


@dataclass
class AssignmentMap:
    """Total map from child source type id (>= reserved) to parent embedding row.

    Reserved ids (pad, unk, sentence markers) always take the parent's own
    reserved rows and are not part of the map.
    """

    rows: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for cid, row in self.rows.items():
            if cid < N_RESERVED:
                raise DataError(f"assignment covers reserved id {cid}")
            if row < 0:
                raise DataError(f"negative parent row {row} for child id {cid}")

    def __getitem__(self, cid: int) -> int:
        return self.rows[cid]

    def __len__(self) -> int:
        return len(self.rows)

    @classmethod
    def identity(cls, vocab: Vocabulary) -> "AssignmentMap":
        return cls({cid: cid for cid in range(N_RESERVED, len(vocab))})


def _uniform_row(seed, cid: int, parent_size: int) -> int:
    # Per-type stream: the draw for one type does not depend on which other
    # types are drawn, so dictionary fallback matches the random map exactly.
    return int(np.random.default_rng([seed, cid]).integers(0, parent_size))


def random_assignment(child_vocab: Vocabulary, parent_size: int, seed) -> AssignmentMap:
    """Map every child source type to an independent uniform parent row."""
    if parent_size < 1:
        raise DataError(f"parent embedding table must have rows, got {parent_size}")
    return AssignmentMap({cid: _uniform_row(seed, cid, parent_size)
                          for cid in range(N_RESERVED, len(child_vocab))})


class TTable:
    """Sparse translation probability table P(target type | source type)."""

    def __init__(self, probs: dict[str, dict[str, float]]):
        for src, row in probs.items():
            total = 0.0
            for tgt, p in row.items():
                if not 0.0 < p <= 1.0 + TTABLE_ROW_TOLERANCE:
                    raise DataError(f"bad probability {p} for ({src!r}, {tgt!r})")
                total += p
            if total > 1.0 + TTABLE_ROW_TOLERANCE:
                raise DataError(f"row {src!r} sums to {total}, above 1")
        self.probs = probs

    def row(self, src: str) -> dict[str, float]:
        return self.probs.get(src, {})

    def best(self, src: str) -> str | None:
        """Highest-probability target for a source type; ties break to the
        lexicographically smaller type.  None when the type has no row."""
        row = self.probs.get(src)
        if not row:
            return None
        return min(row, key=lambda t: (-row[t], t))

    def __len__(self) -> int:
        return len(self.probs)

    def write(self, path: str) -> None:
        lines = []
        for src in sorted(self.probs):
            for tgt in sorted(self.probs[src]):
                lines.append(f"{src} {tgt} {self.probs[src][tgt]!r}")
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def read(cls, path: str) -> "TTable":
        probs: dict[str, dict[str, float]] = {}
        with open(path, encoding="utf-8") as fh:
            for ln, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise DataError(f"{path}:{ln}: expected 'src tgt prob', got {line!r}")
                try:
                    p = float(parts[2])
                except ValueError:
                    raise DataError(f"{path}:{ln}: bad probability {parts[2]!r}") from None
                probs.setdefault(parts[0], {})[parts[1]] = p
        return cls(probs)


def compose_ttables(first: TTable, second: TTable, prune: float = 1e-6) -> TTable:
    """Chain two tables through their shared pivot language.

    out(src, tgt) = sum over pivot of first(src, pivot) * second(pivot, tgt),
    with entries below ``prune`` dropped.
    """
    out: dict[str, dict[str, float]] = {}
    for src, row in first.probs.items():
        acc: dict[str, float] = {}
        for pivot, p1 in row.items():
            for tgt, p2 in second.probs.get(pivot, {}).items():
                acc[tgt] = acc.get(tgt, 0.0) + p1 * p2
        kept = {t: p for t, p in acc.items() if p >= prune}
        if kept:
            out[src] = kept
    return TTable(out)


def dictionary_assignment(composed: TTable, child_vocab: Vocabulary,
                          parent_vocab: Vocabulary, seed) -> AssignmentMap:
    """Assign child types to parent rows through a composed translation table.

    Each child type takes the parent row of its most probable translation
    (ties to the lower parent id); types without a usable table entry fall
    back to the same uniform draw random_assignment would make.
    """
    rows: dict[int, int] = {}
    for cid in range(N_RESERVED, len(child_vocab)):
        ctype = child_vocab.token_of(cid)
        best_row = None
        best_p = 0.0
        for ptype, p in composed.row(ctype).items():
            if ptype not in parent_vocab:
                continue
            pid = parent_vocab.id_of(ptype)
            if p > best_p or (p == best_p and best_row is not None and pid < best_row):
                best_p = p
                best_row = pid
        if best_row is None:
            best_row = _uniform_row(seed, cid, len(parent_vocab))
        rows[cid] = best_row
    return AssignmentMap(rows)


def transfer_init(parent: Seq2SeqModel, child_src_vocab: Vocabulary,
                  child_tgt_vocab: Vocabulary, assignment: AssignmentMap,
                  seed: int = 0, provenance: str = "parent",
                  child_config: ModelConfig | None = None) -> Seq2SeqModel:
    """Build a child model whose parameters start from a trained parent.

    Recurrent, attention and the non-embedding weights copy verbatim.  Child
    source embedding row i becomes parent row assignment[i].  Target
    embeddings (input rows, output columns and biases) copy for every child
    type also present in the parent target vocabulary and keep a fresh
    seeded init otherwise.
    """
    cfg = ModelConfig.from_dict(parent.config.to_dict()) if child_config is None else child_config
    if cfg.hidden_size != parent.config.hidden_size:
        raise ShapeError(
            f"child hidden size {cfg.hidden_size} != parent {parent.config.hidden_size}")
    if cfg.layers != parent.config.layers:
        raise ShapeError(f"child layers {cfg.layers} != parent {parent.config.layers}")
    cfg.src_vocab_size = len(child_src_vocab)
    cfg.tgt_vocab_size = len(child_tgt_vocab)
    cfg.parent = provenance

    for cid in range(N_RESERVED, len(child_src_vocab)):
        if cid not in assignment.rows:
            raise DataError(f"assignment misses child source id {cid}")
        if assignment[cid] >= len(parent.src_vocab):
            raise DataError(
                f"assignment row {assignment[cid]} outside parent table for id {cid}")

    params = init_params(cfg, np.random.default_rng(seed))
    parent_arrays = parent.params.arrays()

    for block in ("source_rnn", "target_rnn", "target_attention"):
        for name, arr in parent_arrays[block].items():
            params[block][name].data[...] = arr

    src_emb = params["source_embeddings"]["emb"].data
    parent_src = parent_arrays["source_embeddings"]["emb"]
    src_emb[:N_RESERVED] = parent_src[:N_RESERVED]
    for cid in range(N_RESERVED, len(child_src_vocab)):
        src_emb[cid] = parent_src[assignment[cid]]

    in_emb = params["target_input_embeddings"]["emb"].data
    out_w = params["target_output_embeddings"]["w"].data
    out_b = params["target_output_embeddings"]["b"].data
    parent_in = parent_arrays["target_input_embeddings"]["emb"]
    parent_w = parent_arrays["target_output_embeddings"]["w"]
    parent_b = parent_arrays["target_output_embeddings"]["b"]
    matched = 0
    for cid in range(len(child_tgt_vocab)):
        ctype = child_tgt_vocab.token_of(cid)
        if cid < N_RESERVED:
            pid = cid
        elif ctype in parent.tgt_vocab:
            pid = parent.tgt_vocab.id_of(ctype)
        else:
            continue
        in_emb[cid] = parent_in[pid]
        out_w[:, cid] = parent_w[:, pid]
        out_b[cid] = parent_b[pid]
        matched += 1
    logger.info("transfer_init: %d/%d target types matched the parent",
                matched, len(child_tgt_vocab))

    return Seq2SeqModel(cfg, child_src_vocab, child_tgt_vocab, params)


def lm_as_parent(lm, skeleton: Seq2SeqModel) -> Seq2SeqModel:
    """Initialize a translation model's target side from a language model.

    The LM's recurrent weights land in the decoder: its first-layer input
    kernel fills the embedding half of the decoder's first-layer kernel (the
    feed-input half keeps the skeleton's fresh init), deeper layers copy
    whole.  Target embeddings copy by type name; LM types absent from the
    child vocabulary are dropped with a log line.  Source side and attention
    keep the skeleton's fresh initialization.
    """
    if lm.config.hidden_size != skeleton.config.hidden_size:
        raise ShapeError(
            f"LM hidden size {lm.config.hidden_size} != model {skeleton.config.hidden_size}")
    if lm.config.layers != skeleton.config.layers:
        raise ShapeError(f"LM layers {lm.config.layers} != model {skeleton.config.layers}")

    child = skeleton.clone()
    child.config.parent = "lm"
    d = lm.config.hidden_size
    lm_arrays = lm.params.arrays()

    tgt_rnn = child.params["target_rnn"]
    for name, arr in lm_arrays["target_rnn"].items():
        if name == "l0.w_x":
            tgt_rnn[name].data[:d, :] = arr
        else:
            tgt_rnn[name].data[...] = arr

    in_emb = child.params["target_input_embeddings"]["emb"].data
    out_w = child.params["target_output_embeddings"]["w"].data
    out_b = child.params["target_output_embeddings"]["b"].data
    lm_in = lm_arrays["target_input_embeddings"]["emb"]
    lm_w = lm_arrays["target_output_embeddings"]["w"]
    lm_b = lm_arrays["target_output_embeddings"]["b"]
    for lid in range(len(lm.vocab)):
        ltype = lm.vocab.token_of(lid)
        if lid < N_RESERVED:
            cid = lid
        elif ltype in child.tgt_vocab:
            cid = child.tgt_vocab.id_of(ltype)
        else:
            logger.info("lm_as_parent: dropping LM type %r absent from the child", ltype)
            continue
        in_emb[cid] = lm_in[lid]
        out_w[:, cid] = lm_w[:, lid]
        out_b[cid] = lm_b[lid]
    return child


def l2_toward_parent(grads, params, parent_arrays, lam: float, mask: FreezeMask | None) -> None:
    """Add lam * (theta - theta_parent) to every unfrozen block's gradient.

    Mutates ``grads`` in place; call before clipping.  Blocks the parent
    does not share shapes with (fresh child embeddings) must not be passed.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    for block, names in grads.items():
        if mask is not None and mask.is_frozen(block):
            continue
        if block not in parent_arrays:
            continue
        for name, g in names.items():
            theta = params[block][name].data
            parent = parent_arrays[block][name]
            if theta.shape != parent.shape:
                raise ShapeError(
                    f"parent block {block}/{name} shape {parent.shape} != {theta.shape}")
            g += lam * (theta - parent)
