"""Beam-search decoding with model ensembling and unknown-word replacement.

Hypotheses are ranked by length-normalized log-probability.  An ensemble
averages the member distributions at every step (arithmetic mean of
probabilities by default, mean of log-probabilities as an alternative) and
averages their attention weights, which drive <unk> replacement: each
generated <unk> is resolved to the source position its step attended to
hardest, then replaced by that word's best dictionary translation, or by the
source word itself when no dictionary entry exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .errors import DataError, ShapeError, VocabularyError
from .seq2seq import DecoderState, EncoderContext, Seq2SeqModel
from .vocab import BOS, EOS, PAD, UNK, Vocabulary


@dataclass
class Hypothesis:
    """One (possibly unfinished) decoded candidate.

    ``ids`` holds generated target ids, including the final </s> when the
    hypothesis finished; ``attn_positions`` holds, per generated token, the
    original source position with the largest attention weight.
    """

    ids: list[int]
    logprob: float
    attn_positions: list[int] = field(default_factory=list)
    finished: bool = False

    @property
    def score(self) -> float:
        """Length-normalized log-probability used for ranking."""
        return self.logprob / max(1, len(self.ids))

    def surface(self, tgt_vocab: Vocabulary) -> list[str]:
        return [tgt_vocab.token_of(i) for i in self.ids if i != EOS]


class Ensemble:
    """A set of models decoded in lockstep over a shared target vocabulary."""

    def __init__(self, models: list[Seq2SeqModel], mode: str = "prob"):
        if not models:
            raise DataError("ensemble needs at least one model")
        if mode not in ("prob", "log"):
            raise ValueError(f"unknown ensemble mode {mode!r}")
        first = models[0]
        for m in models[1:]:
            if m.tgt_vocab != first.tgt_vocab:
                raise VocabularyError("ensemble members disagree on the target vocabulary")
            if m.src_vocab != first.src_vocab:
                raise VocabularyError("ensemble members disagree on the source vocabulary")
        self.models = models
        self.mode = mode

    @property
    def src_vocab(self) -> Vocabulary:
        return self.models[0].src_vocab

    @property
    def tgt_vocab(self) -> Vocabulary:
        return self.models[0].tgt_vocab

    def encode(self, source_ids: list[int]) -> list[EncoderContext]:
        return [m.encode(source_ids) for m in self.models]

    def step(self, prev_ids, states, attentionals, encs):
        """Advance every member one step; returns combined log-probabilities,
        new per-model states and attentionals, and mean attention weights."""
        logps = []
        weights = []
        new_states = []
        new_attn = []
        for m, st, at, enc in zip(self.models, states, attentionals, encs):
            logits, st2, at2, w = m.decode_step(prev_ids, st, at, enc)
            logps.append(tc.log_softmax(logits, axis=-1).data)
            weights.append(w.data)
            new_states.append(st2)
            new_attn.append(at2)
        stacked = np.stack(logps)
        if self.mode == "prob":
            combined = np.logaddexp.reduce(stacked, axis=0) - np.log(len(self.models))
        else:
            combined = stacked.mean(axis=0)
        return combined, new_states, new_attn, np.mean(weights, axis=0)


def _as_ensemble(models) -> Ensemble:
    if isinstance(models, Ensemble):
        return models
    if isinstance(models, Seq2SeqModel):
        return Ensemble([models])
    return Ensemble(list(models))


def _tile_enc(enc: EncoderContext, k: int) -> EncoderContext:
    if k == 1:
        return enc
    rep = lambda a: np.repeat(a, k, axis=0)
    return EncoderContext(
        states=tc.constant(rep(enc.states.data)),
        positions=rep(enc.positions),
        lengths=rep(enc.lengths),
        pad_additive=None if enc.pad_additive is None else rep(enc.pad_additive),
        h=[tc.constant(rep(t.data)) for t in enc.h],
        c=[tc.constant(rep(t.data)) for t in enc.c],
    )


def _gather_state(state: DecoderState, idx: np.ndarray) -> DecoderState:
    return DecoderState(h=[tc.constant(t.data[idx]) for t in state.h],
                        c=[tc.constant(t.data[idx]) for t in state.c])


def beam_search(models, source_ids: list[int], beam: int = 12,
                max_len: int | None = None) -> list[Hypothesis]:
    """Decode one source sentence; returns hypotheses ranked best first.

    Keeps the ``beam`` highest cumulative-log-probability candidates at every
    step; candidates never expand through <pad> or <s>.  Hypotheses that emit
    </s> retire; anything still alive at ``max_len`` is returned unfinished.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    if max_len is None:
        max_len = 2 * len(source_ids) + 10
    ens = _as_ensemble(models)
    V = len(ens.tgt_vocab)

    with tc.no_grad():
        encs1 = ens.encode(source_ids)
        states = [m.initial_decoder_state(e) for m, e in zip(ens.models, encs1)]
        attns = [m.initial_attentional(1) for m in ens.models]
        seqs: list[list[int]] = [[]]
        pos_chains: list[list[int]] = [[]]
        lps = np.zeros(1)
        prev_ids = np.asarray([BOS])
        done: list[Hypothesis] = []
        tiled: dict[int, list[EncoderContext]] = {1: encs1}

        for _ in range(max_len):
            k = len(seqs)
            if k not in tiled:
                tiled[k] = [_tile_enc(e, k) for e in encs1]
            logp, states, attns, weights = ens.step(prev_ids, states, attns, tiled[k])
            steps = weights.argmax(axis=1)
            attended = [int(tiled[k][0].positions[i, steps[i]]) for i in range(k)]

            cand = lps[:, None] + logp
            cand[:, PAD] = -np.inf
            cand[:, BOS] = -np.inf
            flat = cand.ravel()
            top = np.argsort(-flat, kind="stable")[:beam]

            keep_parent: list[int] = []
            next_seqs: list[list[int]] = []
            next_pos: list[list[int]] = []
            next_lps: list[float] = []
            next_prev: list[int] = []
            for f in top:
                if not np.isfinite(flat[f]):
                    continue
                i, v = divmod(int(f), V)
                hyp_ids = seqs[i] + [v]
                hyp_pos = pos_chains[i] + [attended[i]]
                if v == EOS:
                    done.append(Hypothesis(hyp_ids, float(flat[f]), hyp_pos, True))
                else:
                    keep_parent.append(i)
                    next_seqs.append(hyp_ids)
                    next_pos.append(hyp_pos)
                    next_lps.append(float(flat[f]))
                    next_prev.append(v)
            if not next_seqs:
                break
            idx = np.asarray(keep_parent)
            states = [_gather_state(s, idx) for s in states]
            attns = [tc.constant(a.data[idx]) for a in attns]
            seqs, pos_chains = next_seqs, next_pos
            lps = np.asarray(next_lps)
            prev_ids = np.asarray(next_prev)
        else:
            for s, p, lp in zip(seqs, pos_chains, lps):
                done.append(Hypothesis(s, float(lp), p, False))

    done.sort(key=lambda h: -h.score)
    return done


def unk_replace(hyp: Hypothesis, source_tokens: list[str],
                tgt_vocab: Vocabulary, ttable=None) -> list[str]:
    """Surface form of a hypothesis with each <unk> resolved through attention.

    Every other token is rendered unchanged, so the output length always
    equals the hypothesis length (final </s> excluded).
    """
    if len(hyp.attn_positions) != len(hyp.ids):
        raise ShapeError("hypothesis is missing attention positions")
    out: list[str] = []
    for wid, pos in zip(hyp.ids, hyp.attn_positions):
        if wid == EOS:
            continue
        if wid != UNK:
            out.append(tgt_vocab.token_of(wid))
            continue
        if not 0 <= pos < len(source_tokens):
            raise ShapeError(f"attended position {pos} outside the source")
        src_word = source_tokens[pos]
        best = ttable.best(src_word) if ttable is not None else None
        out.append(best if best is not None else src_word)
    return out


def translate(models, source_tokens: list[str], beam: int = 12,
              max_len: int | None = None, ttable=None,
              replace_unk: bool = True) -> list[str]:
    """Best-hypothesis translation of one tokenized sentence."""
    ens = _as_ensemble(models)
    if not source_tokens:
        return []
    ids = ens.src_vocab.encode(source_tokens)
    hyps = beam_search(ens, ids, beam, max_len)
    best = hyps[0]
    if replace_unk:
        return unk_replace(best, source_tokens, ens.tgt_vocab, ttable)
    return best.surface(ens.tgt_vocab)


def translate_corpus(models, sentences: list[list[str]], beam: int = 12,
                     max_len: int | None = None, ttable=None,
                     replace_unk: bool = True) -> list[list[str]]:
    return [translate(models, s, beam, max_len, ttable, replace_unk)
            for s in sentences]
