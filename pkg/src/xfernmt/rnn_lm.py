"""Recurrent language model sharing the translation decoder's cell stack.

Structurally this is the decoder without attention or feed-input: embedding,
stacked LSTM layers with dropout between them, dropout again before the
output projection.  Its parameter blocks use the decoder's block names so a
trained LM can seed a translation model's target side.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .batching import bucket_indices, eval_chunks
from .container import write_container
from .errors import DataError, ShapeError
from .seq2seq import (
    LM_BLOCK_ORDER,
    DecoderState,
    ParameterBlocks,
    _layer_weights,
)
from .tensor_core import Tensor
from .vocab import BOS, EOS, PAD, Vocabulary


@dataclass
class LMConfig:
    vocab_size: int
    hidden_size: int = 64
    layers: int = 2
    dropout_p: float = 0.2
    init_range: float = 0.08
    precision: str = "float32"

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.hidden_size < 1:
            raise ValueError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.init_range < 0:
            raise ValueError(f"init_range must be >= 0, got {self.init_range}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "hidden_size": self.hidden_size,
            "layers": self.layers,
            "dropout_p": self.dropout_p,
            "init_range": self.init_range,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LMConfig":
        return cls(**d)


def lm_block_shapes(config: LMConfig) -> dict[str, dict[str, tuple[int, ...]]]:
    d = config.hidden_size
    rnn: dict[str, tuple[int, ...]] = {}
    for layer in range(config.layers):
        rnn[f"l{layer}.w_x"] = (d, 4 * d)
        rnn[f"l{layer}.w_h"] = (d, 4 * d)
        rnn[f"l{layer}.b"] = (4 * d,)
    return {
        "target_rnn": rnn,
        "target_input_embeddings": {"emb": (config.vocab_size, d)},
        "target_output_embeddings": {"w": (d, config.vocab_size),
                                     "b": (config.vocab_size,)},
    }


def init_lm_params(config: LMConfig, rng: np.random.Generator) -> ParameterBlocks:
    blocks: dict[str, dict[str, Tensor]] = {}
    for block, names in lm_block_shapes(config).items():
        blocks[block] = {}
        for name, shape in names.items():
            data = rng.uniform(-config.init_range, config.init_range, size=shape)
            blocks[block][name] = tc.parameter(data.astype(config.dtype))
    return ParameterBlocks(blocks, LM_BLOCK_ORDER)


class LanguageModel:
    """Stacked-LSTM language model over a single vocabulary."""

    kind = "lm"

    def __init__(self, config: LMConfig, vocab: Vocabulary,
                 params: ParameterBlocks | None = None,
                 seed: int = 0):
        if config.vocab_size != len(vocab):
            raise ShapeError(
                f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}")
        self.config = config
        self.vocab = vocab
        self.params = params if params is not None else init_lm_params(
            config, np.random.default_rng(seed))

    # -- forward -------------------------------------------------------------

    def initial_state(self, batch_size: int) -> DecoderState:
        d = self.config.hidden_size
        zeros = lambda: tc.constant(np.zeros((batch_size, d), dtype=self.config.dtype))
        return DecoderState([zeros() for _ in range(self.config.layers)],
                            [zeros() for _ in range(self.config.layers)])

    def step(self, prev_ids: np.ndarray, state: DecoderState,
             train_mode: bool = False,
             rng: np.random.Generator | None = None) -> tuple[Tensor, DecoderState]:
        x = tc.embedding_rows(self.params["target_input_embeddings"]["emb"], prev_ids)
        hs, cs = [], []
        inp = x
        for layer in range(self.config.layers):
            w = _layer_weights(self.params["target_rnn"], layer)
            h, c = tc.lstm_cell(inp, state.h[layer], state.c[layer], w)
            hs.append(h)
            cs.append(c)
            inp = h
            if layer < self.config.layers - 1:
                inp = tc.dropout(inp, self.config.dropout_p, rng, train_mode)
        top = tc.dropout(inp, self.config.dropout_p, rng, train_mode)
        logits = tc.affine(top, self.params["target_output_embeddings"]["w"],
                           self.params["target_output_embeddings"]["b"])
        return logits, DecoderState(hs, cs)

    def batch_loss(self, batch: "LMBatch", train_mode: bool = False,
                   rng: np.random.Generator | None = None) -> tuple[Tensor, int]:
        state = self.initial_state(batch.ids_in.shape[0])
        total: Tensor | None = None
        for t in range(batch.ids_in.shape[1]):
            logits, state = self.step(batch.ids_in[:, t], state, train_mode, rng)
            logp = tc.pick(tc.log_softmax(logits, axis=-1), batch.ids_out[:, t])
            step = tc.tsum(tc.mul(logp, tc.constant(
                batch.mask[:, t].astype(self.config.dtype))))
            total = step if total is None else tc.add(total, step)
        return tc.mul(total, -1.0), int(batch.n_tokens)

    def next_logprobs(self, prefix_ids: list[int]) -> np.ndarray:
        """log P(w | prefix) over the whole vocabulary, eval mode."""
        with tc.no_grad():
            state = self.initial_state(1)
            prev = np.array([BOS])
            for wid in prefix_ids:
                _, state = self.step(prev, state)
                prev = np.array([wid])
            logits, _ = self.step(prev, state)
            return tc.log_softmax(logits, axis=-1).data[0].copy()

    # -- batching ------------------------------------------------------------

    def make_train_batches(self, sentences, size: int, seed) -> list["LMBatch"]:
        groups = bucket_indices([len(s) for s in sentences], size, seed)
        return [make_lm_batch([sentences[i] for i in g], g) for g in groups]

    def iter_eval_batches(self, sentences, size: int = 32):
        for g in eval_chunks([len(s) for s in sentences], size):
            yield make_lm_batch([sentences[i] for i in g], g)

    # -- serialization -------------------------------------------------------

    def save(self, path: str) -> None:
        write_container(path, self.kind, self.config.to_dict(),
                        {"tgt": self.vocab.types}, self.params.arrays())

    def clone(self) -> "LanguageModel":
        params = init_lm_params(self.config, np.random.default_rng(0))
        params.load_arrays(self.params.arrays())
        return LanguageModel(copy.deepcopy(self.config), self.vocab, params)


@dataclass
class LMBatch:
    ids_in: np.ndarray  # (B, T): <s>, then sentence ids
    ids_out: np.ndarray  # (B, T): sentence ids, then </s>
    mask: np.ndarray  # (B, T) float, 0 at padded steps
    n_tokens: int
    pair_indices: list[int]


def make_lm_batch(sentences: list[list[int]], indices: list[int] | None = None) -> LMBatch:
    B = len(sentences)
    T = max(len(s) for s in sentences) + 1
    ids_in = np.full((B, T), PAD, dtype=np.int64)
    ids_out = np.full((B, T), PAD, dtype=np.int64)
    mask = np.zeros((B, T), dtype=np.float64)
    for b, s in enumerate(sentences):
        ids_in[b, 0] = BOS
        ids_in[b, 1 : len(s) + 1] = s
        ids_out[b, : len(s)] = s
        ids_out[b, len(s)] = EOS
        mask[b, : len(s) + 1] = 1.0
    return LMBatch(ids_in, ids_out, mask, int(mask.sum()),
                   list(indices) if indices is not None else list(range(B)))


def lm_score_steps(model: LanguageModel, ids: list[int]) -> list[float]:
    """Per-token conditional log-probabilities log P(w_t | w_<t), eval mode."""
    for wid in ids:
        if not 0 <= wid < len(model.vocab):
            raise DataError(f"token id {wid} outside the vocabulary")
    out: list[float] = []
    with tc.no_grad():
        state = model.initial_state(1)
        prev = np.array([BOS])
        for wid in ids:
            logits, state = model.step(prev, state)
            logp = tc.log_softmax(logits, axis=-1).data[0, wid]
            out.append(float(logp))
            prev = np.array([wid])
    return out


def lm_score(model: LanguageModel, ids: list[int]) -> float:
    """Sum of conditional token log-probabilities; never positive."""
    if not ids:
        raise DataError("cannot score an empty sequence")
    return math.fsum(lm_score_steps(model, ids))


def lm_train(train_sentences: list[list[str]], dev_sentences: list[list[str]],
             train_config, hidden_size: int = 64, layers: int = 2,
             max_vocab: int | None = None, precision: str = "float32",
             seed: int = 0):
    """Build a vocabulary from raw sentences and train an LM on them.

    Returns (model, learning curve).  Uses the shared optimizer recipe;
    dropout comes from the train config (falling back to the LM default).
    """
    from .trainer import train

    if not train_sentences:
        raise DataError("cannot train on an empty corpus")
    vocab = Vocabulary.from_corpus(train_sentences, max_vocab)
    config = LMConfig(vocab_size=len(vocab), hidden_size=hidden_size,
                      layers=layers, precision=precision)
    model = LanguageModel(config, vocab, seed=seed)
    train_ids = [vocab.encode(s) for s in train_sentences]
    dev_ids = [vocab.encode(s) for s in dev_sentences]
    return train(model, train_ids, dev_ids, train_config)
