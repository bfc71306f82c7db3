"""Two-layer LSTM encoder-decoder with local attention and feed-input.

The source sentence is reversed before encoding.  The decoder consumes, at
every step, the concatenation of the previous target embedding and the
previous attentional vector; attention predicts an aligned source position
through a sigmoid network, scores encoder states inside a window around it
with a dot product, and weights them by a Gaussian centered on the predicted
position (sigma = half the window).

Parameters are partitioned into six named blocks (source embeddings, source
RNN, target RNN, target attention, target input embeddings, target output
embeddings); transfer, freezing and serialization all address these names.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor_core as tc
from .batching import bucket_indices, eval_chunks
from .container import read_container, write_container
from .errors import ShapeError, VocabularyError
from .tensor_core import Tensor
from .vocab import BOS, EOS, PAD, N_RESERVED, Vocabulary

BLOCK_ORDER = (
    "source_embeddings",
    "source_rnn",
    "target_rnn",
    "target_attention",
    "target_input_embeddings",
    "target_output_embeddings",
)

LM_BLOCK_ORDER = (
    "target_rnn",
    "target_input_embeddings",
    "target_output_embeddings",
)

ATTENTION_PAD_SCORE = -1e9


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Defaults of record follow the source recipe (hidden size 1000, init
    range 0.08); the desk-scale default hidden size here is 64.
    """

    src_vocab_size: int
    tgt_vocab_size: int
    hidden_size: int = 64
    layers: int = 2
    dropout_p: float = 0.5
    init_range: float = 0.08
    attention_window: int = 10
    attention: str = "local"  # "global" is a debug toggle
    attention_score: str = "dot"  # "general" adds a bilinear score matrix
    precision: str = "float32"
    parent: str | None = None  # provenance, set by transfer_init

    def __post_init__(self):
        if self.layers != 2:
            raise ValueError("this architecture is fixed at 2 layers")
        if self.init_range < 0:
            raise ValueError("init_range must be >= 0")
        if self.attention_window < 1:
            raise ValueError("attention_window must be >= 1")
        if self.attention not in ("local", "global"):
            raise ValueError(f"unknown attention mode {self.attention!r}")
        if self.attention_score not in ("dot", "general"):
            raise ValueError(f"unknown attention score {self.attention_score!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")
        if min(self.src_vocab_size, self.tgt_vocab_size) < N_RESERVED:
            raise ValueError("vocabulary sizes must cover the reserved ids")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["parent"] is None:
            del d["parent"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class ParameterBlocks:
    """Named blocks of trainable arrays; every parameter lives in exactly one."""

    def __init__(self, blocks: dict[str, dict[str, Tensor]], order: tuple[str, ...]):
        self._blocks = blocks
        self.order = order

    def __getitem__(self, block: str) -> dict[str, Tensor]:
        return self._blocks[block]

    def __contains__(self, block: str) -> bool:
        return block in self._blocks

    def items(self):
        return ((b, self._blocks[b]) for b in self.order)

    def keys(self):
        return iter(self.order)

    def tensors(self):
        for b in self.order:
            for name in sorted(self._blocks[b]):
                yield b, name, self._blocks[b][name]

    def zero_grad(self) -> None:
        for _, _, t in self.tensors():
            t.grad = None

    def grads(self) -> dict[str, dict[str, np.ndarray]]:
        """Gradients mirrored as plain arrays; missing grads become zeros."""
        out: dict[str, dict[str, np.ndarray]] = {}
        for b, name, t in self.tensors():
            out.setdefault(b, {})[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return out

    def arrays(self) -> dict[str, dict[str, np.ndarray]]:
        return {b: {n: t.data for n, t in arrs.items()} for b, arrs in self._blocks.items()}

    def clone_arrays(self) -> dict[str, dict[str, np.ndarray]]:
        return {b: {n: t.data.copy() for n, t in arrs.items()} for b, arrs in self._blocks.items()}

    def load_arrays(self, arrays: dict[str, dict[str, np.ndarray]]) -> None:
        for b, arrs in arrays.items():
            for n, a in arrs.items():
                tgt = self._blocks[b][n]
                if tgt.data.shape != a.shape:
                    raise ShapeError(f"block {b}/{n}: expected {tgt.data.shape}, got {a.shape}")
                tgt.data = a.astype(tgt.data.dtype, copy=True)

    def count(self) -> int:
        return sum(t.data.size for _, _, t in self.tensors())


def block_shapes(config: ModelConfig) -> dict[str, dict[str, tuple[int, ...]]]:
    d = config.hidden_size
    attn = {
        "w_p": (d, d),
        "v_p": (d, 1),
        "w_c": (2 * d, d),
        "b_c": (d,),
    }
    if config.attention_score == "general":
        attn["w_a"] = (d, d)
    return {
        "source_embeddings": {"emb": (config.src_vocab_size, d)},
        "source_rnn": _rnn_shapes(d, first_input=d),
        "target_rnn": _rnn_shapes(d, first_input=2 * d),  # feed-input doubles layer-0 input
        "target_attention": attn,
        "target_input_embeddings": {"emb": (config.tgt_vocab_size, d)},
        "target_output_embeddings": {"w": (d, config.tgt_vocab_size), "b": (config.tgt_vocab_size,)},
    }


def _rnn_shapes(d: int, first_input: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for layer, n_in in enumerate((first_input, d)):
        shapes[f"l{layer}.w_x"] = (n_in, 4 * d)
        shapes[f"l{layer}.w_h"] = (d, 4 * d)
        shapes[f"l{layer}.b"] = (4 * d,)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParameterBlocks:
    """Sample every parameter uniformly from [-init_range, +init_range]."""
    shapes = block_shapes(config)
    blocks = {}
    for block in BLOCK_ORDER:
        blocks[block] = {
            name: tc.parameter(
                rng.uniform(-config.init_range, config.init_range, shape).astype(config.dtype)
            )
            for name, shape in sorted(shapes[block].items())
        }
    return ParameterBlocks(blocks, BLOCK_ORDER)


def _layer_weights(block: dict[str, Tensor], layer: int) -> dict[str, Tensor]:
    return {
        "w_x": block[f"l{layer}.w_x"],
        "w_h": block[f"l{layer}.w_h"],
        "b": block[f"l{layer}.b"],
    }


@dataclass
class EncoderContext:
    """Encoder outputs kept for the decoder's attention.

    ``states`` are the top-layer states in processing order (the source is
    consumed reversed); ``positions[b, s]`` maps processing step ``s`` back
    to the original token index, -1 at padded steps.
    """

    states: Tensor  # (B, S, d)
    positions: np.ndarray  # (B, S) int
    lengths: np.ndarray  # (B,) real source lengths
    pad_additive: np.ndarray | None  # (B, S) 0 at real steps, -1e9 at pads
    h: list[Tensor]  # final hidden per layer, (B, d)
    c: list[Tensor]  # final cell per layer, (B, d)


@dataclass
class DecoderState:
    h: list[Tensor]
    c: list[Tensor]


class Seq2SeqModel:
    """A parameter set plus the forward computations over it."""

    kind = "seq2seq"

    def __init__(
        self,
        config: ModelConfig,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        params: ParameterBlocks | None = None,
        rng: np.random.Generator | None = None,
    ):
        if len(src_vocab) != config.src_vocab_size or len(tgt_vocab) != config.tgt_vocab_size:
            raise VocabularyError(
                f"config vocab sizes ({config.src_vocab_size}, {config.tgt_vocab_size}) do not "
                f"match vocabularies ({len(src_vocab)}, {len(tgt_vocab)})"
            )
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        if params is None:
            params = init_params(config, rng if rng is not None else np.random.default_rng(0))
        self.params = params

    # -- encoding -----------------------------------------------------------

    def encode(self, source_ids: list[int], train_mode: bool = False,
               rng: np.random.Generator | None = None) -> EncoderContext:
        """Encode one sentence; rejects empty input, pads and bad ids."""
        if len(source_ids) == 0:
            raise ShapeError("encode: empty source sentence")
        for i in source_ids:
            if i == PAD:
                raise VocabularyError("encode: <pad> must never be fed to the encoder")
            if not 0 <= i < self.config.src_vocab_size:
                raise VocabularyError(f"encode: source id {i} out of range")
        batch = np.asarray([source_ids], dtype=np.int64)
        return self.encode_batch(batch, np.asarray([len(source_ids)]), train_mode, rng)

    def encode_batch(
        self,
        src: np.ndarray,
        src_len: np.ndarray,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> EncoderContext:
        """Encode a padded (B, S) batch; pads sit after each row's tokens."""
        B, S = src.shape
        d = self.config.hidden_size
        dt = self.config.dtype
        p = self.params
        emb_table = p["source_embeddings"]["emb"]
        l0 = _layer_weights(p["source_rnn"], 0)
        l1 = _layer_weights(p["source_rnn"], 1)

        # Processing step s of row b reads original position len_b - 1 - s.
        steps = np.arange(S)
        positions = src_len[:, None] - 1 - steps[None, :]
        real = positions >= 0
        feed_ids = np.where(real, np.take_along_axis(src, np.maximum(positions, 0), axis=1), PAD)
        any_pad = not real.all()

        zero = tc.constant(np.zeros((B, d), dtype=dt))
        h = [zero, zero]
        c = [zero, zero]
        top: list[Tensor] = []
        for s in range(S):
            x = tc.embedding_rows(emb_table, feed_ids[:, s])
            h0n, c0n = tc.lstm_cell(x, h[0], c[0], l0)
            inter = tc.dropout(h0n, self.config.dropout_p, rng, train_mode)
            h1n, c1n = tc.lstm_cell(inter, h[1], c[1], l1)
            if any_pad:
                # Padded steps must leave the running state untouched.
                m = tc.constant(real[:, s : s + 1].astype(dt))
                keep = tc.constant((~real[:, s : s + 1]).astype(dt))
                h = [tc.add(tc.mul(h0n, m), tc.mul(h[0], keep)),
                     tc.add(tc.mul(h1n, m), tc.mul(h[1], keep))]
                c = [tc.add(tc.mul(c0n, m), tc.mul(c[0], keep)),
                     tc.add(tc.mul(c1n, m), tc.mul(c[1], keep))]
                top.append(h[1])
            else:
                h = [h0n, h1n]
                c = [c0n, c1n]
                top.append(h1n)
        states = tc.stack(top, axis=1)
        pad_additive = None
        if any_pad:
            pad_additive = np.where(real, 0.0, ATTENTION_PAD_SCORE).astype(dt)
        return EncoderContext(
            states=states,
            positions=np.where(real, positions, -1),
            lengths=src_len.copy(),
            pad_additive=pad_additive,
            h=h,
            c=c,
        )

    def initial_decoder_state(self, enc: EncoderContext) -> DecoderState:
        # Hand-off: decoder starts from the final encoder (h, c) of each layer.
        return DecoderState(h=list(enc.h), c=list(enc.c))

    def initial_attentional(self, batch_size: int) -> Tensor:
        return tc.constant(np.zeros((batch_size, self.config.hidden_size), dtype=self.config.dtype))

    # -- decoding -----------------------------------------------------------

    def decode_step(
        self,
        prev_ids: np.ndarray,
        state: DecoderState,
        attentional_prev: Tensor,
        enc: EncoderContext,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
        attention_off: bool = False,
    ) -> tuple[Tensor, DecoderState, Tensor, Tensor]:
        """One decoder step over a batch.

        Returns (logits over the target vocabulary, new state, attentional
        vector, attention weights over source processing steps).  With
        ``attention_off`` (a diagnostic used to validate LM-based transfer)
        the attention path is skipped entirely and logits are produced from
        the bare top hidden state; the fed-forward attentional vector stays
        zero.
        """
        if state is None:
            raise ShapeError("decode_step: decoder state not initialized (run encode first)")
        cfg = self.config
        p = self.params
        prev_ids = np.asarray(prev_ids)
        B = prev_ids.shape[0]
        dt = cfg.dtype

        emb = tc.embedding_rows(p["target_input_embeddings"]["emb"], prev_ids)
        x = tc.concat([emb, attentional_prev], axis=-1)
        l0 = _layer_weights(p["target_rnn"], 0)
        l1 = _layer_weights(p["target_rnn"], 1)
        h0, c0 = tc.lstm_cell(x, state.h[0], state.c[0], l0)
        inter = tc.dropout(h0, cfg.dropout_p, rng, train_mode)
        h1, c1 = tc.lstm_cell(inter, state.h[1], state.c[1], l1)
        new_state = DecoderState(h=[h0, h1], c=[c0, c1])

        out_w = p["target_output_embeddings"]["w"]
        out_b = p["target_output_embeddings"]["b"]

        if attention_off:
            zeros_attn = tc.constant(np.zeros((B, enc.states.shape[1]), dtype=dt))
            logits = tc.affine(tc.dropout(h1, cfg.dropout_p, rng, train_mode), out_w, out_b)
            return logits, new_state, self.initial_attentional(B), zeros_attn

        weights = self._attention_weights(h1, enc)
        context = tc.attn_context(weights, enc.states)
        attentional = tc.tanh(tc.affine(tc.concat([context, h1], axis=-1),
                                        p["target_attention"]["w_c"],
                                        p["target_attention"]["b_c"]))
        logits = tc.affine(tc.dropout(attentional, cfg.dropout_p, rng, train_mode), out_w, out_b)
        return logits, new_state, attentional, weights

    def _attention_weights(self, query: Tensor, enc: EncoderContext) -> Tensor:
        cfg = self.config
        dt = cfg.dtype
        attn = self.params["target_attention"]
        if cfg.attention_score == "general":
            scores = tc.attn_scores(enc.states, tc.matmul(query, attn["w_a"]))
        else:
            scores = tc.attn_scores(enc.states, query)

        if cfg.attention == "global":
            if enc.pad_additive is not None:
                scores = tc.add(scores, tc.constant(enc.pad_additive))
            return tc.softmax(scores, axis=-1)

        # Local-p: predicted position in [0, len), window of +-D around it.
        lengths = enc.lengths.astype(dt)[:, None]
        p_rel = tc.sigmoid(tc.matmul(tc.tanh(tc.matmul(query, attn["w_p"])), attn["v_p"]))
        p_pos = tc.mul(p_rel, tc.constant(lengths))  # (B, 1)

        d_eff = np.minimum(cfg.attention_window, enc.lengths).astype(dt)[:, None]
        pos = enc.positions.astype(dt)
        in_window = np.abs(pos - p_pos.data) <= d_eff
        if enc.pad_additive is not None:
            in_window &= enc.pad_additive == 0.0
        masked = tc.add(scores, tc.constant(np.where(in_window, 0.0, ATTENTION_PAD_SCORE).astype(dt)))
        align = tc.softmax(masked, axis=-1)

        sigma = d_eff / 2.0
        diff = tc.add(tc.constant(pos), tc.mul(p_pos, -1.0))
        gauss = tc.exp(tc.mul(tc.mul(diff, diff), tc.constant(-1.0 / (2.0 * sigma * sigma))))
        # Degenerate windows (single-token source) put weight 1 on that token.
        multi = (enc.lengths > 1).astype(dt)[:, None]
        gsel = tc.add(tc.mul(gauss, tc.constant(multi)), tc.constant(1.0 - multi))
        return tc.mul(align, gsel)

    # -- scoring ------------------------------------------------------------

    def batch_loss(
        self,
        batch: "Batch",
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, int]:
        """Summed NLL over a batch, with padded target steps masked out."""
        enc = self.encode_batch(batch.src, batch.src_len, train_mode, rng)
        state = self.initial_decoder_state(enc)
        attentional = self.initial_attentional(batch.src.shape[0])
        total: Tensor | None = None
        for t in range(batch.tgt_in.shape[1]):
            logits, state, attentional, _ = self.decode_step(
                batch.tgt_in[:, t], state, attentional, enc, train_mode, rng
            )
            logp = tc.pick(tc.log_softmax(logits, axis=-1), batch.tgt_out[:, t])
            step = tc.tsum(tc.mul(logp, tc.constant(batch.tgt_mask[:, t].astype(self.config.dtype))))
            total = step if total is None else tc.add(total, step)
        return tc.mul(total, -1.0), int(batch.n_tokens)

    def sentence_logprob(self, src_ids: list[int], tgt_ids: list[int]) -> float:
        """log P(target | source): sum of per-step log-softmax picks, eval mode."""
        if len(src_ids) == 0 or len(tgt_ids) == 0:
            raise ShapeError("sentence_logprob: empty sentence")
        batch = make_batch([(list(src_ids), list(tgt_ids))])
        with tc.no_grad():
            loss, _ = self.batch_loss(batch, train_mode=False)
        return -float(loss.data)

    # -- batching ------------------------------------------------------------

    def make_train_batches(self, pairs, size: int, seed) -> list["Batch"]:
        groups = bucket_indices([len(s) for s, _ in pairs], size, seed)
        return [make_batch([pairs[i] for i in g], g) for g in groups]

    def iter_eval_batches(self, pairs, size: int = 32):
        for g in eval_chunks([len(s) for s, _ in pairs], size):
            yield make_batch([pairs[i] for i in g], g)

    # -- serialization ------------------------------------------------------

    def save(self, path: str) -> None:
        write_container(
            path,
            self.kind,
            self.config.to_dict(),
            {"src": self.src_vocab.types, "tgt": self.tgt_vocab.types},
            self.params.arrays(),
        )

    def clone(self) -> "Seq2SeqModel":
        params = init_params(self.config, np.random.default_rng(0))
        params.load_arrays(self.params.arrays())
        return Seq2SeqModel(copy.deepcopy(self.config), self.src_vocab, self.tgt_vocab, params)


@dataclass
class Batch:
    """One padded minibatch of id-encoded sentence pairs."""

    src: np.ndarray  # (B, S), <pad> after each row's tokens
    src_len: np.ndarray  # (B,)
    tgt_in: np.ndarray  # (B, T): <s>, then target ids
    tgt_out: np.ndarray  # (B, T): target ids, then </s>
    tgt_mask: np.ndarray  # (B, T) float, 0 at padded steps
    n_tokens: int  # real target tokens including </s>
    pair_indices: list[int] = field(default_factory=list)


def make_batch(pairs: list[tuple[list[int], list[int]]], indices: list[int] | None = None) -> Batch:
    B = len(pairs)
    S = max(len(s) for s, _ in pairs)
    T = max(len(t) for _, t in pairs) + 1  # +1 for the </s> prediction
    src = np.full((B, S), PAD, dtype=np.int64)
    src_len = np.zeros(B, dtype=np.int64)
    tgt_in = np.full((B, T), PAD, dtype=np.int64)
    tgt_out = np.full((B, T), PAD, dtype=np.int64)
    mask = np.zeros((B, T), dtype=np.float64)
    for b, (s, t) in enumerate(pairs):
        src[b, : len(s)] = s
        src_len[b] = len(s)
        tgt_in[b, 0] = BOS
        tgt_in[b, 1 : len(t) + 1] = t
        tgt_out[b, : len(t)] = t
        tgt_out[b, len(t)] = EOS
        mask[b, : len(t) + 1] = 1.0
    return Batch(src, src_len, tgt_in, tgt_out, mask, int(mask.sum()),
                 list(indices) if indices is not None else list(range(B)))


# -- model files --------------------------------------------------------------


def save_model(model, path: str) -> None:
    """Write any supported model (seq2seq or LM) to its snapshot file."""
    model.save(path)


def load_model(path: str):
    """Load a snapshot; returns a Seq2SeqModel or a LanguageModel by kind."""
    kind, config, vocabs, arrays = read_container(path)
    if kind == "lm":
        from .rnn_lm import LanguageModel, LMConfig

        model = LanguageModel(LMConfig.from_dict(config), Vocabulary(vocabs["tgt"]))
        model.params.load_arrays(arrays)
        return model
    cfg = ModelConfig.from_dict(config)
    model = Seq2SeqModel(cfg, Vocabulary(vocabs["src"]), Vocabulary(vocabs["tgt"]))
    model.params.load_arrays(arrays)
    return model
