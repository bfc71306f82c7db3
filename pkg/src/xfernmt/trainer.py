"""Minibatch SGD with gradient clipping and plateau-driven learning-rate decay.

One training run owns a model and mutates its parameters in place; the best
snapshot by dev perplexity is restored before returning, so a run that
overfits late still hands back its best state.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .batching import bucket_indices
from .errors import DataError, NumericError
from .ioutil import atomic_write_text
from .seq2seq import make_batch

PLATEAU_EPS = 1e-6

CURVE_HEADER = ["epoch", "train_ppl", "dev_ppl", "lr", "seconds"]


@dataclass
class TrainConfig:
    """Optimizer settings for one run."""

    epochs: int = 10
    minibatch_size: int = 16
    lr: float = 0.5
    decay: float = 0.9
    clip_threshold: float = 5.0
    dropout_p: float | None = None  # None keeps the model's configured rate
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.minibatch_size < 1:
            raise ValueError(f"minibatch_size must be >= 1, got {self.minibatch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if self.clip_threshold <= 0:
            raise ValueError(f"clip_threshold must be positive, got {self.clip_threshold}")
        if self.dropout_p is not None and not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")


@dataclass
class EpochRecord:
    epoch: int
    train_ppl: float
    dev_ppl: float
    lr: float
    seconds: float


@dataclass
class LearningCurve:
    """Per-epoch training trajectory, serializable as headered CSV."""

    records: list[EpochRecord]

    def __post_init__(self):
        for i, r in enumerate(self.records):
            if r.epoch != i + 1:
                raise DataError(f"curve epochs must run 1..n, got {r.epoch} at row {i}")

    @property
    def best_dev_ppl(self) -> float:
        # Min over an empty curve is +inf so a zero-epoch run still reports.
        return min((r.dev_ppl for r in self.records), default=math.inf)

    def write_csv(self, path: str) -> None:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(CURVE_HEADER)
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_ppl), repr(r.dev_ppl), repr(r.lr), repr(r.seconds)])
        atomic_write_text(path, buf.getvalue())

    @classmethod
    def read_csv(cls, path: str) -> "LearningCurve":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != CURVE_HEADER:
            raise DataError(f"bad learning-curve header in {path}")
        records = []
        for row in rows[1:]:
            if len(row) != len(CURVE_HEADER):
                raise DataError(f"bad learning-curve row in {path}: {row!r}")
            records.append(EpochRecord(int(row[0]), float(row[1]), float(row[2]),
                                       float(row[3]), float(row[4])))
        return cls(records)


def make_minibatches(pairs, size: int, seed) -> list:
    """Shuffle, stable-sort by source length, chunk, shuffle chunk order.

    Deterministic per seed.  With size >= len(pairs) the whole corpus comes
    back as a single batch.
    """
    if not pairs:
        raise DataError("cannot batch an empty corpus")
    groups = bucket_indices([len(s) for s, _ in pairs], size, seed)
    return [make_batch([pairs[i] for i in g], g) for g in groups]


def perplexity(model, corpus, batch_size: int = 32) -> float:
    """exp(total NLL / total predicted tokens) over a corpus, eval mode."""
    if not corpus:
        raise DataError("perplexity of an empty corpus is undefined")
    total_nll = 0.0
    total_tokens = 0
    with tc.no_grad():
        for batch in model.iter_eval_batches(corpus, batch_size):
            loss, n = model.batch_loss(batch, train_mode=False)
            total_nll += float(loss.data)
            total_tokens += n
    return math.exp(total_nll / total_tokens)


def train(model, train_corpus, dev_corpus, config: TrainConfig,
          mask=None, parent_arrays=None, l2_lambda: float = 0.0):
    """Run SGD for config.epochs epochs; returns (model, LearningCurve).

    The learning rate is multiplied by config.decay after every epoch whose
    dev perplexity fails to improve on the best seen so far.  Frozen blocks
    in ``mask`` receive no updates.  With ``parent_arrays`` and a positive
    ``l2_lambda``, every unfrozen gradient is augmented with
    lambda * (theta - theta_parent) before clipping.
    """
    if not train_corpus:
        raise DataError("cannot train on an empty corpus")
    if not dev_corpus:
        raise DataError("cannot train without a dev corpus")
    if config.dropout_p is not None:
        model.config.dropout_p = config.dropout_p
    if l2_lambda < 0:
        raise ValueError(f"l2_lambda must be >= 0, got {l2_lambda}")
    if l2_lambda > 0 and parent_arrays is None:
        raise ValueError("l2_lambda > 0 requires parent arrays")

    lr = config.lr
    best_dev = math.inf
    best_arrays = None
    records: list[EpochRecord] = []

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        batches = model.make_train_batches(
            train_corpus, config.minibatch_size, seed=[config.seed, epoch, 0])
        rng = np.random.default_rng([config.seed, epoch, 1])
        epoch_nll = 0.0
        epoch_tokens = 0
        for i, batch in enumerate(batches):
            model.params.zero_grad()
            loss_sum, n_tokens = model.batch_loss(batch, train_mode=True, rng=rng)
            if not np.isfinite(loss_sum.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, minibatch {i}")
            n_rows = len(batch.pair_indices)
            tc.mul(loss_sum, 1.0 / n_rows).backward()
            grads = model.params.grads()
            if l2_lambda > 0:
                from .transfer import l2_toward_parent

                l2_toward_parent(grads, model.params, parent_arrays, l2_lambda, mask)
            tc.clip_gradients(grads, config.clip_threshold)
            tc.sgd_step(model.params, grads, lr, mask)
            epoch_nll += float(loss_sum.data)
            epoch_tokens += n_tokens
        train_ppl = math.exp(epoch_nll / epoch_tokens)
        dev_ppl = perplexity(model, dev_corpus)
        if dev_ppl < best_dev - PLATEAU_EPS:
            best_dev = dev_ppl
            best_arrays = model.params.clone_arrays()
        else:
            lr *= config.decay
        records.append(EpochRecord(epoch, train_ppl, dev_ppl, lr,
                                   time.perf_counter() - t0))
    if best_arrays is not None:
        model.params.load_arrays(best_arrays)
    return model, LearningCurve(records)
