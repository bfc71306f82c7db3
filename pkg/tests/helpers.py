"""Shared test utilities: finite-difference gradients and tiny model factories."""

from __future__ import annotations

import numpy as np

from xfernmt.seq2seq import ModelConfig, Seq2SeqModel
from xfernmt.vocab import RESERVED, Vocabulary

REL_TOL = 1e-4
ABS_FLOOR = 1e-4
ABS_TOL = 1e-8


def numeric_grad(f, array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar f() w.r.t. one array in place."""
    g = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + eps
        fp = f()
        array[idx] = orig - eps
        fm = f()
        array[idx] = orig
        g[idx] = (fp - fm) / (2.0 * eps)
        it.iternext()
    return g


def assert_grads_close(analytic: np.ndarray, numeric: np.ndarray, label: str = "") -> None:
    """Relative error below REL_TOL where values are sizable, absolute below
    ABS_TOL where both are tiny."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape, f"{label}: shape {analytic.shape} vs {numeric.shape}"
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    diff = np.abs(analytic - numeric)
    sizable = denom > ABS_FLOOR
    rel = diff[sizable] / denom[sizable]
    if rel.size:
        assert rel.max() < REL_TOL, f"{label}: max relative error {rel.max():.3e}"
    tiny = diff[~sizable]
    if tiny.size:
        assert tiny.max() < ABS_TOL, f"{label}: max absolute error {tiny.max():.3e}"


def make_vocab(n_words: int, prefix: str = "w") -> Vocabulary:
    """A vocabulary of n_words plain types (total size n_words + reserved)."""
    return Vocabulary([f"{prefix}{i:02d}" for i in range(n_words)])


def tiny_model(src_words: int = 4, tgt_words: int = 5, hidden: int = 4,
               seed: int = 0, precision: str = "float64", **kw) -> Seq2SeqModel:
    sv = make_vocab(src_words, "s")
    tv = make_vocab(tgt_words, "t")
    kw.setdefault("dropout_p", 0.0)
    cfg = ModelConfig(src_vocab_size=len(sv), tgt_vocab_size=len(tv),
                      hidden_size=hidden, precision=precision, **kw)
    return Seq2SeqModel(cfg, sv, tv, rng=np.random.default_rng(seed))
