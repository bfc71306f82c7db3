"""xfernmt: a desk-scale neural machine translation laboratory for
parent-to-child transfer learning.

The package trains 2-layer LSTM encoder-decoder models with local attention
from scratch (exact reverse-mode gradients over numpy arrays), re-initializes
low-resource child models from trained parents with per-block freezing and
embedding assignment, decodes by beam search with ensembling and unknown-word
replacement, and rescores external n-best lists.
"""

__version__ = "0.1.0"

from .errors import (
    ChecksumError,
    ContainerError,
    DataError,
    MissingBlockError,
    NumericError,
    ShapeError,
    TruncatedError,
    VersionError,
    VocabularyError,
    XferError,
)
from .seq2seq import ModelConfig, Seq2SeqModel, load_model, save_model
from .trainer import LearningCurve, TrainConfig, perplexity, train
from .transfer import (
    AssignmentMap,
    FreezeMask,
    TTable,
    compose_ttables,
    dictionary_assignment,
    lm_as_parent,
    random_assignment,
    transfer_init,
)
from .rnn_lm import LanguageModel, LMConfig, lm_score, lm_train
from .decoder import Ensemble, Hypothesis, beam_search, translate, unk_replace
from .rescorer import NBestList, add_feature, rerank, tune_weights
from .evalkit import bleu
from .synth import (
    GrammarSpec,
    gen_toy_bitext,
    make_copy_corpus,
    make_perm_corpus,
    oracle_translate,
    permute_vocabulary,
)
from .vocab import Vocabulary, encode_pairs, read_corpus, write_corpus
