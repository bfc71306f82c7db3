"""Command-line interface: train, decode, rescore, tune, eval, lm-train, synth.

Configuration comes from an optional flat key=value file plus flags; flags
win.  Corpus files are UTF-8 plain text, one whitespace-tokenized sentence
per line, with parallel files aligned by line number and addressed by a
shared path prefix (prefix.src / prefix.tgt).  Every output is written
atomically.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import plots
from .decoder import Ensemble, beam_search, translate, unk_replace
from .errors import NumericError, XferError
from .evalkit import bleu
from .rescorer import (
    EXTERNAL_FEATURE,
    NBestEntry,
    NBestList,
    add_feature,
    read_nbest,
    read_weights,
    rerank,
    tune_weights,
    write_nbest,
    write_weights,
)
from .rnn_lm import lm_train
from .seq2seq import BLOCK_ORDER, ModelConfig, Seq2SeqModel, load_model
from .synth import (
    GrammarSpec,
    gen_toy_bitext,
    make_copy_corpus,
    make_perm_corpus,
    permute_vocabulary,
)
from .trainer import TrainConfig, train
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
from .vocab import N_RESERVED, Vocabulary, encode_pairs, read_corpus, write_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flags or malformed configuration; exits 1."""


class Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems by default; this tool reserves 2
    # for data errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


CONFIG_TYPES = {
    "hidden_size": int,
    "layers": int,
    "dropout_p": float,
    "init_range": float,
    "attention_window": int,
    "attention": str,
    "attention_score": str,
    "precision": str,
    "epochs": int,
    "minibatch_size": int,
    "lr": float,
    "decay": float,
    "clip_threshold": float,
    "src_vocab_max": int,
    "tgt_vocab_max": int,
}

MODEL_KEYS = ("hidden_size", "layers", "dropout_p", "init_range",
              "attention_window", "attention", "attention_score", "precision")
TRAIN_KEYS = ("epochs", "minibatch_size", "lr", "decay", "clip_threshold", "dropout_p")


def read_config_file(path: str) -> dict:
    values: dict = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    for ln, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            raise UsageError(f"{path}:{ln}: expected key=value, got {raw.strip()!r}")
        if key not in CONFIG_TYPES:
            raise UsageError(f"{path}:{ln}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_TYPES[key](value)
        except ValueError:
            raise UsageError(f"{path}:{ln}: bad value for {key}: {value!r}") from None
    return values


def merged_config(args) -> dict:
    """defaults < config file < repeated --set overrides."""
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for pair in getattr(args, "set", None) or []:
        key, eq, value = pair.partition("=")
        if not eq or key not in CONFIG_TYPES:
            raise UsageError(f"bad --set {pair!r}; known keys: {', '.join(sorted(CONFIG_TYPES))}")
        try:
            cfg[key] = CONFIG_TYPES[key](value)
        except ValueError:
            raise UsageError(f"bad --set value for {key}: {value!r}") from None
    return cfg


def train_config_from(cfg: dict, seed: int) -> TrainConfig:
    kwargs = {k: cfg[k] for k in TRAIN_KEYS if k in cfg}
    try:
        return TrainConfig(seed=seed, **kwargs)
    except ValueError as e:
        raise UsageError(str(e)) from None


def model_config_from(cfg: dict, src_size: int, tgt_size: int) -> ModelConfig:
    kwargs = {k: cfg[k] for k in MODEL_KEYS if k in cfg}
    try:
        return ModelConfig(src_vocab_size=src_size, tgt_vocab_size=tgt_size, **kwargs)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _read_parallel(prefix: str) -> tuple[list[list[str]], list[list[str]]]:
    return read_corpus(prefix + ".src"), read_corpus(prefix + ".tgt")


def _freeze_from_flag(value: str | None, transferring: bool) -> FreezeMask:
    if value is None:
        return FreezeMask.default_child() if transferring else FreezeMask.none()
    if value == "none":
        return FreezeMask.none()
    names = [n for n in value.split(",") if n]
    bad = [n for n in names if n not in BLOCK_ORDER]
    if bad:
        raise UsageError(
            f"unknown block(s) {', '.join(bad)}; valid blocks: {', '.join(BLOCK_ORDER)}")
    return FreezeMask(frozenset(names))


def _assignment_from_flag(value: str, parent, child_src_vocab: Vocabulary, seed: int):
    if value == "random":
        return random_assignment(child_src_vocab, len(parent.src_vocab), seed)
    if value == "identity":
        # Name-match assignment: a child type present in the parent keeps its
        # own embedding row; anything else falls back to a seeded random row.
        identity = TTable({child_src_vocab.token_of(i): {child_src_vocab.token_of(i): 1.0}
                           for i in range(N_RESERVED, len(child_src_vocab))})
        return dictionary_assignment(identity, child_src_vocab, parent.src_vocab, seed)
    if value.startswith("dict:"):
        paths = [p for p in value[len("dict:"):].split(",") if p]
        if not paths or len(paths) > 2:
            raise UsageError("--assignment dict: takes one composed table or two to compose")
        table = TTable.read(paths[0])
        if len(paths) == 2:
            table = compose_ttables(table, TTable.read(paths[1]))
        return dictionary_assignment(table, child_src_vocab, parent.src_vocab, seed)
    raise UsageError(f"unknown assignment {value!r}; use random, identity, or dict:<files>")


# -- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = merged_config(args)
    train_src, train_tgt = _read_parallel(args.train)
    dev_src, dev_tgt = _read_parallel(args.dev)
    src_vocab = Vocabulary.from_corpus(train_src, cfg.get("src_vocab_max"))
    tgt_vocab = Vocabulary.from_corpus(train_tgt, cfg.get("tgt_vocab_max"))

    if args.init_from:
        parent = load_model(args.init_from)
        if parent.kind == "lm":
            skeleton_cfg = model_config_from(cfg, len(src_vocab), len(tgt_vocab))
            skeleton_cfg.hidden_size = parent.config.hidden_size
            skeleton_cfg.layers = parent.config.layers
            skeleton = Seq2SeqModel(skeleton_cfg, src_vocab, tgt_vocab,
                                    rng=np.random.default_rng(args.seed))
            model = lm_as_parent(parent, skeleton)
            model.config.parent = args.init_from
        else:
            assignment = _assignment_from_flag(args.assignment, parent, src_vocab, args.seed)
            model = transfer_init(parent, src_vocab, tgt_vocab, assignment,
                                  seed=args.seed, provenance=args.init_from)
        mask = _freeze_from_flag(args.freeze, transferring=True)
    else:
        model_cfg = model_config_from(cfg, len(src_vocab), len(tgt_vocab))
        model = Seq2SeqModel(model_cfg, src_vocab, tgt_vocab,
                             rng=np.random.default_rng(args.seed))
        mask = _freeze_from_flag(args.freeze, transferring=False)

    train_pairs = encode_pairs(train_src, train_tgt, src_vocab, tgt_vocab)
    dev_pairs = encode_pairs(dev_src, dev_tgt, src_vocab, tgt_vocab)
    tcfg = train_config_from(cfg, args.seed)
    parent_arrays = model.params.clone_arrays() if args.l2 > 0 else None
    model, curve = train(model, train_pairs, dev_pairs, tcfg,
                         mask=mask, parent_arrays=parent_arrays, l2_lambda=args.l2)
    model.save(args.out)
    curve.write_csv(args.out + ".curve.csv")
    plots.save_curve_png(curve, args.out + ".curve.png")
    print(f"model: {args.out}")
    print(f"curve: {args.out}.curve.csv {args.out}.curve.png")
    print(f"best dev perplexity: {curve.best_dev_ppl:.4f}")
    return EXIT_OK


def cmd_decode(args) -> int:
    models = [load_model(p) for p in args.model.split(",") if p]
    for m in models:
        if m.kind != "seq2seq":
            raise UsageError(f"{args.model}: decoding needs translation models")
    ens = Ensemble(models, mode=args.ensemble_mode)
    sentences = read_corpus(args.input)
    table = TTable.read(args.unk_dict) if args.unk_dict else None

    if args.nbest:
        entries = []
        for sid, tokens in enumerate(sentences):
            if not tokens:
                continue
            hyps = beam_search(ens, ens.src_vocab.encode(tokens), args.beam,
                               args.max_len)[: args.nbest]
            for rank, h in enumerate(hyps, 1):
                surface = (unk_replace(h, tokens, ens.tgt_vocab, table)
                           if args.replace_unk else h.surface(ens.tgt_vocab))
                entries.append(NBestEntry(sid, surface, {EXTERNAL_FEATURE: h.score}, rank))
        write_nbest(NBestList(entries), args.output)
    else:
        out = [translate(ens, s, args.beam, args.max_len, table, args.replace_unk)
               for s in sentences]
        write_corpus(args.output, out)
    print(f"decoded {len(sentences)} sentences -> {args.output}")
    return EXIT_OK


def cmd_rescore(args) -> int:
    nbest = read_nbest(args.nbest)
    if args.weights:
        weights = read_weights(args.weights)
        best = rerank(nbest, weights)
        write_corpus(args.output, [e.tokens for e in best])
        print(f"reranked {len(nbest.sids())} sentences -> {args.output}")
        return EXIT_OK
    if not args.model or not args.feature:
        raise UsageError("rescore needs either --weights, or --model with --feature")
    scorer = load_model(args.model)
    sources = read_corpus(args.source) if args.source else None
    out = add_feature(nbest, scorer, args.feature, sources)
    write_nbest(out, args.output)
    print(f"added feature {args.feature!r} -> {args.output}")
    return EXIT_OK


def cmd_tune(args) -> int:
    nbest = read_nbest(args.nbest)
    refs = read_corpus(args.refs)
    names = [n for n in args.features.split(",") if n]
    weights = tune_weights(nbest, refs, names, args.step)
    write_weights(weights, args.out)
    best = rerank(nbest, weights)
    score = bleu([e.tokens for e in best], refs)
    print(" ".join(f"{k}={weights[k]:.2f}" for k in sorted(weights)))
    print(f"BLEU={score!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    hyp = read_corpus(args.hyp)
    ref = read_corpus(args.ref)
    score = bleu(hyp, ref)
    print(f"BLEU={score!r}")
    return EXIT_OK


def cmd_lm_train(args) -> int:
    cfg = merged_config(args)
    train_sents = read_corpus(args.train)
    dev_sents = read_corpus(args.dev)
    tcfg = train_config_from(cfg, args.seed)
    model, curve = lm_train(train_sents, dev_sents, tcfg,
                            hidden_size=cfg.get("hidden_size", 64),
                            layers=cfg.get("layers", 2),
                            max_vocab=cfg.get("tgt_vocab_max"),
                            precision=cfg.get("precision", "float32"),
                            seed=args.seed)
    model.save(args.out)
    curve.write_csv(args.out + ".curve.csv")
    plots.save_curve_png(curve, args.out + ".curve.png", title="language model")
    print(f"model: {args.out}")
    print(f"best dev perplexity: {curve.best_dev_ppl:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.mode == "bitext":
        spec = GrammarSpec(vocab_size=args.vocab_size, min_len=args.min_len,
                           max_len=args.max_len, branching=args.branching,
                           tgt_seed=args.tgt_seed, src_map_seed=args.map_seed,
                           reorder=args.reorder, src_prefix=args.src_prefix)
        pairs = gen_toy_bitext(spec, args.count, args.seed)
        write_corpus(args.out + ".src", [s for s, _ in pairs])
        write_corpus(args.out + ".tgt", [t for _, t in pairs])
        print(f"wrote {len(pairs)} pairs -> {args.out}.src {args.out}.tgt")
    elif args.mode in ("copy", "perm"):
        if not args.input:
            raise UsageError(f"synth {args.mode} needs --input")
        mono = [s for s in read_corpus(args.input) if s]
        pairs = (make_copy_corpus(mono) if args.mode == "copy"
                 else make_perm_corpus(mono, args.seed))
        write_corpus(args.out + ".src", [s for s, _ in pairs])
        write_corpus(args.out + ".tgt", [t for _, t in pairs])
        print(f"wrote {len(pairs)} pairs -> {args.out}.src {args.out}.tgt")
    else:  # permute-vocab
        if not args.input:
            raise UsageError("synth permute-vocab needs --input")
        corpus = read_corpus(args.input)
        permuted, bijection = permute_vocabulary(corpus, args.seed)
        write_corpus(args.out, permuted)
        if args.map_out:
            from .ioutil import atomic_write_text

            atomic_write_text(args.map_out,
                              "".join(f"{a} {bijection[a]}\n" for a in sorted(bijection)))
        print(f"wrote {len(permuted)} lines -> {args.out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="xfernmt",
                    description="Desk-scale NMT transfer-learning laboratory.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    p = sub.add_parser("train", help="train a translation model")
    common(p)
    p.add_argument("--train", required=True, metavar="PREFIX",
                   help="training corpus prefix (PREFIX.src / PREFIX.tgt)")
    p.add_argument("--dev", required=True, metavar="PREFIX", help="dev corpus prefix")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--init-from", help="parent snapshot (translation model or LM)")
    p.add_argument("--freeze", metavar="BLOCKS",
                   help="comma-separated blocks to freeze, or 'none' "
                        "(default: target embeddings when transferring)")
    p.add_argument("--assignment", default="random",
                   help="source embedding assignment: random, identity, or "
                        "dict:<table[,table]> (default random)")
    p.add_argument("--l2", type=float, default=0.0,
                   help="L2 pull toward the initial (parent) parameters")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="translate a corpus by beam search")
    common(p)
    p.add_argument("--model", required=True, help="model path(s), comma-separated to ensemble")
    p.add_argument("--input", required=True, help="source corpus file")
    p.add_argument("--output", required=True, help="output file")
    p.add_argument("--beam", type=int, default=12)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--nbest", type=int, default=0, metavar="K",
                   help="write a K-best list instead of 1-best text")
    p.add_argument("--unk-dict", help="translation table for <unk> replacement")
    p.add_argument("--no-replace-unk", dest="replace_unk", action="store_false")
    p.add_argument("--ensemble-mode", choices=("prob", "log"), default="prob")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("rescore", help="add a model feature to an n-best list, "
                                       "or rerank it with tuned weights")
    common(p)
    p.add_argument("--nbest", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--model", help="scorer snapshot (translation model or LM)")
    p.add_argument("--feature", help="name of the feature to add")
    p.add_argument("--source", help="source corpus (required for translation-model scoring)")
    p.add_argument("--weights", help="weights file: rerank and write 1-best text")
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("tune", help="grid-search feature weights on dev BLEU")
    common(p)
    p.add_argument("--nbest", required=True)
    p.add_argument("--refs", required=True, help="reference corpus")
    p.add_argument("--features", required=True, help="comma-separated feature names")
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--out", required=True, help="output weights file")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="corpus BLEU of a hypothesis file")
    common(p)
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lm-train", help="train a language model")
    common(p)
    p.add_argument("--train", required=True, help="training text, one sentence per line")
    p.add_argument("--dev", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lm_train)

    p = sub.add_parser("synth", help="generate synthetic corpora")
    common(p)
    p.add_argument("--mode", required=True,
                   choices=("bitext", "copy", "perm", "permute-vocab"))
    p.add_argument("--out", required=True,
                   help="output prefix (bitext/copy/perm) or file (permute-vocab)")
    p.add_argument("--input", help="input corpus (copy, perm, permute-vocab)")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--vocab-size", type=int, default=12)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--branching", type=int, default=3)
    p.add_argument("--tgt-seed", type=int, default=7)
    p.add_argument("--map-seed", type=int, default=11)
    p.add_argument("--reorder", choices=("none", "swap", "reverse"), default="swap")
    p.add_argument("--src-prefix", default="s")
    p.add_argument("--map-out", help="where to write the vocabulary bijection")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"xfernmt: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"xfernmt: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (XferError, OSError) as e:
        print(f"xfernmt: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"xfernmt: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
