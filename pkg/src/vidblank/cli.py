"""Command-line entry point.

Subcommands: train, eval, predict, gradcheck, gen-synth. Any long flag can
also be supplied through a JSON config file (--config, keys named like the
flags); explicitly passed flags win over the file. Every subcommand
validates its inputs before writing anything, and a fixed --seed makes runs
end-to-end repeatable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import synth as synth_mod
from . import train as train_mod
from .data import FeatureStore, load_dataset, load_embeddings, write_metrics
from .errors import ConfigError
from .model import ModelDims, forward, init_model
from .tensor import cross_entropy_with_logits, grad_check, no_grad
from .text import BlankSentence, EmbeddingTable


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidblank",
        description="Fill-in-the-blank prediction over captioned video clips",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write the best checkpoint")
    p.add_argument("--dataset", help="training TSV path")
    p.add_argument("--val-dataset", help="validation TSV path")
    p.add_argument("--features-dir", help="directory of <video_id>.vfb files")
    p.add_argument("--embeddings", help="word-vector text file")
    p.add_argument("--config", help="JSON file of flag values")
    p.add_argument("--mode", choices=["full", "sentence", "left_only"], default="full")
    p.add_argument("--regime", choices=["e2e", "incremental"], default="e2e")
    p.add_argument("--init-from", help="sentence checkpoint for incremental init")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--u-dim", type=int, default=1000, help="merge vector width")
    p.add_argument("--hidden", type=int, default=512, help="LSTM hidden width")
    p.add_argument("--attn-dim", type=int, default=512)
    p.add_argument("--emb-dim", type=int, default=None,
                   help="expected embedding width (checked against the file)")
    p.add_argument("--no-right-reverse", action="store_true",
                   help="feed the right fragment in sentence order")
    p.add_argument("--min-answer-freq", type=int, default=1)

    p = sub.add_parser("eval", help="print a checkpoint's accuracy on a dataset")
    p.add_argument("--dataset", help="TSV dataset path")
    p.add_argument("--features-dir", help="directory of <video_id>.vfb files")
    p.add_argument("--embeddings", help="word-vector text file")
    p.add_argument("--config", help="JSON file of flag values")
    p.add_argument("--checkpoint", help="model checkpoint to load")

    p = sub.add_parser("predict", help="print top answers per record")
    p.add_argument("--dataset", help="TSV dataset path")
    p.add_argument("--features-dir", help="directory of <video_id>.vfb files")
    p.add_argument("--embeddings", help="word-vector text file")
    p.add_argument("--config", help="JSON file of flag values")
    p.add_argument("--checkpoint", help="model checkpoint to load")
    p.add_argument("--top-n", type=int, default=5)
    p.add_argument("--dump-attention", action="store_true",
                   help="also print the per-region attention weights")

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    p.add_argument("--config", help="JSON file of flag values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regions", type=int, default=4)
    p.add_argument("--channels", type=int, default=6)
    p.add_argument("--emb-dim", type=int, default=5)
    p.add_argument("--hidden", type=int, default=7)
    p.add_argument("--u-dim", type=int, default=8)
    p.add_argument("--attn-dim", type=int, default=6)
    p.add_argument("--answers", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-5)

    p = sub.add_parser("gen-synth", help="write a synthetic corpus")
    p.add_argument("--config", help="JSON file of flag values")
    p.add_argument("--out-dir", help="directory to create the corpus in")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-n", type=int, default=2000)
    p.add_argument("--val-n", type=int, default=500)
    p.add_argument("--test-n", type=int, default=500)
    p.add_argument("--regions", type=int, default=16)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--answers", type=int, default=8)
    p.add_argument("--ambiguity", type=int, default=4)
    p.add_argument("--visual-frac", type=float, default=0.5)
    p.add_argument("--emb-dim", type=int, default=16)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--signal-ratio", type=float, default=3.0)
    p.add_argument("--frames", type=int, default=1)
    return parser


def _apply_config_file(args, argv) -> None:
    """Fill flags from the JSON config file; flags typed on the command line
    keep priority (a flag counts as typed if it appears in argv)."""
    if not getattr(args, "config", None):
        return
    with open(args.config, encoding="utf-8") as fh:
        try:
            loaded = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
    if not isinstance(loaded, dict):
        raise ConfigError(f"{args.config}: config must be a JSON object")
    typed = set()
    for token in argv:
        if token.startswith("--"):
            typed.add(token[2:].split("=", 1)[0].replace("-", "_"))
    for key, value in loaded.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr) or attr == "config":
            raise ConfigError(f"{args.config}: unknown config key {key!r}")
        if attr not in typed:
            setattr(args, attr, value)


def _require(args, *names) -> None:
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise ConfigError(f"missing required flags: {flags}")


def _check_writable(path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise ConfigError(f"output directory {parent} does not exist")


def cmd_train(args) -> int:
    _require(args, "dataset", "val_dataset", "embeddings", "out")
    regime = "incremental" if args.regime == "incremental" else "end_to_end"
    cfg = train_mod.TrainingConfig(
        mode=args.mode,
        regime=regime,
        lr=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
        init_checkpoint=args.init_from,
        answer_min_freq=args.min_answer_freq,
    )
    cfg.validate()
    if args.mode == "full":
        _require(args, "features_dir")
    _check_writable(args.out)
    table = load_embeddings(args.embeddings)
    if args.emb_dim is not None and table.width != args.emb_dim:
        raise ConfigError(
            f"--emb-dim {args.emb_dim} but embedding file is {table.width}-wide"
        )
    train_set = load_dataset(args.dataset)
    if not train_set:
        raise ConfigError(f"{args.dataset}: empty training set")
    val_set = load_dataset(args.val_dataset)
    if not val_set:
        raise ConfigError(f"{args.val_dataset}: empty validation set")
    store = FeatureStore(args.features_dir) if args.features_dir else None
    vocab = train_mod.build_answer_vocab(train_set, cfg.answer_min_freq)
    dims = ModelDims(
        emb_dim=table.width,
        hidden_dim=args.hidden,
        merge_dim=args.u_dim,
        attn_dim=args.attn_dim,
        channels=store.get(train_set[0].video_id).shape[1] if args.mode == "full" else 1,
        right_reverse=not args.no_right_reverse,
    )
    model = init_model(dims, args.mode, len(vocab), vocab, seed=args.seed)
    if regime == "incremental":
        train_mod.init_incremental(args.init_from, model)
    result = train_mod.train(model, train_set, val_set, table, store, cfg)
    train_mod.save_model(args.out, model, cfg, result.adagrad)
    write_metrics(args.out + ".metrics.tsv", result.metrics)
    for row in result.metrics:
        print(f"{row.epoch}\t{row.train_loss:.6f}\t{row.val_loss:.6f}\t{row.val_acc:.6f}")
    print(f"best_epoch\t{result.best_epoch}")
    print(f"checkpoint\t{args.out}")
    return 0


def cmd_eval(args) -> int:
    _require(args, "checkpoint", "dataset", "embeddings")
    model, _, _ = train_mod.load_model(args.checkpoint)
    if model.mode == "full":
        _require(args, "features_dir")
    table = load_embeddings(args.embeddings)
    dataset = load_dataset(args.dataset)
    store = FeatureStore(args.features_dir) if model.mode == "full" else None
    _, acc, oov = train_mod.evaluate_metrics(model, dataset, table, store)
    if oov:
        print(f"note: {oov:.4f} of answers are outside the model vocabulary",
              file=sys.stderr)
    print(f"{acc:.6f}")
    return 0


def cmd_predict(args) -> int:
    _require(args, "checkpoint", "dataset", "embeddings")
    model, _, _ = train_mod.load_model(args.checkpoint)
    if model.mode == "full":
        _require(args, "features_dir")
    table = load_embeddings(args.embeddings)
    dataset = load_dataset(args.dataset)
    store = FeatureStore(args.features_dir) if model.mode == "full" else None
    top_n = max(1, args.top_n)
    with no_grad():
        for sample in dataset:
            pooled = store.get(sample.video_id) if model.mode == "full" else None
            logits, attn = forward(model, sample, table, pooled)
            p = np.exp(logits.data - logits.data.max())
            p /= p.sum()
            ranked = np.argsort(-p, kind="stable")[:top_n]
            pairs = " ".join(f"{model.answer_vocab[i]}:{p[i]:.6f}" for i in ranked)
            print(f"{sample.video_id}\t{pairs}")
            if args.dump_attention and attn is not None:
                weights = " ".join(f"{w:.6f}" for w in attn.data)
                print(f"{sample.video_id}\tattention\t{weights}")
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    dims = ModelDims(
        emb_dim=args.emb_dim,
        hidden_dim=args.hidden,
        merge_dim=args.u_dim,
        attn_dim=args.attn_dim,
        channels=args.channels,
    )
    model = init_model(dims, "full", args.answers,
                       [f"w{i}" for i in range(args.answers)], seed=args.seed)
    words = ["a", "b", "c", "d", "e"]
    table = EmbeddingTable(
        vocab={w: i for i, w in enumerate(words)},
        vectors=rng.standard_normal((len(words), args.emb_dim)),
    )
    sample = BlankSentence(
        left_tokens=["a", "b", "c"], right_tokens=["d", "e"], answer="w0", video_id="g0"
    )
    pooled = rng.standard_normal((args.regions, args.channels))
    target = int(rng.integers(args.answers))
    params = list(model.named_tensors().values())

    def objective(_params):
        logits, _ = forward(model, sample, table, pooled)
        return cross_entropy_with_logits(logits, target)

    err = grad_check(objective, params, eps=args.eps)
    print(f"max_relative_error\t{err:.3e}")
    ok = err < 1e-4
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_gen_synth(args) -> int:
    _require(args, "out_dir")
    cfg = synth_mod.SynthConfig(
        seed=args.seed,
        train_n=args.train_n,
        val_n=args.val_n,
        test_n=args.test_n,
        regions=args.regions,
        channels=args.channels,
        n_answers=args.answers,
        ambiguity=args.ambiguity,
        visual_fraction=args.visual_frac,
        emb_dim=args.emb_dim,
        noise_sigma=args.noise_sigma,
        signal_ratio=args.signal_ratio,
        frames=args.frames,
    )
    cfg.validate()
    paths = synth_mod.gen_corpus(cfg, args.out_dir)
    for key in ("train", "val", "test", "embeddings", "manifest"):
        print(f"{key}\t{paths[key]}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "gen-synth": cmd_gen_synth,
}


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, argv)
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
