"""Command-line entry points.

Subcommands:

    synth      generate a synthetic sentence-pair dataset (JSONL)
    train      k-fold cross-validated training; writes results.csv, a final
               checkpoint, and optional per-epoch [CLS] dumps
    eval       evaluate a checkpoint on a JSONL dataset
    project    PCA-project [CLS] dumps and score cluster tightness
    gradcheck  run the finite-difference gradient suite

Exit codes: 0 success, 1 data/runtime error, 2 usage error.
A ``--config`` file holds flat ``key=value`` lines mirroring the flags;
flags given on the command line override the file.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import rng as rng_mod
from .analysis import dump_trace, project_dump_dir
from .data import (DataError, PairExample, load_jsonl, pack_dataset, save_jsonl,
                   synth_generate, vocab_for_examples)
from .encoder import EncoderConfig
from .gradcheck import run_gradcheck
from .model import PooledClassifier
from .pooling import HEAD_KINDS
from .train import (TrainConfig, cross_validated_train, evaluate, kfold_split,
                    train_model)


def _read_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


_TRAIN_KEYS = {
    "data": str, "schema": str, "pooling": str, "folds": int, "epochs": int,
    "lr": float, "seed": int, "out": str, "batch_size": int, "lam": float,
    "p_drop": float, "L": int, "H": int, "A": int, "F": int, "s_max": int,
    "dump_epochs": str, "dump_layers": str,
}

_TRAIN_DEFAULTS = {
    "schema": "absa", "pooling": "last", "folds": 10, "epochs": 10,
    "lr": 1e-3, "seed": 0, "out": "runs", "batch_size": 32, "lam": 1e-5,
    "p_drop": 0.1, "L": 4, "H": 32, "A": 4, "F": 64, "s_max": 64,
    "dump_epochs": "", "dump_layers": "",
}


def _resolve(args, file_values):
    """Merge builtin defaults, config-file values, and explicit flags."""
    merged = dict(_TRAIN_DEFAULTS)
    for key, val in file_values.items():
        if key not in _TRAIN_KEYS:
            raise DataError(f"unknown config key {key!r}")
        merged[key] = _TRAIN_KEYS[key](val)
    for key in _TRAIN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    if merged.get("data") is None:
        raise DataError("no dataset given: pass --data or set data= in the config file")
    if merged["pooling"] not in HEAD_KINDS:
        raise DataError(f"invalid pooling {merged['pooling']!r}, "
                        f"expected one of {HEAD_KINDS}")
    return merged


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def _cmd_synth(args):
    examples = synth_generate(args.n, classes=args.classes, seed=args.seed)
    save_jsonl(examples, args.out, "absa")
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


def _cmd_train(args):
    file_values = _read_config_file(args.config) if args.config else {}
    opt = _resolve(args, file_values)
    examples = load_jsonl(opt["data"], opt["schema"])
    config = TrainConfig(lam=opt["lam"], lr=opt["lr"], p_drop=opt["p_drop"],
                         epochs=opt["epochs"], folds=opt["folds"],
                         seed=opt["seed"], batch_size=opt["batch_size"])
    enc = EncoderConfig(L=opt["L"], H=opt["H"], A=opt["A"], F=opt["F"],
                        V=4, S_max=opt["s_max"], p_drop=opt["p_drop"])
    os.makedirs(opt["out"], exist_ok=True)

    dump_epochs = _int_list(opt["dump_epochs"])
    dump_layers = _int_list(opt["dump_layers"])
    epoch_hook = None
    if dump_epochs:
        if not dump_layers:
            dump_layers = list(range(1, opt["L"] + 1))
        labels = np.array([ex.label for ex in examples])
        vocab = vocab_for_examples(examples)
        arrays = pack_dataset(examples, vocab, opt["s_max"])
        _, fold0_test = kfold_split(labels, config.folds, config.seed)[0]
        held_out = tuple(a[fold0_test] for a in arrays)
        dumps_dir = os.path.join(opt["out"], "dumps")

        def epoch_hook(fold, epoch, model):
            # Dump the fold-0 held-out set at the requested epochs.
            if fold == 0 and epoch in dump_epochs:
                dump_trace(model, held_out, epoch, dump_layers, dumps_dir)

    result = cross_validated_train(examples, enc, opt["pooling"], config,
                                   out_csv=os.path.join(opt["out"], "results.csv"),
                                   epoch_hook=epoch_hook)
    print(f"cv mean accuracy {result.mean['accuracy']:.4f}, "
          f"macro-F1 {result.mean['macro_f1']:.4f} over {config.folds} folds")

    # Final model trained on the full dataset, for `eval`.
    labels = np.array([ex.label for ex in examples])
    n_classes = int(labels.max()) + 1
    vocab = vocab_for_examples(examples)
    cfg = replace(enc, V=len(vocab))
    arrays = pack_dataset(examples, vocab, cfg.S_max)
    model = PooledClassifier(cfg, opt["pooling"], n_classes,
                             rng_mod.rng_for(config.seed, rng_mod.INIT, config.folds))
    train_model(model, arrays, config,
                shuffle_rng=rng_mod.rng_for(config.seed, rng_mod.SHUFFLE, config.folds),
                dropout_rng=rng_mod.rng_for(config.seed, rng_mod.DROPOUT, config.folds))
    ckpt = os.path.join(opt["out"], "model.ckpt")
    model.save(ckpt, extra_meta={"vocab": vocab.tokens(), "schema": opt["schema"]})
    print(f"wrote {os.path.join(opt['out'], 'results.csv')} and {ckpt}")
    return 0


def _cmd_eval(args):
    from .data import Vocab
    model, meta = PooledClassifier.load(args.checkpoint)
    vocab = Vocab(meta["vocab"])
    examples = load_jsonl(args.data, meta.get("schema", "absa"))
    arrays = pack_dataset(examples, vocab, model.config.S_max)
    result = evaluate(model, arrays)
    print(f"accuracy {result.accuracy:.4f}")
    print(f"macro_f1 {result.macro_f1:.4f}")
    for c, f1 in enumerate(result.per_class_f1):
        flag = " (no true or predicted instances)" if c in result.empty_classes else ""
        print(f"f1_class{c} {f1:.4f}{flag}")
    return 0


def _cmd_project(args):
    rows = project_dump_dir(args.dumps, args.out)
    for epoch, layer, score, _, _ in sorted(rows):
        print(f"epoch {epoch} layer {layer}: cluster score {score:.4f}")
    return 0


def _cmd_gradcheck(args):
    ok, _ = run_gradcheck(seeds=args.seeds, report=print)
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="clspool",
        description="Train and analyze CLS-trace pooling classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sentence-pair dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="cross-validated training")
    p.add_argument("--data")
    p.add_argument("--schema", choices=["absa", "nli"])
    p.add_argument("--pooling", choices=list(HEAD_KINDS))
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--p-drop", dest="p_drop", type=float)
    p.add_argument("--dump-epochs", dest="dump_epochs",
                   help="comma-separated epochs at which to dump [CLS] states")
    p.add_argument("--dump-layers", dest="dump_layers",
                   help="comma-separated 1-based layers to dump (default: all)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("project", help="PCA-project [CLS] dumps")
    p.add_argument("--dumps", required=True, help="directory of dump CSVs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except (DataError, FileNotFoundError, ValueError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
