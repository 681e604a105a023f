"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Failures print a single ``error kind=<Kind> message=<text>`` line to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import torch

from . import byte_codecs, config as cfgmod, serialization, tokenizer, training
from .errors import ConfigError, ToolkitError
from .evaluation import evaluate
from .training import Regime


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_args(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value by dotted key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bytexformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("tokenize", help="dump token ids and next-char targets for a text")
    p.add_argument("text", nargs="?", help="text to tokenize (default: read --in)")
    p.add_argument("--in", dest="input", help="dataset file; every record is tokenized")
    p.add_argument("--context-n", type=int, default=256)
    _add_config_args(p)

    p = sub.add_parser("encode", help="learn or apply byte-encoding codebooks")
    esub = p.add_subparsers(dest="action", parser_class=_Parser)
    esub.required = True
    q = esub.add_parser("learn-bpe")
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--iterations", type=int, default=10)
    q.add_argument("--merges-per-iter", type=int, default=10)
    q = esub.add_parser("learn-kilograms")
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--n", type=int, default=6)
    q.add_argument("--top-k", type=int, required=True)
    q.add_argument("--flag-limit", type=int, default=12288)
    q = esub.add_parser("apply")
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--transform", required=True, choices=[t.value for t in byte_codecs.Transform])
    q.add_argument("--codebook")
    q.add_argument("--limit", type=int, default=4096)

    for name, helptext in (("pretrain", "next-character pretraining"),
                           ("train", "train with the configured regime"),
                           ("finetune", "fine-tune a pretrained checkpoint")):
        p = sub.add_parser(name, help=helptext)
        _add_config_args(p)

    p = sub.add_parser("eval", help="score a dataset and emit ROC/AUC")
    _add_config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out-dir")

    p = sub.add_parser("gen-data", help="write a synthetic labelled URL corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--frac", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--unlabeled", action="store_true", help="omit labels (pretraining corpus)")

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _ensure_dir(path: str):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)


def cmd_tokenize(args) -> int:
    context_n = args.context_n
    if args.config:
        context_n = cfgmod.load(args.config, args.overrides).model.context_n
    texts = [args.text.encode("latin-1")] if args.text is not None else []
    if args.input:
        texts += [r.text for r in training.read_dataset(args.input)]
    if not texts:
        raise UsageError("tokenize needs a text argument or --in")
    for text in texts:
        seq = tokenizer.encode(text, context_n)
        tgt = tokenizer.next_char_targets(seq)
        print(json.dumps({"ids": list(seq.ids), "length_m": seq.length_m,
                          "cls_index": seq.cls_index, "targets": list(tgt.targets)}))
    return 0


def _read_codebook(path):
    with open(path) as fh:
        return byte_codecs.load_codebook(fh.read())


def cmd_encode(args) -> int:
    records = training.read_dataset(args.input)
    texts = [r.text for r in records]
    _ensure_dir(args.out)
    if args.action == "learn-bpe":
        book = byte_codecs.bpe_learn(texts, args.iterations, args.merges_per_iter)
    elif args.action == "learn-kilograms":
        book = byte_codecs.kilogram_learn(texts, args.n, args.top_k, args.flag_limit)
    else:
        pipe = byte_codecs.EncodingPipeline(transform=args.transform, truncate_limit=args.limit)
        if args.codebook:
            book = _read_codebook(args.codebook)
            if isinstance(book, byte_codecs.MergeTable):
                pipe.merge_table = book
            else:
                pipe.kilograms = book
        with open(args.out, "w") as fh:
            for r in records:
                fh.write(json.dumps({"tokens": byte_codecs.apply_pipeline(r.text, pipe),
                                     "label": r.label}) + "\n")
        return 0
    with open(args.out, "w") as fh:
        fh.write(byte_codecs.dump_codebook(book))
    return 0


def _prepare_records(records, conf: cfgmod.RunConfig):
    """Apply a byte-preserving encoding pipeline to record texts."""
    enc = conf.encoding
    transform = byte_codecs.Transform(enc.transform)
    if transform is byte_codecs.Transform.BASELINE:
        return records
    if transform in (byte_codecs.Transform.BYTE_PAIR, byte_codecs.Transform.BYTE_PAIR_EXTRA):
        raise ConfigError("byte-pair pipelines are preprocessing only; run `encode apply`")
    pipe = byte_codecs.EncodingPipeline(transform=transform, truncate_limit=enc.truncate_limit)
    if enc.codebook:
        pipe.kilograms = _read_codebook(enc.codebook)
    out = []
    for r in records:
        data = bytes(byte_codecs.apply_pipeline(r.text, pipe))
        out.append(training.LabeledRecord(text=data or r.text[:1], label=r.label))
    return out


def cmd_train(args, forced: Optional[Regime]) -> int:
    conf = cfgmod.load(args.config, args.overrides)
    if forced is not None:
        conf.regime.regime = forced
    regime = conf.regime.regime
    needed = ["pretrain"] if regime is Regime.PRETRAIN_NEXT_CHAR and conf.data.train is None else ["train"]
    if regime is Regime.FINE_TUNE:
        needed.append("init_checkpoint")
    cfgmod.check_paths(conf, needed)

    dataset = _prepare_records(training.read_dataset(conf.data.train), conf) if conf.data.train else []
    pretrain = None
    if conf.data.pretrain:
        pretrain = _prepare_records(training.read_dataset(conf.data.pretrain), conf)
    val = _prepare_records(training.read_dataset(conf.data.val), conf) if conf.data.val else None
    initial = None
    if conf.init_checkpoint:
        initial, _, _ = serialization.load_checkpoint(conf.init_checkpoint)
        if initial.config != conf.model and args.config:
            print("note: model config taken from the initial checkpoint", file=sys.stderr)
    torch.manual_seed(conf.seed)
    metrics_path = conf.output.metrics_path()
    ckpt = conf.output.checkpoint_path()
    _ensure_dir(metrics_path)
    _ensure_dir(ckpt)
    result = training.run_regime(dataset, conf.regime, conf.model, pretrain_corpus=pretrain,
                                 initial_model=initial, metrics_path=metrics_path,
                                 val_records=val)
    serialization.save_checkpoint(ckpt, result.model, result.optimizer_state,
                                  extra={"regime": regime.value,
                                         "run_config": cfgmod.to_dict(conf)})
    last = [m for m in result.metrics if "val_auc" in m]
    summary = {"checkpoint": ckpt, "metrics": metrics_path,
               "iterations": sum(1 for m in result.metrics if "iter" in m),
               "val_auc": last[-1]["val_auc"] if last else None}
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    conf = cfgmod.load(args.config, args.overrides) if args.config or args.overrides else cfgmod.RunConfig()
    ckpt = args.checkpoint or conf.output.checkpoint_path()
    data = args.data or conf.data.eval
    if data is None:
        raise UsageError("eval needs --data or data.eval in the config")
    for path in (ckpt, data):
        if not os.path.exists(path):
            raise ConfigError(f"path does not exist: {path}")
    out_dir = args.out_dir or conf.output.dir
    os.makedirs(out_dir, exist_ok=True)
    model, _, records = serialization.load_checkpoint(ckpt)
    dataset = _prepare_records(training.read_dataset(data), conf)
    report, scores = evaluate(model, dataset, regime=records.get("regime", ""),
                              config=records.get("run_config") or model.config.to_dict(),
                              return_scores=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out_dir, "roc.csv"), "w") as fh:
        fh.write(report.roc_csv())
    with open(os.path.join(out_dir, "scores.csv"), "w") as fh:
        fh.write("score,label\n")
        for s, r in zip(scores, dataset):
            fh.write(f"{s!r},{r.label}\n")
    print(json.dumps({"auc": report.auc, "n_pos": report.n_pos, "n_neg": report.n_neg,
                      "out_dir": out_dir}))
    return 0


def cmd_gen_data(args) -> int:
    records = training.generate_synthetic(args.n, args.frac, args.seed)
    if args.unlabeled:
        records = [training.LabeledRecord(text=r.text) for r in records]
    _ensure_dir(args.out)
    if args.out.endswith((".bin", ".raw")):
        training.write_raw(records, args.out)
    else:
        training.write_jsonl(records, args.out)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_gradcheck

    results = run_gradcheck(seed=args.seed)
    ok = True
    for res in results.values():
        ok &= res.passed
        print(json.dumps({"loss": res.loss, "max_rel_error": res.max_rel_error,
                          "worst_param": res.worst_param, "n_checked": res.n_checked,
                          "tolerance": TOLERANCE, "passed": res.passed}))
    return 0 if ok else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "tokenize":
            return cmd_tokenize(args)
        if args.command == "encode":
            return cmd_encode(args)
        if args.command == "pretrain":
            return cmd_train(args, Regime.PRETRAIN_NEXT_CHAR)
        if args.command == "train":
            return cmd_train(args, None)
        if args.command == "finetune":
            return cmd_train(args, Regime.FINE_TUNE)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "gen-data":
            return cmd_gen_data(args)
        return cmd_gradcheck(args)
    except UsageError as exc:
        print(f"error kind=UsageError message={exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error kind=ConfigError message={exc}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"error kind={exc.kind} message={exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error kind={type(exc).__name__} message={exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
