"""Command-line entry point: ``strnoc <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .encoder import (
    EncodingError,
    build_labels,
    encode_compact,
    filter_artefact_peaks,
    read_tensor_cache,
    write_tensor_cache,
)
from .evaluator import DEFAULT_THRESHOLDS, confusion, evaluation_report, mac_estimate, write_report
from .explain import render_report
from .kit import KitError, default_kit, load_kit_config
from .model import EncodedRecord, ModelFormatError, build_model, load_weights, make_batch, save_weights
from .nn import NumericalError
from .simulator import SimParams, read_dataset, simulate_dataset
from .trainer import (
    TrainConfig,
    encode_records,
    fine_tune,
    noc_from_proba,
    predict_proba,
    split_dataset,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MODEL_FILE = "model.dnocw"

log = logging.getLogger("strnoc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    raw = os.environ.get("NOC_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"NOC_SEED must be an integer, got {raw!r}")


def _kit(path):
    return load_kit_config(path) if path else default_kit()


def _model_path(path: str) -> Path:
    p = Path(path)
    return p / MODEL_FILE if p.is_dir() else p


def _load_sim_params(args) -> SimParams:
    base = {}
    if args.params:
        base = json.loads(Path(args.params).read_text(encoding="utf-8"))
    base["seed"] = args.seed
    if args.noc_min is not None:
        base["noc_min"] = args.noc_min
    if args.noc_max is not None:
        base["noc_max"] = args.noc_max
    try:
        return SimParams.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid simulation parameters: {exc}")


def _records_from_jsonl(path, kit, threshold=0.97):
    profiles = list(read_dataset(path))
    return profiles, encode_records(profiles, kit, threshold=threshold)


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    kit = _kit(args.kit)
    params = _load_sim_params(args)
    summary = simulate_dataset(kit, params, args.n, args.out, threads=args.threads,
                               laboratory=args.laboratory)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_encode(args) -> int:
    kit = _kit(args.kit)
    profiles = list(read_dataset(args.inp))

    def records():
        for p in profiles:
            f = filter_artefact_peaks(p, args.threshold)
            yield encode_compact(f, kit).to_dense(), build_labels(f)

    write_tensor_cache(args.out, records(), len(profiles))
    print(f"encoded {len(profiles)} profiles -> {args.out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key in ("epochs", "batch_size", "lr", "patience", "checkpoint_every"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "deterministic", False):
        cfg["deterministic"] = True
    try:
        return TrainConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}")


def _load_records(path: str, kit_path=None) -> list[EncodedRecord]:
    if str(path).endswith(".jsonl"):
        return _records_from_jsonl(path, _kit(kit_path))[1]
    return [EncodedRecord.from_dense(t, lab) for t, lab in read_tensor_cache(path)]


def cmd_train(args) -> int:
    cfg = _train_config(args)
    records = _load_records(args.inp, args.kit)
    train_set, test_set = split_dataset(records, "random_fraction", cfg.split, cfg.seed)
    perm = np.random.default_rng(cfg.seed).permutation(len(records))
    n_train = len(train_set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg.seed, feedback=not args.no_feedback)
    history, model, opt = train(model, train_set, test_set, cfg,
                                checkpoint_dir=out / "checkpoints" if cfg.checkpoint_every else None)
    save_weights(model, out / MODEL_FILE, optimizer=opt, card={"train_config": cfg.to_dict()})
    history.save(out / "history.json")
    split = {"source": str(args.inp), "train": sorted(int(i) for i in perm[:n_train]),
             "test": sorted(int(i) for i in perm[n_train:])}
    (out / "split.json").write_text(json.dumps(split) + "\n", encoding="utf-8")
    last = history.epochs[-1] if history.epochs else None
    if last is not None:
        print(f"epochs {len(history)}  train_acc {last.train_accuracy:.4f}  "
              f"test_acc {last.test_accuracy if last.test_accuracy is not None else float('nan'):.4f}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _train_config(args)
    model = load_weights(_model_path(args.model))
    records = _load_records(args.inp, args.kit)
    history, model, _ = fine_tune(model, records, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(model, out / MODEL_FILE, card={"train_config": cfg.to_dict(), "fine_tuned_from": str(args.model)})
    history.save(out / "history.json")
    if history.epochs:
        print(f"fine-tune epochs {len(history)}  test_acc {history.epochs[-1].test_accuracy:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_weights(_model_path(args.model))
    _, records = _records_from_jsonl(args.inp, _kit(args.kit))
    probs = predict_proba(model, records)
    preds = noc_from_proba(probs)
    out = [{"index": i, "noc": int(k), "probabilities": [float(x) for x in p]}
           for i, (k, p) in enumerate(zip(preds, probs))]
    Path(args.out).write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_weights(_model_path(args.model))
    records = _load_records(args.inp, args.kit)
    if args.split:
        idx = json.loads(Path(args.split).read_text(encoding="utf-8"))[args.subset]
        records = [records[i] for i in idx]
    probs = predict_proba(model, records)
    preds = noc_from_proba(probs)
    truth = np.array([r.noc for r in records])
    thresholds = args.thresholds or DEFAULT_THRESHOLDS
    report = evaluation_report(preds, truth, probs, thresholds)
    write_report(report, args.report)
    print(confusion(preds, truth).format_table())
    print(f"overall accuracy {report['overall_accuracy']:.4f}")
    return EXIT_OK


def cmd_explain(args) -> int:
    kit = _kit(args.kit)
    model = load_weights(_model_path(args.model))
    profiles = list(read_dataset(args.inp))
    if not 0 <= args.index < len(profiles):
        raise UsageError(f"--index {args.index} out of range for {args.inp} ({len(profiles)} records)")
    prof = filter_artefact_peaks(profiles[args.index], args.threshold)
    tensor = encode_compact(prof, kit).to_dense()
    outputs = model.predict_dense(tensor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    svg, js = render_report(prof, tensor, outputs, kit, out / f"profile{args.index}.svg",
                            out / f"profile{args.index}.json")
    print(f"{svg}\n{js}")
    return EXIT_OK


def cmd_mac(args) -> int:
    for p in read_dataset(args.inp):
        print(mac_estimate(p, args.plp_cutoff))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="strnoc", description="Simulate, encode, train and evaluate STR number-of-contributors models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def common(sp, kit=True):
        if kit:
            sp.add_argument("--kit", help="kit JSON file (default: bundled synthetic kit)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
        sp.add_argument("--deterministic", action="store_true",
                        help="fixed reduction order; identical output for identical flags")

    s = sub.add_parser("simulate", help="simulate labelled profiles to JSONL")
    common(s)
    s.add_argument("--n", type=int, required=True, help="number of profiles")
    s.add_argument("--seed", type=int, default=None, help="master seed (default: $NOC_SEED or 0)")
    s.add_argument("--out", required=True, help="output JSONL path")
    s.add_argument("--params", help="JSON file with simulation parameter overrides")
    s.add_argument("--noc-min", type=int, help="smallest NoC to simulate")
    s.add_argument("--noc-max", type=int, help="largest NoC to simulate")
    s.add_argument("--laboratory", action="store_true",
                   help="omit peak composition, as in laboratory data used for fine-tuning")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("encode", help="encode a JSONL dataset into a binary tensor cache")
    common(s)
    s.add_argument("--in", dest="inp", metavar="FILE", required=True, help="input JSONL dataset")
    s.add_argument("--out", required=True, help="output tensor cache (.dnoc)")
    s.add_argument("--threshold", type=float, default=0.97, help="artefact probability filter (default 0.97)")
    s.set_defaults(func=cmd_encode)

    def train_flags(sp):
        sp.add_argument("--config", help="training config JSON")
        sp.add_argument("--epochs", type=int, help="override epochs")
        sp.add_argument("--batch-size", dest="batch_size", type=int, help="override batch size")
        sp.add_argument("--lr", type=float, help="override learning rate")
        sp.add_argument("--seed", type=int, default=None, help="training seed (default: $NOC_SEED or 0)")
        sp.add_argument("--patience", type=int, help="early-stop after this many epochs without test gain")
        sp.add_argument("--checkpoint-every", dest="checkpoint_every", type=int,
                        help="write a checkpoint every N epochs")

    s = sub.add_parser("train", help="train a model from a tensor cache or JSONL dataset")
    common(s)
    s.add_argument("--in", dest="inp", metavar="FILE", required=True, help="tensor cache (.dnoc) or JSONL dataset")
    s.add_argument("--out", required=True, help="output model directory")
    s.add_argument("--no-feedback", action="store_true", help="train the variant without head feedback")
    train_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("finetune", help="fine-tune a model on laboratory-style profiles")
    common(s)
    s.add_argument("--model", required=True, help="model directory or weight file")
    s.add_argument("--in", dest="inp", metavar="FILE", required=True, help="laboratory JSONL dataset")
    s.add_argument("--out", required=True, help="output model directory")
    train_flags(s)
    s.set_defaults(func=cmd_finetune, epochs_default=2000)

    s = sub.add_parser("predict", help="predict NoC for each profile")
    common(s)
    s.add_argument("--model", required=True, help="model directory or weight file")
    s.add_argument("--in", dest="inp", metavar="FILE", required=True, help="JSONL dataset")
    s.add_argument("--out", required=True, help="predictions JSON")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="confusion matrix, per-class metrics and threshold sweep")
    common(s)
    s.add_argument("--model", required=True, help="model directory or weight file")
    s.add_argument("--in", dest="inp", metavar="FILE", required=True, help="JSONL dataset or tensor cache")
    s.add_argument("--report", required=True, help="evaluation report JSON")
    s.add_argument("--thresholds", type=float, nargs="+", help="abstention thresholds")
    s.add_argument("--split", help="split.json written by train; evaluates one subset")
    s.add_argument("--subset", choices=("train", "test"), default="test", help="subset used with --split")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("explain", help="render the explainability report for one profile")
    common(s)
    s.add_argument("--model", required=True, help="model directory or weight file")
    s.add_argument("--in", dest="inp", metavar="FILE", required=True, help="JSONL dataset")
    s.add_argument("--index", type=int, required=True, help="record index (0-based)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--threshold", type=float, default=0.97, help="artefact probability filter (default 0.97)")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("mac", help="maximum-allele-count NoC for each profile")
    s.add_argument("--in", dest="inp", metavar="FILE", required=True, help="JSONL dataset")
    s.add_argument("--plp-cutoff", type=float, default=0.5, help="minimum plp for a peak to count (default 0.5)")
    s.set_defaults(func=cmd_mac)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        if getattr(args, "epochs_default", None) and args.epochs is None and not args.config:
            args.epochs = args.epochs_default
        return args.func(args)
    except UsageError as exc:
        print(f"strnoc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"strnoc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"strnoc {args.command}: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_DATA
    except (KitError, EncodingError, ModelFormatError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"strnoc {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
