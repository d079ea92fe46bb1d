"""Command-line entry point: ``factedit <subcommand> ...``.

Data goes to files or standard output; logs are one JSON record per line on
standard error.  Exit status is 0 on success, 1 for I/O and validation
errors and 2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import __version__
from .core import (
    FormatError,
    dumps,
    read_actions,
    read_corpus,
    read_instances,
    read_predictions,
    write_actions,
    write_corpus,
    write_instances,
    write_predictions,
)
from .datagen import DataGenError, make_dataset
from .engine import EngineError, execute
from .metrics import MetricError, evaluate, inventory_of
from .model import (
    MODELS,
    PRESETS,
    DecodeLimits,
    ModelConfig,
    ModelError,
    TrainConfig,
    Vocabs,
    build_model,
    gradcheck_suite,
    load_checkpoint,
    save_checkpoint,
    scaling_benchmark,
    train,
)
from .neural import ShapeError
from .oracle import counts, derive_actions

log = logging.getLogger("factedit")

EXPECTED_ERRORS = (FormatError, DataGenError, EngineError, MetricError, ModelError, ShapeError, OSError, ValueError)


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        rec = {"level": record.levelname.lower(), "logger": record.name, "message": record.getMessage()}
        rec.update(getattr(record, "fields", {}))
        return json.dumps(rec, ensure_ascii=False, sort_keys=True)


def _setup_logging(verbosity: int) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbosity > 1 else logging.INFO if verbosity else logging.WARNING)


def _event(message: str, level: int = logging.INFO, **fields) -> None:
    log.log(level, message, extra={"fields": fields})


# -- training configuration ------------------------------------------------------

DEFAULT_TRAIN = {
    "model": "facteditor",
    "preset": "small",
    "dims": {},
    "lr": 2e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "batch_size": 32,
    "epochs": 50,
    "seed": 0,
    "eval_every": 1,
    "stop_dev_em": None,
    "min_freq": 1,
    "limits": {},
}


def load_train_config(path: str | None) -> dict:
    """Read a JSON training config and fill in defaults; unknown keys are errors."""
    cfg = json.loads(json.dumps(DEFAULT_TRAIN))
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(user, dict):
            raise FormatError(f"{path}: config must be a JSON object")
        unknown = sorted(set(user) - set(DEFAULT_TRAIN))
        if unknown:
            raise FormatError(f"{path}: unknown config keys {unknown}")
        cfg.update(user)
    return cfg


def resolve_config(cfg: dict) -> tuple[str, ModelConfig, TrainConfig]:
    if cfg["model"] not in MODELS:
        raise ModelError(f"unknown model {cfg['model']!r}; choose from {sorted(MODELS)}")
    if cfg["preset"] not in PRESETS:
        raise ModelError(f"unknown preset {cfg['preset']!r}; choose from {sorted(PRESETS)}")
    dim_names = {f.name for f in fields(ModelConfig)}
    unknown = sorted(set(cfg["dims"]) - dim_names)
    if unknown:
        raise ModelError(f"unknown model dimensions {unknown}")
    model_cfg = replace(PRESETS[cfg["preset"]], **cfg["dims"])
    limit_names = {f.name for f in fields(DecodeLimits)}
    unknown = sorted(set(cfg["limits"]) - limit_names)
    if unknown:
        raise ModelError(f"unknown decode limits {unknown}")
    if not cfg["lr"] > 0:
        raise ModelError("lr must be positive")
    train_cfg = TrainConfig(
        lr=cfg["lr"], beta1=cfg["beta1"], beta2=cfg["beta2"], eps=cfg["eps"], batch_size=cfg["batch_size"],
        epochs=cfg["epochs"], seed=cfg["seed"], eval_every=cfg["eval_every"], stop_dev_em=cfg["stop_dev_em"],
        min_freq=cfg["min_freq"], limits=DecodeLimits(**cfg["limits"]),
    )
    return cfg["model"], model_cfg, train_cfg


# -- subcommands ---------------------------------------------------------------------


def cmd_synth_corpus(args) -> int:
    from .synthetic import synthetic_corpus

    corpus = synthetic_corpus(args.size, args.seed)
    write_corpus(corpus, args.out)
    _event("wrote corpus", pairs=len(corpus), path=str(args.out))
    return 0


def cmd_make_data(args) -> int:
    corpus = read_corpus(args.corpus)
    data = make_dataset(corpus, augment_root_triples=args.augment_root, threads=args.threads)
    write_instances(data, args.out)
    if not data:
        _event("no instances produced: no pair found a reference template", logging.WARNING, pairs=len(corpus))
    _event("wrote dataset", instances=len(data), pairs=len(corpus), path=str(args.out))
    return 0


def cmd_derive_actions(args) -> int:
    data = read_instances(args.data)
    sequences = []
    totals = {"keep": 0, "drop": 0, "gen": 0}
    for k, inst in enumerate(data, 1):
        actions = derive_actions(inst.draft, inst.revised)
        if execute(inst.draft, actions) != inst.revised:
            raise EngineError(f"{args.data}: instance {k}: derived actions do not replay")
        for kind, n in counts(actions).items():
            totals[kind.value] += n
        sequences.append(actions)
    write_actions(sequences, args.out)
    _event("wrote actions", instances=len(sequences), path=str(args.out), **totals)
    return 0


def cmd_apply(args) -> int:
    data = read_instances(args.data)
    sequences = read_actions(args.actions)
    if len(data) != len(sequences):
        raise FormatError(f"{len(data)} instances but {len(sequences)} action sequences")
    outputs = []
    for k, (inst, actions) in enumerate(zip(data, sequences), 1):
        try:
            outputs.append(execute(inst.draft, actions, inst.triples))
        except EngineError as exc:
            raise EngineError(f"{args.actions}: sequence {k}: {exc}") from None
    write_predictions(outputs, args.out)
    _event("wrote predictions", instances=len(outputs), path=str(args.out))
    return 0


def cmd_train(args) -> int:
    cfg = load_train_config(args.config)
    for key in ("seed", "epochs", "model", "preset"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    kind, model_cfg, train_cfg = resolve_config(cfg)
    train_set = read_instances(args.train)
    dev_set = read_instances(args.dev) if args.dev else train_set
    vocabs = Vocabs.build(train_set, train_cfg.min_freq)
    model = build_model(kind, model_cfg, vocabs, seed=train_cfg.seed)
    _event("training", model=kind, train=len(train_set), dev=len(dev_set), words=len(vocabs.words))

    log_fh = open(args.log, "w", encoding="utf-8", newline="\n") if args.log else None
    try:
        def on_epoch(rec):
            _event("epoch", **rec)
            if log_fh is not None:
                log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                log_fh.flush()

        result = train(model, train_set, dev_set, train_cfg, on_epoch=on_epoch)
    finally:
        if log_fh is not None:
            log_fh.close()
    save_checkpoint(result.model, args.out, extra={"train": cfg, "best_epoch": result.best_epoch})
    if args.figure:
        from .plotting import training_curves

        training_curves(result.log, args.figure)
    _event("saved checkpoint", path=str(args.out), best_epoch=result.best_epoch, best_dev_bleu=result.best_dev_bleu)
    return 0


def cmd_edit(args) -> int:
    data = read_instances(args.data)
    if args.model == "noop":
        outputs = [inst.draft for inst in data]
    else:
        if not args.checkpoint:
            raise ModelError(f"--checkpoint is required for --model {args.model}")
        model = load_checkpoint(args.checkpoint, expect_model=args.model)
        limits = DecodeLimits(args.max_consecutive_gen, args.max_length)
        chunks = [data[k : k + args.batch_size] for k in range(0, len(data), args.batch_size)]
        if args.threads > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                parts = list(pool.map(lambda c: model.edit(c, limits, args.batch_size), chunks))
        else:
            parts = [model.edit(c, limits, args.batch_size) for c in chunks]
        outputs = [tokens for part in parts for tokens in part]
    write_predictions(outputs, args.out)
    _event("wrote predictions", model=args.model, instances=len(outputs), path=str(args.out))
    return 0


def cmd_evaluate(args) -> int:
    preds = read_predictions(args.predictions)
    data = read_instances(args.data)
    if len(preds) != len(data):
        raise MetricError(f"{args.predictions} has {len(preds)} predictions but {args.data} has {len(data)} instances")
    if args.inventory:
        with open(args.inventory, encoding="utf-8") as fh:
            inventory = {line.strip() for line in fh if line.strip()}
    else:
        inventory = inventory_of(data)
    report = evaluate([i.draft for i in data], preds, [i.revised for i in data], inventory)
    print(dumps(report.to_record()))
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck_suite(args.seed, args.configs, args.tolerance, kinds=args.models)
    ok = True
    for r in results:
        failures = r.report.failures
        ok &= not failures
        rec = {
            "model": r.model,
            "config": asdict(r.config),
            "max_rel_error": r.report.max_rel_error,
            "checked_entries": sum(p.checked for p in r.report.params),
            "failures": failures,
            "unused": [p.name for p in r.report.params if p.status == "unused"],
            "passed": not failures,
        }
        print(json.dumps(rec, sort_keys=True))
    print(json.dumps({"summary": "gradcheck", "passed": ok, "tolerance": args.tolerance, "cases": len(results)}))
    return 0 if ok else 1


def cmd_bench(args) -> int:
    config = replace(PRESETS[args.preset], dtype=args.dtype)
    rows = scaling_benchmark(args.models, args.lengths, config, args.batch_size, args.triples, args.seed)
    header = ["model", "batch_size", "length", "seconds", "words_per_second"]
    lines = ["\t".join(header)]
    for r in rows:
        lines.append(f"{r['model']}\t{r['batch_size']}\t{r['length']}\t{r['seconds']:.4f}\t{r['words_per_second']:.1f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if args.figure:
        from .plotting import throughput_figure

        throughput_figure(rows, args.figure)
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factedit", description="Fact-based text editing toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=1, help="more log output (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_const", const=0, dest="verbose", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth-corpus", help="write a synthetic triple/text corpus")
    p.add_argument("--size", type=int, default=128, help="number of (triples, text) pairs")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="output corpus JSONL")
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("make-data", help="build editing instances from a triple/text corpus")
    p.add_argument("--corpus", required=True, help="input corpus JSONL (triples, text)")
    p.add_argument("--out", required=True, help="output instance JSONL")
    p.add_argument("--augment-root", action="store_true", help="add (ROOT, IsOf, e) for entities never used as objects")
    p.add_argument("--threads", type=int, default=1, help="worker threads (1 = sequential)")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the builder is deterministic")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("derive-actions", help="oracle Keep/Drop/Gen sequences for each instance")
    p.add_argument("--data", required=True, help="instance JSONL")
    p.add_argument("--out", required=True, help="output action JSONL")
    p.set_defaults(func=cmd_derive_actions)

    p = sub.add_parser("apply", help="execute action sequences on the drafts")
    p.add_argument("--data", required=True, help="instance JSONL")
    p.add_argument("--actions", required=True, help="action JSONL, one sequence per instance")
    p.add_argument("--out", required=True, help="output prediction JSONL")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("train", help="train an editor and write a checkpoint")
    p.add_argument("--config", help="JSON training config (dims, lr, batch_size, epochs, seed, limits)")
    p.add_argument("--train", required=True, help="training instance JSONL")
    p.add_argument("--dev", help="development instance JSONL (default: the training set)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--log", help="per-epoch metrics JSONL")
    p.add_argument("--figure", help="PNG with loss and dev score curves")
    p.add_argument("--model", choices=sorted(MODELS), help="override the config's model")
    p.add_argument("--preset", choices=sorted(PRESETS), help="override the config's size preset")
    p.add_argument("--epochs", type=int, help="override the config's epoch count")
    p.add_argument("--seed", type=int, help="override the config's seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("edit", help="revise drafts with a trained model or the no-editing baseline")
    p.add_argument("--model", choices=sorted(MODELS) + ["noop"], default="facteditor", help="editor to run")
    p.add_argument("--checkpoint", help="checkpoint written by train (not needed for noop)")
    p.add_argument("--data", required=True, help="instance JSONL")
    p.add_argument("--out", required=True, help="output prediction JSONL")
    p.add_argument("--batch-size", type=int, default=128, help="instances decoded together")
    p.add_argument("--max-consecutive-gen", type=int, default=10, help="Gen is masked after this many in a row")
    p.add_argument("--max-length", type=int, help="encoder-decoder output cap (default 2N+10)")
    p.add_argument("--threads", type=int, default=1, help="worker threads over batches")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("evaluate", help="score predictions against reference instances")
    p.add_argument("--predictions", required=True, help="prediction JSONL")
    p.add_argument("--data", required=True, help="reference instance JSONL")
    p.add_argument("--inventory", help="entity inventory, one entity per line (default: triples of --data)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check on random tiny models")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--configs", type=int, default=5, help="number of random configurations")
    p.add_argument("--tolerance", type=float, default=1e-4, help="maximum relative error")
    p.add_argument("--models", nargs="+", choices=sorted(MODELS), default=sorted(MODELS), help="models to check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="greedy decoding throughput against draft length")
    p.add_argument("--models", nargs="+", choices=sorted(MODELS), default=["facteditor", "encdec"], help="models")
    p.add_argument("--lengths", nargs="+", type=int, default=[100, 200], help="draft lengths N")
    p.add_argument("--batch-size", type=int, default=128, help="instances per batch")
    p.add_argument("--triples", type=int, default=4, help="triples per instance (M)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="small", help="model size preset")
    p.add_argument("--dtype", choices=["float64", "float32"], default="float64", help="parameter precision")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", help="also write the TSV table here")
    p.add_argument("--figure", help="PNG of time and throughput against N")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    for name in ("threads", "configs", "batch_size", "size", "triples", "max_consecutive_gen"):
        value = getattr(args, name, None)
        if value is not None and value < 1:
            parser.error(f"--{name.replace('_', '-')} must be at least 1")
    try:
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        _event(str(exc), logging.ERROR, command=args.command)
        print(f"factedit {args.command}: error: {exc}", file=sys.stderr)
        return 1
