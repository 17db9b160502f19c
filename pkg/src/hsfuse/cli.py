"""Command-line entry point wiring the pipeline end to end.

Subcommands: preprocess, train, eval, predict, serve. Diagnostics go to
stderr; machine-consumable output (reports, predictions, summaries) goes to
stdout or to `--out` files, never mixed.

Exit codes: 0 success, 1 runtime/data error, 2 usage or config error.

Precedence for training settings: defaults < config file < HSFUSE_SEED env
var (seed only) < command-line flags.
"""

import argparse
import os
import sys

from . import __version__
from .data import (
    assemble_dataset,
    build_label_vocab,
    parse_manifest,
    read_embedding_file,
    split_dataset,
    vocab_labels,
    write_manifest,
)
from .encoding import EncoderSpec, hash_encode
from .errors import ConfigError, HsfuseError, UsageError
from .evaluation import evaluate_model, render_table, report_to_text
from .fusion import ModalityVector
from .model import ModelConfig, load_checkpoint, predict_topk, save_checkpoint
from .optim import TrainConfig, train
from .serve import ModelService, make_server
from .textprep import FreqDict, preprocess_record, preprocess_text

_TRAIN_KEYS = {
    "lr": float,
    "epochs": int,
    "patience": int,
    "batch_size": int,
    "seed": int,
    "fusion": str,
    "hidden": int,
    "rank": int,
    "lmf_dim": int,
    "clip_norm": float,
    "stratify": int,
    "concat_raw": int,
}


def parse_train_config(path: str) -> dict:
    """Flat key=value file; unknown keys are an error so typos surface."""
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _TRAIN_KEYS:
                raise ConfigError(
                    f"{path}:{lineno}: unknown key {key!r} (known: {sorted(_TRAIN_KEYS)})"
                )
            try:
                values[key] = _TRAIN_KEYS[key](value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def _parse_embedding_flags(entries: list[str] | None) -> list[tuple[str, str]]:
    pairs = []
    for entry in entries or []:
        if "=" not in entry:
            raise UsageError(f"--embeddings expects modality=path, got {entry!r}")
        modality, path = entry.split("=", 1)
        if not modality or not path:
            raise UsageError(f"--embeddings expects modality=path, got {entry!r}")
        pairs.append((modality, path))
    return pairs


def _load_tables(pairs: list[tuple[str, str]]):
    tables = {}
    for modality, path in pairs:
        table = read_embedding_file(path)
        if table.modality != modality:
            raise UsageError(
                f"{path} declares modality {table.modality!r} but was given as {modality!r}"
            )
        tables[modality] = table
    return tables


def _resolve_seed(config_values: dict, flag_seed: int | None) -> int:
    seed = config_values.get("seed", 0)
    env = os.environ.get("HSFUSE_SEED")
    if env is not None:
        try:
            seed = int(env)
        except ValueError as exc:
            raise ConfigError(f"HSFUSE_SEED must be an integer, got {env!r}") from exc
    if flag_seed is not None:
        seed = flag_seed
    return seed


def cmd_preprocess(args) -> int:
    records = parse_manifest(args.manifest)
    d = FreqDict.load(args.dict)
    cleaned = [preprocess_record(rec, d) for rec in records]
    write_manifest(cleaned, args.out)
    print(f"preprocessed {len(cleaned)} records -> {args.out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    values = parse_train_config(args.config) if args.config else {}
    seed = _resolve_seed(values, args.seed)
    tcfg = TrainConfig(
        lr=values.get("lr", 1e-4),
        epochs=values.get("epochs", 100),
        patience=values.get("patience", 10),
        batch_size=values.get("batch_size", 32),
        seed=seed,
        fusion=values.get("fusion", "multconcat"),
        hidden=values.get("hidden", 512),
        rank=values.get("rank", 16),
        lmf_dim=values.get("lmf_dim", 128),
        clip_norm=values.get("clip_norm", 0.0),
        stratify=bool(values.get("stratify", 0)),
        concat_raw=bool(values.get("concat_raw", 0)),
    )
    pairs = _parse_embedding_flags(args.embeddings)
    if not pairs:
        raise UsageError("train needs at least one --embeddings modality=path")
    tables = _load_tables(pairs)
    records = parse_manifest(args.manifest)
    vocab = build_label_vocab(records)
    labels = vocab_labels(vocab)
    split = split_dataset(records, seed=tcfg.seed, stratify=tcfg.stratify)
    datasets = assemble_dataset(records, tables, split, vocab)
    cfg = ModelConfig(
        modalities=tuple((modality, tables[modality].dim) for modality, _ in pairs),
        classes=len(labels),
        hidden=tcfg.hidden,
        fusion=tcfg.fusion,
        rank=tcfg.rank,
        lmf_dim=tcfg.lmf_dim,
        seed=tcfg.seed,
        concat_raw=tcfg.concat_raw,
    )
    print(
        f"training fusion={cfg.fusion} modalities={','.join(cfg.modality_names)} "
        f"classes={cfg.classes} train={len(datasets['train'])} val={len(datasets['val'])}",
        file=sys.stderr,
    )
    params, history = train(cfg, tcfg, datasets["train"], datasets["val"])
    save_checkpoint(params, cfg, labels, args.out_model)
    best = history.best_epoch
    print(
        f"trained epochs={history.epochs_run} best_epoch={best} "
        f"best_val_loss={history.val_loss[best - 1]!r} "
        f"best_val_top1={history.val_top1[best - 1]!r} "
        f"stop={history.stop_reason} model={args.out_model}"
    )
    return 0


def cmd_eval(args) -> int:
    params, cfg, labels = load_checkpoint(args.model)
    records = parse_manifest(args.manifest)
    pairs = _parse_embedding_flags(args.embeddings)
    tables = _load_tables(pairs)
    missing = [m for m in cfg.modality_names if m not in tables]
    if missing:
        raise UsageError(f"model needs embeddings for modalities {missing}")
    vocab = {code: i for i, code in enumerate(labels)}
    seed = args.split_seed if args.split_seed is not None else cfg.seed
    split = split_dataset(records, seed=seed, stratify=args.stratify)
    datasets = assemble_dataset(
        records, {m: tables[m] for m in cfg.modality_names}, split, vocab
    )
    ks = tuple(int(k) for k in args.topk.split(","))
    report = evaluate_model(cfg, params, datasets[args.split], labels, ks=ks, split=args.split)
    print(render_table(report, title=f"model={args.model}"))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report_to_text(report))
        print(f"report -> {args.out}", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    params, cfg, labels = load_checkpoint(args.model)
    records = parse_manifest(args.input, require_label=False)
    if len(records) != 1:
        raise UsageError(f"{args.input} must contain exactly one record, has {len(records)}")
    rec = records[0]
    tables = _load_tables(_parse_embedding_flags(args.embeddings))
    d = FreqDict.load(args.dict) if args.dict else FreqDict.empty()
    sample = []
    for name, dim in cfg.modalities:
        if name in tables:
            table = tables[name]
            if rec.id not in table.vectors:
                raise UsageError(f"record {rec.id!r} missing from {name!r} embedding table")
            sample.append(ModalityVector(name, table.vectors[rec.id]))
        elif name in rec.text:
            tokens = preprocess_text(rec.text[name], d).split()
            sample.append(ModalityVector(name, hash_encode(tokens, dim, cfg.seed)))
        else:
            raise UsageError(
                f"cannot derive modality {name!r}: no embedding table and no text field"
            )
    for rank, (hs6, prob) in enumerate(predict_topk(cfg, params, sample, args.topk, labels), 1):
        print(f"{rank}\t{hs6}\t{prob!r}")
    return 0


def cmd_serve(args) -> int:
    params, cfg, labels = load_checkpoint(args.model)
    d = FreqDict.load(args.dict) if args.dict else FreqDict.empty()
    encoders = {}
    for entry in args.encoder or []:
        if "=" not in entry:
            raise UsageError(f"--encoder expects MOD=remote:URL, got {entry!r}")
        modality, spec = entry.split("=", 1)
        if not spec.startswith("remote:"):
            raise UsageError(f"--encoder only supports remote:URL specs, got {entry!r}")
        encoders[modality] = EncoderSpec(
            kind="remote",
            modality=modality,
            dim=cfg.modality_dim(modality),
            endpoint=spec[len("remote:") :],
        )
    service = ModelService.from_model(
        cfg, params, labels, encoders=encoders, freq_dict=d, feedback_log=args.feedback_log
    )
    server = make_server(service, host=args.host, port=args.port, static_dir=args.static_dir)
    host, port = server.server_address[:2]
    print(f"PORT={port}", flush=True)
    print(f"serving {args.model} on http://{host}:{port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsfuse", description="Multimodal HS6 code classifier pipeline"
    )
    parser.add_argument("--version", action="version", version=f"hsfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean, segment, and spell-correct manifest text")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a fusion model from a manifest and embeddings")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", action="append", metavar="MOD=PATH")
    p.add_argument("--out-model", required=True)
    p.add_argument("--seed", type=int, help="overrides config and HSFUSE_SEED")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", action="append", metavar="MOD=PATH")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--topk", default="1,3,5")
    p.add_argument("--split-seed", type=int, help="defaults to the checkpoint seed")
    p.add_argument("--stratify", action="store_true")
    p.add_argument("--out", help="write the machine-readable report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="rank HS6 codes for one record")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="single-record manifest file")
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--dict", help="frequency dictionary for text preprocessing")
    p.add_argument("--embeddings", action="append", metavar="MOD=PATH")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="HTTP prediction service + review console backend")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080, help="0 picks a free port")
    p.add_argument("--feedback-log", help="append-only reviewer feedback file")
    p.add_argument("--static-dir", help="directory of UI files to serve")
    p.add_argument("--dict", help="frequency dictionary for text preprocessing")
    p.add_argument("--encoder", action="append", metavar="MOD=remote:URL")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"hsfuse: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"hsfuse: no such file: {exc.filename}", file=sys.stderr)
        return 1
    except (HsfuseError, OSError) as exc:
        print(f"hsfuse: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
