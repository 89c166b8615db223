"""Operator-facing pipeline driver.

Subcommands: ingest, clean, features, train, eval, ablation, predict.
Exit codes: 0 success, 1 usage or input error, 2 partial failure above the
configured threshold, 3 internal error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback
from pathlib import Path

import torch

from .cleaning import clean_source
from .config import PipelineConfig
from .corpus import (
    ClassTooSmall,
    ContractRecord,
    DatasetSplit,
    ManifestError,
    label_histogram,
    load_manifest,
    normalize_bytecode,
    stratified_split,
)
from .embeddings import EmbeddingError, provider_from_env
from .features import FeatureDerivationFailed, FeatureStore, derive_single
from .models import (
    VARIANTS,
    CheckpointMismatch,
    CheckpointUnavailable,
    ConfigError,
    FeatureBatch,
    assemble_variant,
    load_checkpoint,
    save_checkpoint,
)
from .solc import CompileError, CompilerNotFound
from .training import (
    LABEL_ORDER,
    EmptyTestSet,
    MissingFeature,
    evaluate,
    run_ablation,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_INTERNAL = 3

_INPUT_ERRORS = (
    ManifestError,
    ClassTooSmall,
    CompilerNotFound,
    CompileError,
    EmbeddingError,
    CheckpointMismatch,
    CheckpointUnavailable,
    ConfigError,
    FeatureDerivationFailed,
    MissingFeature,
    EmptyTestSet,
    FileNotFoundError,
    ValueError,
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config file (JSON)")
    common.add_argument("--workspace", help="workspace directory")
    common.add_argument("--manifest", help="JSONL dataset manifest")
    common.add_argument("--seed", type=int, help="split and training seed")
    common.add_argument("--provider", choices=["local", "remote"], help="embedding provider")
    common.add_argument("--workers", type=int, help="parallel workers for feature extraction")
    common.add_argument("--json", action="store_true", help="machine-readable output")

    parser = argparse.ArgumentParser(prog="scvd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="load and validate the manifest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("clean", parents=[common], help="write cleaned copies of .sol files")
    p.add_argument("paths", nargs="+", help=".sol files or directories")
    p.add_argument("--keep-spaces", action="store_true", help="do not collapse interior space runs")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("features", parents=[common], help="materialize the feature store")
    p.add_argument("--failure-threshold", type=float, help="tolerated failure fraction")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common], help="train one variant")
    p.add_argument("--variant", default="vulnsense", choices=list(VARIANTS))
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--preset", choices=["tiny-test", "pretrained-12-layer"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--averaging", choices=["weighted", "macro"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablation", parents=[common], help="run the variants-by-epochs grid")
    p.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated variant names")
    p.add_argument("--epochs", default="10,20,30", help="comma-separated epoch budgets")
    p.add_argument("--preset", choices=["tiny-test", "pretrained-12-layer"])
    p.add_argument("--averaging", choices=["weighted", "macro"])
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("predict", parents=[common], help="classify one contract")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("contract", help="path to a .sol source file")
    p.add_argument("--bytecode", help="file holding runtime bytecode hex (skips compilation)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    cfg = cfg.with_overrides(
        workspace=args.workspace,
        manifest=args.manifest,
        provider=args.provider,
        workers=args.workers,
    )
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, split_seed=args.seed)
    return cfg


def _records(cfg: PipelineConfig) -> list[ContractRecord]:
    return load_manifest(cfg.manifest)


def _split(cfg: PipelineConfig, records: list[ContractRecord]) -> DatasetSplit:
    """Reuse the persisted split when it still matches the manifest and seed."""
    split_path = Path(cfg.workspace) / "split.json"
    ids = {r.id for r in records}
    if split_path.exists():
        split = DatasetSplit.from_json(json.loads(split_path.read_text()))
        if (
            split.seed == cfg.split_seed
            and split.test_fraction == cfg.split_fraction
            and set(split.train) | set(split.test) == ids
        ):
            return split
    split = stratified_split(records, cfg.split_fraction, cfg.split_seed)
    split_path.parent.mkdir(parents=True, exist_ok=True)
    split_path.write_text(json.dumps(split.to_json(), indent=2))
    return split


def _provider(cfg: PipelineConfig):
    cache = Path(cfg.workspace) / "cache" / "embeddings.bin"
    return provider_from_env(selector=cfg.provider, seed=cfg.embed_seed, cache_path=cache)


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    records = _records(cfg)
    histogram = label_histogram(records)
    if args.json:
        print(json.dumps({"records": len(records), "labels": histogram}))
    else:
        print(f"{len(records)} records from {cfg.manifest}")
        for label, count in histogram.items():
            print(f"  {label:12s} {count}")
    return EXIT_OK


def cmd_clean(args) -> int:
    cfg = _load_config(args)
    files: list[Path] = []
    for raw in args.paths:
        path = Path(raw)
        if path.is_dir():
            files.extend(
                p for p in sorted(path.rglob("*.sol")) if not p.name.endswith(".clean.sol")
            )
        else:
            files.append(path)
    for path in files:
        cleaned = clean_source(
            path.read_text(encoding="utf-8"),
            collapse_spaces=cfg.collapse_spaces and not args.keep_spaces,
        )
        out_path = path.with_name(path.stem + ".clean.sol")
        out_path.write_text(cleaned.text, encoding="utf-8")
    print(f"cleaned {len(files)} file(s)")
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _load_config(args)
    if args.failure_threshold is not None:
        cfg = dataclasses.replace(cfg, failure_threshold=args.failure_threshold)
    records = _records(cfg)
    split = _split(cfg, records)
    store = FeatureStore(cfg.workspace)
    report = store.materialize(
        records,
        split.train,
        _provider(cfg),
        compiler_config=cfg.compiler_config(),
        collapse_spaces=cfg.collapse_spaces,
        workers=cfg.workers,
    )
    report_path = Path(cfg.workspace) / "features-report.json"
    report_path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True))
    print(
        f"features: {len(report.ok)} built, {len(report.skipped)} up to date, "
        f"{len(report.failures)} failed"
    )
    for record_id, reason in sorted(report.failures.items()):
        print(f"  FAILED {record_id}: {reason}", file=sys.stderr)
    if report.failure_fraction > cfg.failure_threshold:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    records = _records(cfg)
    split = _split(cfg, records)
    store = FeatureStore(cfg.workspace)
    dataset = store.load_dataset(records)
    vocab = store.load_vocab() if store.vocab_path.exists() else None
    hyper = cfg.hyper_config(epochs=args.epochs, seed=args.seed)
    torch.manual_seed(hyper.seed)
    model = assemble_variant(cfg.model_config(args.variant, args.preset), vocab=vocab)
    history = train(model, dataset.subset(split.train), hyper)
    ckpt = Path(cfg.workspace) / "models" / f"{args.variant}-e{hyper.epochs}-s{hyper.seed}"
    save_checkpoint(
        model,
        ckpt,
        vocab=vocab,
        extra={"hyper": hyper.to_json(), "config_hash": cfg.config_hash()},
    )
    (ckpt / "history.json").write_text(
        json.dumps({"loss": history.loss, "accuracy": history.accuracy,
                    "seconds": history.seconds}, indent=2)
    )
    final_acc = history.accuracy[-1] if history.accuracy else float("nan")
    print(f"trained {args.variant} for {hyper.epochs} epochs in {history.seconds:.1f}s "
          f"(final train accuracy {final_acc:.3f}) -> {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    if args.averaging:
        cfg = dataclasses.replace(cfg, averaging=args.averaging)
    records = _records(cfg)
    split = _split(cfg, records)
    store = FeatureStore(cfg.workspace)
    dataset = store.load_dataset(records)
    model, _vocab = load_checkpoint(args.checkpoint)
    extra = json.loads((Path(args.checkpoint) / "config.json").read_text()).get("extra", {})
    epochs = int(extra.get("hyper", {}).get("epochs", 0))
    report = evaluate(
        model,
        dataset.subset(split.test),
        epochs=epochs,
        split_seed=cfg.split_seed,
        averaging=cfg.averaging,
        config_hash=cfg.config_hash(),
    )
    out_dir = Path(cfg.workspace) / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)
    name = f"report-{report.variant}-e{report.epochs}-s{cfg.split_seed}.json"
    (out_dir / name).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True))
    if args.json:
        print(json.dumps(report.to_json()))
    else:
        print(f"{report.variant}: accuracy {report.accuracy:.4f}  precision "
              f"{report.precision:.4f}  recall {report.recall:.4f}  f1 {report.f1:.4f}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    cfg = _load_config(args)
    if args.averaging:
        cfg = dataclasses.replace(cfg, averaging=args.averaging)
    records = _records(cfg)
    split = _split(cfg, records)
    store = FeatureStore(cfg.workspace)
    dataset = store.load_dataset(records)
    vocab = store.load_vocab() if store.vocab_path.exists() else None
    variants = [v.strip().lower() for v in args.variants.split(",") if v.strip()]
    for variant in variants:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
    budgets = [int(e) for e in str(args.epochs).split(",") if str(e).strip()]
    hyper = cfg.hyper_config(seed=args.seed)
    out_dir = Path(cfg.workspace) / "reports"

    result = run_ablation(
        dataset,
        split.train,
        split.test,
        variants=variants,
        epoch_budgets=budgets,
        base_config=cfg.model_config(preset=args.preset),
        hyper=hyper,
        vocab=vocab,
        split_seed=cfg.split_seed,
        averaging=cfg.averaging,
        config_hash=cfg.config_hash(),
        out_dir=out_dir,
    )
    provenance = {
        "config_hash": cfg.config_hash(),
        "split_seed": cfg.split_seed,
        "training_seed": hyper.seed,
        "test_fraction": cfg.split_fraction,
        "label_histogram": label_histogram(records),
        "records": len(records),
        "variants": variants,
        "epoch_budgets": sorted(budgets),
    }
    (out_dir / f"provenance-s{hyper.seed}.json").write_text(
        json.dumps(provenance, indent=2, sort_keys=True)
    )
    print(result.table)
    if result.failures:
        for failure in result.failures:
            print(f"FAILED {failure.variant} e{failure.epochs}: {failure.error}",
                  file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    model, vocab = load_checkpoint(args.checkpoint)
    source = Path(args.contract).read_text(encoding="utf-8")
    bytecode = None
    if args.bytecode:
        bytecode = normalize_bytecode(Path(args.bytecode).read_text())
    text, token_ids, tensors = derive_single(
        source,
        bytecode,
        _provider(cfg),
        vocab,
        compiler_config=cfg.compiler_config(),
        collapse_spaces=cfg.collapse_spaces,
    )
    needed = model.required_features
    if "opcode" in needed and token_ids is None:
        raise FeatureDerivationFailed("checkpoint has no opcode vocabulary")
    batch = FeatureBatch(
        texts=[text] if "text" in needed else None,
        token_ids=torch.from_numpy(token_ids.astype("int64")).unsqueeze(0)
        if "opcode" in needed
        else None,
        graphs=[tensors] if "graph" in needed else None,
    )
    with torch.no_grad():
        probs = model(batch)[0].tolist()
    label = LABEL_ORDER[max(range(len(probs)), key=probs.__getitem__)].value
    if args.json:
        print(json.dumps({"label": label, "probabilities": probs,
                          "config_hash": cfg.config_hash()}))
    else:
        pretty = "  ".join(
            f"{lab.value}={p:.4f}" for lab, p in zip(LABEL_ORDER, probs)
        )
        print(f"{label}  ({pretty})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
