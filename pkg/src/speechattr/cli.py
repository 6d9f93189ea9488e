"""Command-line interface.

Subcommands: ingest, manifest-summary, synth, import-embeddings, train,
evaluate, matrix, report. ``--config`` points at a flat key=value text file
whose keys mirror TrainConfig / SynthConfig field names.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import adapters, corpus, embedstore, metrics, runner, trainer
from .heads import build_head, task_for


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message, code=2)


class CliError(Exception):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


def _load_config_file(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


_TRAIN_KEYS = {
    "max_epochs": int, "batch_size": int, "initial_lr": float, "optimizer": str,
    "early_stop_patience": int, "plateau_patience": int, "plateau_factor": float,
    "min_lr": float, "class_weighting": str, "seed": int,
}
_SYNTH_KEYS = {
    "dim": int, "frames_min": int, "frames_max": int, "separation": float,
    "noise_sigma": float, "age_slope": float, "seed": int,
}


def _train_config(file_values: dict[str, str], seed: int) -> trainer.TrainConfig:
    kwargs = {"seed": seed}
    for key, value in file_values.items():
        if key in _TRAIN_KEYS:
            kwargs[key] = _TRAIN_KEYS[key](value)
        elif key not in _SYNTH_KEYS:
            raise CliError(f"unknown config key {key!r}")
    return trainer.TrainConfig(**kwargs)


def _synth_config(file_values: dict[str, str], args) -> embedstore.SynthConfig:
    kwargs = {}
    for key, value in file_values.items():
        if key in _SYNTH_KEYS:
            kwargs[key] = _SYNTH_KEYS[key](value)
    for key in _SYNTH_KEYS:
        arg = getattr(args, key, None)
        if arg is not None:
            kwargs[key] = arg
    kwargs["seed"] = args.seed
    return embedstore.SynthConfig(**kwargs)


def _load_manifests(paths: list[str]) -> dict[str, corpus.DatasetManifest]:
    out = {}
    for p in paths:
        m = corpus.parse_manifest(p)
        out[m.dataset_id] = m
    return out


def _open_stores(paths: list[str]) -> runner.StoreUnion:
    return runner.StoreUnion([embedstore.EmbeddingStore(p) for p in paths])


def build_parser() -> _Parser:
    parser = _Parser(prog="speechattr")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--workers", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="adapt a corpus directory to a generic manifest")
    p.add_argument("--kind", required=True, choices=adapters.CORPUS_KINDS)
    p.add_argument("--root", required=True)
    p.add_argument("--aux", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("manifest-summary", help="per-split speaker/segment/hour counts")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--frames-min", dest="frames_min", type=int, default=None)
    p.add_argument("--frames-max", dest="frames_max", type=int, default=None)
    p.add_argument("--separation", type=float, default=None)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
    p.add_argument("--age-slope", dest="age_slope", type=float, default=None)

    p = sub.add_parser("import-embeddings", help="consolidate raw float32 files into a store")
    p.add_argument("--dir", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one head on one attribute")
    p.add_argument("--manifest", required=True, nargs="+")
    p.add_argument("--store", required=True, nargs="+")
    p.add_argument("--attribute", required=True, choices=corpus.ATTRIBUTES)
    p.add_argument("--arch", required=True)
    p.add_argument("--val-ratio", type=float, default=0.1)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training log CSV path")

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest's test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True, nargs="+")
    p.add_argument("--split", default="test", choices=corpus.SPLITS)
    p.add_argument("--features-tag", default="external")
    p.add_argument("--out", default=None, help="write results as a report CSV")

    p = sub.add_parser("matrix", help="run the full experiment matrix")
    p.add_argument("--manifests", required=True, help="comma-separated manifest paths")
    p.add_argument("--stores", required=True, help="comma-separated store paths")
    p.add_argument("--arch", required=True, help="comma-separated architectures")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--val-ratio", type=float, default=0.1)
    p.add_argument("--features-tag", default="synthetic")

    p = sub.add_parser("report", help="render results CSV into markdown")
    p.add_argument("--results", required=True, help="report CSV produced by matrix/evaluate")
    p.add_argument("--layout", default="markdown", choices=("csv", "markdown"))
    p.add_argument("--out", default=None)
    return parser


def _cmd_ingest(args, _cfg):
    manifest = adapters.adapt_corpus(args.kind, args.root, aux=args.aux)
    corpus.write_manifest(manifest, args.out)
    print(f"wrote {len(manifest.records)} records to {args.out}")


def _cmd_manifest_summary(args, _cfg):
    manifest = corpus.parse_manifest(args.manifest)
    stats = corpus.summarize(manifest)
    print(f"dataset: {manifest.dataset_id}")
    for split in corpus.SPLITS:
        s = stats[split]
        hours = f"{s.hours:.2f}" if s.hours is not None else "unknown"
        print(f"  {split}: {s.speakers} speakers, {s.segments} segments, {hours} hours")


def _cmd_synth(args, cfg_values):
    manifest = corpus.parse_manifest(args.manifest)
    cfg = _synth_config(cfg_values, args)
    spaces = {}
    for attr in corpus.CATEGORICAL_ATTRIBUTES:
        try:
            spaces[attr] = corpus.harmonize_labels([manifest], attr)
        except ValueError:
            continue
    store = embedstore.synth_generate(manifest, spaces, cfg, args.out)
    print(f"wrote {len(store)} segments (dim {store.dim}) to {args.out}")


def _cmd_import(args, _cfg):
    store = embedstore.import_external(args.dir, args.dim, args.out)
    print(f"wrote {len(store)} segments (dim {store.dim}) to {args.out}")


def _cmd_train(args, cfg_values):
    manifests = _load_manifests(args.manifest)
    store = _open_stores(args.store)
    cfg = _train_config(cfg_values, args.seed)
    attribute = args.attribute
    arch = runner.resolve_architecture(args.arch)
    label_space = None
    num_classes = None
    if attribute != "age":
        label_space = corpus.harmonize_labels(list(manifests.values()), attribute)
        num_classes = label_space.num_classes
    train_records, val_records = [], []
    for m in manifests.values():
        labelled = corpus.filter_with_attribute(m.records, attribute)
        sub = corpus.DatasetManifest(dataset_id=m.dataset_id, records=labelled)
        tr, va = corpus.split_train_val(sub, args.val_ratio, cfg.seed)
        train_records.extend(tr)
        val_records.extend(va)
    task = task_for(attribute, arch, num_classes)
    model = build_head(arch, store.dim, task, seed=cfg.seed)
    ckpt, log = trainer.train(model, train_records, val_records, store, label_space, cfg)
    trainer.save_checkpoint(ckpt, args.out)
    if args.log:
        Path(args.log).write_text(log.to_csv())
    print(
        f"trained {arch} on {attribute}: best val metric {ckpt.best_val_metric:.4f} "
        f"({log.stop_reason} after {len(log.records)} epochs); checkpoint: {args.out}"
    )


def _cmd_evaluate(args, _cfg):
    ckpt = trainer.load_checkpoint(args.checkpoint)
    manifest = corpus.parse_manifest(args.manifest)
    store = _open_stores(args.store)
    attribute = ckpt.model.task.attribute
    records = corpus.filter_with_attribute(manifest.split_records(args.split), attribute)
    if ckpt.label_space is not None:
        records = tuple(r for r in records if r.get(attribute) in ckpt.label_space)
    if not records:
        raise CliError(f"no {args.split} records with attribute {attribute!r}")
    preds = trainer.predict_records(ckpt, records, store)
    common = dict(
        features_tag=args.features_tag,
        model=ckpt.model.architecture,
        train_split="?",
        test_split=manifest.dataset_id,
        attribute=attribute,
    )
    if attribute == "age":
        results = [metrics.EvalResult(metric="mae", value=metrics.mae(preds), **common)]
    else:
        k = ckpt.model.task.num_classes
        results = [
            metrics.EvalResult(metric="accuracy", value=metrics.accuracy(preds), **common),
            metrics.EvalResult(metric="f1", value=metrics.macro_f1(preds, k), **common),
        ]
    text = metrics.render_report(results, "csv")
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def _cmd_matrix(args, cfg_values):
    manifests = _load_manifests(args.manifests.split(","))
    store_paths = args.stores.split(",")
    store = _open_stores(store_paths)
    cfg = _train_config(cfg_values, args.seed)
    matrix = corpus.availability_matrix(list(manifests.values()))
    plan = runner.build_plan(matrix, args.arch.split(","))
    records = runner.execute_plan(
        plan,
        manifests,
        store,
        cfg,
        args.out,
        features_tag=args.features_tag,
        val_ratio=args.val_ratio,
        store_tag=",".join(sorted(store_paths)),
    )
    completed = sum(1 for r in records if r.status == "completed")
    skipped = sum(1 for r in records if r.status == "skipped")
    failed = [r for r in records if r.status == "failed"]
    print(f"{len(plan.runs)} planned runs: {completed} completed, {skipped} resumed, {len(failed)} failed")
    for r in failed:
        print(f"  FAILED {r.entry.attribute}/{r.entry.architecture}/{r.entry.train_tag}: {r.error}")
    print(f"report: {Path(args.out) / 'report.csv'}")
    if failed:
        raise CliError("some runs failed")


def _cmd_report(args, _cfg):
    lines = Path(args.results).read_text().splitlines()
    if not lines or lines[0] != metrics.REPORT_CSV_HEADER:
        raise CliError(f"{args.results}: expected header {metrics.REPORT_CSV_HEADER!r}")
    results = []
    for line in lines[1:]:
        if not line.strip():
            continue
        features, model, tr, te, attr, metric, value = line.split(",")
        value = float(value)
        if metric in ("accuracy", "f1"):
            value /= 100.0
        results.append(metrics.EvalResult(features, model, tr, te, attr, metric, value))
    text = metrics.render_report(results, args.layout)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


_COMMANDS = {
    "ingest": _cmd_ingest,
    "manifest-summary": _cmd_manifest_summary,
    "synth": _cmd_synth,
    "import-embeddings": _cmd_import,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "matrix": _cmd_matrix,
    "report": _cmd_report,
}


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg_values = _load_config_file(args.config)
        _COMMANDS[args.command](args, cfg_values)
        return 0
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ValueError, OSError, KeyError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
