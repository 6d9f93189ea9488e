"""Experiment matrix: plan construction and resumable execution.

For every attribute, each head is trained once per dataset labelling that
attribute, plus once on the union of all such datasets ("All") when more
than one exists; each trained model is evaluated on the test split of every
dataset in its training set. Completed runs are identified by a hash of the
full run description and skipped on re-execution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .corpus import (
    ATTRIBUTES,
    AvailabilityMatrix,
    DatasetManifest,
    LabelSpace,
    filter_with_attribute,
    harmonize_labels,
    split_train_val,
)
from .embedstore import EmbeddingStore
from .heads import ARCHITECTURES, build_head, task_for
from .metrics import EvalResult, PredictionSet, accuracy, macro_f1, mae, render_report
from .trainer import (
    Checkpoint,
    TrainConfig,
    TrainingError,
    load_checkpoint,
    predict_records,
    save_checkpoint,
    train,
)
from .util import fnv1a64, mix64

ARCH_ALIASES = {"lstm": "bilstm"}


def resolve_architecture(name: str) -> str:
    name = name.strip().lower()
    name = ARCH_ALIASES.get(name, name)
    if name not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {name!r}")
    return name


@dataclass(frozen=True)
class PlanEntry:
    attribute: str
    architecture: str
    train_datasets: tuple[str, ...]  # sorted
    is_all: bool

    @property
    def train_tag(self) -> str:
        return "All" if self.is_all else self.train_datasets[0]

    @property
    def test_datasets(self) -> tuple[str, ...]:
        return self.train_datasets


@dataclass(frozen=True)
class ExperimentPlan:
    runs: tuple[PlanEntry, ...]


def build_plan(matrix: AvailabilityMatrix, architectures: Sequence[str]) -> ExperimentPlan:
    """One run per (attribute, train set, architecture).

    An "All" run is emitted only when at least two datasets label the
    attribute, so it never duplicates a single-dataset run.
    """
    archs = sorted({resolve_architecture(a) for a in architectures})
    if not archs:
        raise ValueError("at least one architecture is required")
    runs = []
    for attr in ATTRIBUTES:
        datasets = tuple(sorted(matrix.datasets_with(attr)))
        if not datasets:
            continue
        for arch in archs:
            for d in datasets:
                runs.append(PlanEntry(attr, arch, (d,), is_all=False))
            if len(datasets) >= 2:
                runs.append(PlanEntry(attr, arch, datasets, is_all=True))
    return ExperimentPlan(runs=tuple(runs))


class StoreUnion:
    """Read-only view over several stores keyed by globally unique segment ids."""

    def __init__(self, stores: Sequence[EmbeddingStore]):
        if not stores:
            raise ValueError("no stores given")
        dims = {s.dim for s in stores}
        if len(dims) != 1:
            raise ValueError(f"stores disagree on dim: {sorted(dims)}")
        self.dim = dims.pop()
        self._stores = list(stores)

    def __contains__(self, segment_id: str) -> bool:
        return any(segment_id in s for s in self._stores)

    def get_sequence(self, segment_id: str):
        for s in self._stores:
            if segment_id in s:
                return s.get_sequence(segment_id)
        raise KeyError(f"segment {segment_id!r} not in any store")


@dataclass
class RunRecord:
    entry: PlanEntry
    config_hash: str
    seed: int
    status: str  # "completed" | "skipped" | "failed"
    checkpoint_path: Optional[Path]
    trainlog_path: Optional[Path]
    results: list[EvalResult]
    error: Optional[str] = None


def _run_hash(entry: PlanEntry, cfg: TrainConfig, store_tag: str) -> str:
    desc = json.dumps(
        {
            "attribute": entry.attribute,
            "architecture": entry.architecture,
            "train_datasets": list(entry.train_datasets),
            "is_all": entry.is_all,
            "config": cfg.to_dict(),
            "store": store_tag,
        },
        sort_keys=True,
    )
    return f"{fnv1a64(desc):016x}"


def _evaluate(
    ckpt: Checkpoint,
    entry: PlanEntry,
    manifests: dict[str, DatasetManifest],
    store,
    features_tag: str,
) -> list[EvalResult]:
    results = []
    for test_ds in entry.test_datasets:
        records = filter_with_attribute(manifests[test_ds].split_records("test"), entry.attribute)
        if ckpt.label_space is not None:
            records = tuple(r for r in records if r.get(entry.attribute) in ckpt.label_space)
        if not records:
            continue
        preds = predict_records(ckpt, records, store)
        common = dict(
            features_tag=features_tag,
            model=entry.architecture,
            train_split=entry.train_tag,
            test_split=test_ds,
            attribute=entry.attribute,
        )
        if entry.attribute == "age":
            results.append(EvalResult(metric="mae", value=mae(preds), **common))
        else:
            k = ckpt.model.task.num_classes
            results.append(EvalResult(metric="accuracy", value=accuracy(preds), **common))
            results.append(EvalResult(metric="f1", value=macro_f1(preds, k), **common))
    return results


def _results_to_json(results: list[EvalResult]) -> list[dict]:
    return [vars(r) for r in results]


def _results_from_json(raw: list[dict]) -> list[EvalResult]:
    return [EvalResult(**r) for r in raw]


def execute_plan(
    plan: ExperimentPlan,
    manifests: dict[str, DatasetManifest],
    store,
    cfg: TrainConfig,
    out_dir: str | Path,
    features_tag: str = "synthetic",
    val_ratio: float = 0.1,
    head_options: Optional[dict] = None,
    store_tag: str = "store",
) -> list[RunRecord]:
    """Run every plan entry, resuming completed runs; render the final report."""
    out_dir = Path(out_dir)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    head_options = head_options or {}
    records_out: list[RunRecord] = []

    for entry in plan.runs:
        run_hash = _run_hash(entry, cfg, store_tag)
        run_dir = runs_dir / f"{entry.attribute}_{entry.architecture}_{entry.train_tag}_{run_hash}"
        meta_path = run_dir / "run.json"
        ckpt_path = run_dir / "checkpoint.satt"
        log_path = run_dir / "trainlog.csv"
        results_path = run_dir / "results.json"

        if meta_path.is_file() and results_path.is_file():
            try:
                meta = json.loads(meta_path.read_text())
                if meta.get("config_hash") == run_hash:
                    load_checkpoint(ckpt_path)  # integrity check
                    results = _results_from_json(json.loads(results_path.read_text()))
                    records_out.append(RunRecord(
                        entry, run_hash, meta["seed"], "skipped", ckpt_path, log_path, results
                    ))
                    continue
            except (ValueError, OSError, KeyError):
                pass  # fall through and re-run

        run_seed = mix64(cfg.seed, int(run_hash, 16))
        run_cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": run_seed})
        try:
            train_manifests = [manifests[d] for d in entry.train_datasets]
            label_space = None
            num_classes = None
            if entry.attribute != "age":
                label_space = harmonize_labels(train_manifests, entry.attribute)
                num_classes = label_space.num_classes
            train_records: list = []
            val_records: list = []
            for m in train_manifests:
                labelled = filter_with_attribute(m.records, entry.attribute)
                sub = DatasetManifest(dataset_id=m.dataset_id, records=labelled)
                tr, va = split_train_val(sub, val_ratio, run_seed)
                train_records.extend(tr)
                val_records.extend(va)
            task = task_for(entry.attribute, entry.architecture, num_classes)
            opts = dict(head_options.get(entry.architecture, {}))
            model = build_head(entry.architecture, store.dim, task, seed=run_seed, **opts)
            ckpt, log = train(model, train_records, val_records, store, label_space, run_cfg)
            run_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(ckpt, ckpt_path)
            log_path.write_text(log.to_csv())
            results = _evaluate(ckpt, entry, manifests, store, features_tag)
            results_path.write_text(json.dumps(_results_to_json(results), indent=1))
            meta_path.write_text(json.dumps({
                "config_hash": run_hash,
                "seed": run_seed,
                "attribute": entry.attribute,
                "architecture": entry.architecture,
                "train_datasets": list(entry.train_datasets),
                "is_all": entry.is_all,
                "config": run_cfg.to_dict(),
                "stop_reason": log.stop_reason,
            }, indent=1))
            records_out.append(RunRecord(
                entry, run_hash, run_seed, "completed", ckpt_path, log_path, results
            ))
        except (TrainingError, KeyError, ValueError) as e:
            records_out.append(RunRecord(
                entry, run_hash, run_seed, "failed", None, None, [], error=str(e)
            ))

    all_results = [r for rec in records_out for r in rec.results]
    (out_dir / "report.csv").write_text(render_report(all_results, "csv"))
    (out_dir / "report.md").write_text(render_report(all_results, "markdown"))
    index_lines = ["config_hash,attribute,architecture,train,status,checkpoint"]
    for rec in records_out:
        ckpt = rec.checkpoint_path.as_posix() if rec.checkpoint_path else ""
        index_lines.append(
            f"{rec.config_hash},{rec.entry.attribute},{rec.entry.architecture},"
            f"{rec.entry.train_tag},{rec.status},{ckpt}"
        )
    (out_dir / "run_index.csv").write_text("\n".join(index_lines) + "\n")
    return records_out
