"""The experiment matrix: plan, execute, resume, report.

Given several datasets, the runner plans one run per (attribute,
architecture, dataset) where the dataset carries the attribute, plus an
"All" run pooling every dataset that carries it. This script executes a tiny
two-dataset gender matrix with an MLP head, prints the rendered report, and
shows that re-executing resumes from completed runs without retraining.

Run: python3 demos/04_experiment_matrix.py  (about a minute on CPU)
"""

import tempfile
from pathlib import Path

from speechattr import (
    LabelSpace,
    StoreUnion,
    SynthConfig,
    TrainConfig,
    availability_matrix,
    build_plan,
    execute_plan,
    synth_generate,
)
from speechattr.corpus import DatasetManifest, SegmentRecord


def tiny_dataset(name, n_speakers=14, n_test=4):
    records = []
    for s in range(n_speakers):
        speaker = f"{name}_spk{s:02d}"
        split = "test" if s >= n_speakers - n_test else "dev"
        for k in range(3):
            records.append(SegmentRecord(
                dataset_id=name, speaker_id=speaker,
                segment_id=f"{name}/{speaker}/seg{k}", split=split,
                gender="male" if s % 2 else "female",
            ))
    return DatasetManifest(name, tuple(records))


manifests = {name: tiny_dataset(name) for name in ("north", "south")}
matrix = availability_matrix(list(manifests.values()))
plan = build_plan(matrix, ["mlp"])
print("== Plan ==")
for entry in plan.runs:
    print(f"  {entry.attribute:8s} {entry.architecture:4s} train={entry.train_tag}")

space = {"gender": LabelSpace("gender", ("female", "male"))}
cfg = TrainConfig(max_epochs=5, batch_size=8, seed=3)

with tempfile.TemporaryDirectory() as tmp:
    store = StoreUnion([
        synth_generate(m, space, SynthConfig(dim=16, seed=9), Path(tmp) / f"{n}.embs")
        for n, m in manifests.items()
    ])
    out = Path(tmp) / "experiments"

    results = execute_plan(plan, manifests, store, cfg, out)
    print("\n== First execution ==")
    for r in results:
        print(f"  {r.entry.attribute}/{r.entry.train_tag}: {r.status}")

    # Re-executing the same plan with the same config finds the finished
    # runs (matching run hash + loadable checkpoint) and skips them.
    results = execute_plan(plan, manifests, store, cfg, out)
    print("\n== Second execution (resume) ==")
    for r in results:
        print(f"  {r.entry.attribute}/{r.entry.train_tag}: {r.status}")

    print("\n== report.md ==")
    print((out / "report.md").read_text())
