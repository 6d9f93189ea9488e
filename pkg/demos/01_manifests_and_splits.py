"""Manifests, label harmonization, availability, and speaker-level splits.

Every dataset is described by a manifest: one row per audio segment with the
speaker it belongs to, a dev/test split, and whichever demographic labels the
dataset provides. This script builds two small manifests by hand, harmonizes
their label vocabularies, inspects which attribute/dataset pairs are usable,
and cuts a deterministic speaker-disjoint train/validation split.

Run: python3 demos/01_manifests_and_splits.py
"""

from speechattr import (
    DatasetManifest,
    SegmentRecord,
    availability_matrix,
    harmonize_labels,
    split_train_val,
    summarize,
)


def record(dataset, speaker, seg, **labels):
    return SegmentRecord(
        dataset_id=dataset,
        speaker_id=speaker,
        segment_id=f"{dataset}/{speaker}/{seg}",
        split=labels.pop("split", "dev"),
        duration_s=3.0,
        **labels,
    )


# A dataset with age, gender and native language...
alpha = DatasetManifest("alpha", tuple(
    record("alpha", f"spk{i}", j, age=25 + i, gender="Female" if i % 2 else "MALE",
           native_language="  Spanish " if i < 4 else "mandarin")
    for i in range(8) for j in range(3)
))

# ...and one with gender only, in a different capitalization.
beta = DatasetManifest("beta", tuple(
    record("beta", f"spk{i}", j, gender="female" if i % 2 else "male",
           split="test" if i >= 6 else "dev")
    for i in range(8) for j in range(2)
))

print("== Summaries ==")
for m in (alpha, beta):
    print(f"  {m.dataset_id}: {summarize(m)}")

# Labels are canonicalized (trimmed, lowercased, whitespace collapsed), so
# 'Female', 'female' and ' FEMALE ' are one class. Harmonization produces the
# sorted union vocabulary shared by a multi-dataset training run.
space = harmonize_labels([alpha, beta], "gender")
print("\n== Harmonized gender classes ==")
print(f"  {space.classes}")

matrix = availability_matrix([alpha, beta])
print("\n== Availability ==")
for attr in ("age", "gender", "native_language"):
    print(f"  {attr}: {matrix.datasets_with(attr)}")

# Splits are speaker-level: no speaker appears on both sides, and the
# assignment depends only on (speaker_id, seed) — stable across reruns and
# record order.
train, val = split_train_val(alpha, ratio=0.25, seed=7)
print("\n== Speaker split (25% validation, seed 7) ==")
print(f"  train speakers: {sorted({r.speaker_id for r in train})}")
print(f"  val speakers:   {sorted({r.speaker_id for r in val})}")
