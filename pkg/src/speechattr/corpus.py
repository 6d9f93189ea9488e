"""Dataset manifests: parsing, label harmonization, splits, availability.

The generic manifest is a UTF-8 CSV with the fixed header

    dataset_id,speaker_id,segment_id,audio_path,split,duration_s,age,gender,native_language,country,education

Empty fields mean "missing". Fields must not contain commas; no quoting is
applied. ``split`` is ``dev`` or ``test``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .util import fnv1a64, mix64

ATTRIBUTES = ("age", "gender", "native_language", "country", "education")
CATEGORICAL_ATTRIBUTES = ("gender", "native_language", "country", "education")
SPLITS = ("dev", "test")

MANIFEST_HEADER = (
    "dataset_id,speaker_id,segment_id,audio_path,split,duration_s,"
    "age,gender,native_language,country,education"
)
_COLUMNS = MANIFEST_HEADER.split(",")


class ManifestError(ValueError):
    """Raised for malformed manifests or violated manifest invariants."""


@dataclass(frozen=True)
class SegmentRecord:
    dataset_id: str
    speaker_id: str
    segment_id: str
    split: str
    audio_path: Optional[str] = None
    duration_s: Optional[float] = None
    age: Optional[float] = None
    gender: Optional[str] = None
    native_language: Optional[str] = None
    country: Optional[str] = None
    education: Optional[str] = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(
                f"segment {self.segment_id!r}: split must be one of {SPLITS}, got {self.split!r}"
            )
        if self.age is not None:
            if not math.isfinite(self.age) or not (0 < self.age < 120):
                raise ManifestError(
                    f"segment {self.segment_id!r}: age must be finite and in (0, 120), got {self.age}"
                )
        if self.duration_s is not None and self.duration_s < 0:
            raise ManifestError(
                f"segment {self.segment_id!r}: negative duration {self.duration_s}"
            )

    def get(self, attribute: str):
        if attribute not in ATTRIBUTES:
            raise ValueError(f"unknown attribute {attribute!r}")
        return getattr(self, attribute)


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    records: tuple[SegmentRecord, ...]

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.segment_id in seen:
                raise ManifestError(f"duplicate segment_id {rec.segment_id!r}")
            seen.add(rec.segment_id)
        by_speaker: dict[str, set[str]] = {}
        for rec in self.records:
            by_speaker.setdefault(rec.speaker_id, set()).add(rec.split)
        leaky = sorted(s for s, splits in by_speaker.items() if len(splits) > 1)
        if leaky:
            raise ManifestError(
                f"dataset {self.dataset_id!r}: speakers present in both dev and test: {leaky[:5]}"
            )

    def split_records(self, split: str) -> tuple[SegmentRecord, ...]:
        return tuple(r for r in self.records if r.split == split)


@dataclass(frozen=True)
class LabelSpace:
    """Dense, lexicographically ordered vocabulary for one categorical attribute."""

    attribute: str
    classes: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("label classes must be unique")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.classes)})

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def index_of(self, label: str) -> int:
        key = canonicalize_label(label)
        if key not in self._index:
            raise KeyError(f"label {label!r} not in {self.attribute} label space")
        return self._index[key]

    def __contains__(self, label: str) -> bool:
        return canonicalize_label(label) in self._index


@dataclass(frozen=True)
class AvailabilityMatrix:
    cells: dict[tuple[str, str], bool]
    class_counts: dict[tuple[str, str], Optional[int]]
    dataset_ids: tuple[str, ...]

    def has(self, dataset_id: str, attribute: str) -> bool:
        return self.cells.get((dataset_id, attribute), False)

    def datasets_with(self, attribute: str) -> tuple[str, ...]:
        return tuple(d for d in self.dataset_ids if self.has(d, attribute))


def canonicalize_label(label: str) -> str:
    """Trim, lowercase and collapse internal whitespace."""
    return re.sub(r"\s+", " ", label.strip()).lower()


def _parse_optional_float(raw: str, row: int, column: str) -> Optional[float]:
    if raw == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise ManifestError(f"row {row}: field {column!r}: not a number: {raw!r}") from None


def parse_manifest(path: str | Path) -> DatasetManifest:
    """Parse a generic manifest CSV into a DatasetManifest."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty file, expected header {MANIFEST_HEADER!r}")
    if lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError(f"{path}: bad header {lines[0]!r}")
    records = []
    dataset_id = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(_COLUMNS):
            raise ManifestError(
                f"row {lineno}: expected {len(_COLUMNS)} fields, got {len(parts)}"
            )
        row = dict(zip(_COLUMNS, (p.strip() for p in parts)))
        for req in ("dataset_id", "speaker_id", "segment_id", "split"):
            if row[req] == "":
                raise ManifestError(f"row {lineno}: field {req!r} is required")
        if dataset_id is None:
            dataset_id = row["dataset_id"]
        if row["split"] not in SPLITS:
            raise ManifestError(f"row {lineno}: field 'split': invalid value {row['split']!r}")
        try:
            rec = SegmentRecord(
                dataset_id=row["dataset_id"],
                speaker_id=row["speaker_id"],
                segment_id=row["segment_id"],
                audio_path=row["audio_path"] or None,
                split=row["split"],
                duration_s=_parse_optional_float(row["duration_s"], lineno, "duration_s"),
                age=_parse_optional_float(row["age"], lineno, "age"),
                gender=row["gender"] or None,
                native_language=row["native_language"] or None,
                country=row["country"] or None,
                education=row["education"] or None,
            )
        except ManifestError as e:
            raise ManifestError(f"row {lineno}: {e}") from None
        records.append(rec)
    if dataset_id is None:
        dataset_id = path.stem
    return DatasetManifest(dataset_id=dataset_id, records=tuple(records))


def _format_field(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if "," in text:
        raise ManifestError(f"manifest fields must not contain commas: {text!r}")
    return text


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest CSV; parse_manifest(write_manifest(m)) round-trips."""
    lines = [MANIFEST_HEADER]
    for r in manifest.records:
        lines.append(",".join(_format_field(v) for v in (
            r.dataset_id, r.speaker_id, r.segment_id, r.audio_path, r.split,
            r.duration_s, r.age, r.gender, r.native_language, r.country, r.education,
        )))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def harmonize_labels(manifests: Sequence[DatasetManifest], attribute: str) -> LabelSpace:
    """Union vocabulary for one categorical attribute across manifests.

    Labels are canonicalized (trim / lowercase / whitespace-collapse) and the
    union is sorted lexicographically, so identical canonical forms merge and
    the class ordering is deterministic.
    """
    if attribute not in CATEGORICAL_ATTRIBUTES:
        raise ValueError(f"attribute {attribute!r} is not categorical")
    labels = set()
    for m in manifests:
        for rec in m.records:
            value = rec.get(attribute)
            if value is not None:
                labels.add(canonicalize_label(value))
    if not labels:
        raise ValueError(f"attribute {attribute!r} absent from all manifests")
    return LabelSpace(attribute=attribute, classes=tuple(sorted(labels)))


def split_train_val(
    manifest: DatasetManifest, ratio: float, seed: int
) -> tuple[tuple[SegmentRecord, ...], tuple[SegmentRecord, ...]]:
    """Speaker-disjoint train/val partition of the dev split.

    Speakers are ranked by a seeded hash of their id, and the first
    round(ratio * n_speakers) (at least 1) become validation speakers. The
    assignment depends only on (speaker_id, seed), never on record order.
    """
    if not (0 < ratio < 1):
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    dev = manifest.split_records("dev")
    speakers = sorted({r.speaker_id for r in dev})
    if len(speakers) < 2:
        raise ValueError(
            f"dataset {manifest.dataset_id!r}: need >= 2 dev speakers, have {len(speakers)}"
        )
    ranked = sorted(speakers, key=lambda s: (mix64(seed, fnv1a64(s)), s))
    n_val = max(1, round(ratio * len(speakers)))
    val_speakers = set(ranked[:n_val])
    train = tuple(r for r in dev if r.speaker_id not in val_speakers)
    val = tuple(r for r in dev if r.speaker_id in val_speakers)
    return train, val


def availability_matrix(manifests: Sequence[DatasetManifest]) -> AvailabilityMatrix:
    """Which datasets label which attributes, with per-dataset class counts."""
    if not manifests:
        raise ValueError("no manifests given")
    cells = {}
    class_counts = {}
    for m in manifests:
        for attr in ATTRIBUTES:
            present = any(rec.get(attr) is not None for rec in m.records)
            cells[(m.dataset_id, attr)] = present
            if present and attr in CATEGORICAL_ATTRIBUTES:
                class_counts[(m.dataset_id, attr)] = harmonize_labels([m], attr).num_classes
            else:
                class_counts[(m.dataset_id, attr)] = None
    return AvailabilityMatrix(
        cells=cells,
        class_counts=class_counts,
        dataset_ids=tuple(m.dataset_id for m in manifests),
    )


@dataclass(frozen=True)
class SplitStats:
    speakers: int
    segments: int
    hours: Optional[float]


def summarize(manifest: DatasetManifest) -> dict[str, SplitStats]:
    """Per-split speaker/segment counts and hours (None if any duration missing)."""
    out = {}
    for split in SPLITS:
        recs = manifest.split_records(split)
        durations = [r.duration_s for r in recs]
        if recs and all(d is not None for d in durations):
            hours = sum(durations) / 3600.0
        elif not recs:
            hours = 0.0
        else:
            hours = None
        out[split] = SplitStats(
            speakers=len({r.speaker_id for r in recs}),
            segments=len(recs),
            hours=hours,
        )
    return out


def filter_with_attribute(
    records: Iterable[SegmentRecord], attribute: str
) -> tuple[SegmentRecord, ...]:
    """Records that carry the given attribute."""
    return tuple(r for r in records if r.get(attribute) is not None)
