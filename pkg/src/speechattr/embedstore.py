"""Frame-feature storage and pooling.

Store file layout (little-endian): magic ``EMBS``, format version u32=1,
dim u32, count u64; then ``count`` index entries of
(id_len u16, id bytes UTF-8, offset_frames u64, T u32); then the payload of
all frames as float32, row-major. A segment's payload byte offset is
``offset_frames * dim * 4``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .corpus import ATTRIBUTES, DatasetManifest, LabelSpace, canonicalize_label
from .util import fnv1a64, mix64

MAGIC = b"EMBS"
FORMAT_VERSION = 1


class StoreError(ValueError):
    """Raised for malformed store files or violated store invariants."""


@dataclass(frozen=True)
class FeatureSequence:
    segment_id: str
    frames: np.ndarray  # (T, D) float32

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise StoreError(
                f"segment {self.segment_id!r}: frames must be a (T>=1, D>=1) matrix"
            )
        if not np.all(np.isfinite(frames)):
            raise StoreError(f"segment {self.segment_id!r}: non-finite frame values")
        object.__setattr__(self, "frames", frames)


@dataclass(frozen=True)
class EmbeddingVector:
    segment_id: str
    values: np.ndarray  # (D,) float32


class EmbeddingStore:
    """Read-only view of a store file; sequences are served on demand."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.index: dict[str, tuple[int, int]] = {}  # id -> (offset_frames, T)
        with self.path.open("rb") as fh:
            header = fh.read(20)
            if len(header) < 20 or header[:4] != MAGIC:
                raise StoreError(f"{self.path}: not an embedding store")
            version, dim = struct.unpack_from("<II", header, 4)
            (count,) = struct.unpack_from("<Q", header, 12)
            if version != FORMAT_VERSION:
                raise StoreError(f"{self.path}: unsupported format version {version}")
            self.dim = int(dim)
            total_frames = 0
            for _ in range(count):
                (id_len,) = struct.unpack("<H", fh.read(2))
                seg_id = fh.read(id_len).decode("utf-8")
                offset_frames, t = struct.unpack("<QI", fh.read(12))
                if seg_id in self.index:
                    raise StoreError(f"{self.path}: duplicate segment id {seg_id!r}")
                self.index[seg_id] = (int(offset_frames), int(t))
                total_frames += t
            self._payload_start = fh.tell()
        payload_bytes = self.path.stat().st_size - self._payload_start
        if payload_bytes != total_frames * self.dim * 4:
            raise StoreError(
                f"{self.path}: payload size {payload_bytes} does not match index "
                f"({total_frames} frames x dim {self.dim})"
            )
        for seg_id, (offset, t) in self.index.items():
            if offset + t > total_frames:
                raise StoreError(f"{self.path}: index range for {seg_id!r} out of bounds")

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, segment_id: str) -> bool:
        return segment_id in self.index

    def segment_ids(self) -> tuple[str, ...]:
        return tuple(self.index)

    def get_sequence(self, segment_id: str) -> FeatureSequence:
        if segment_id not in self.index:
            raise KeyError(f"segment {segment_id!r} not in store {self.path}")
        offset_frames, t = self.index[segment_id]
        with self.path.open("rb") as fh:
            fh.seek(self._payload_start + offset_frames * self.dim * 4)
            data = fh.read(t * self.dim * 4)
        frames = np.frombuffer(data, dtype="<f4").reshape(t, self.dim).copy()
        return FeatureSequence(segment_id=segment_id, frames=frames)


def write_store(sequences: Iterable[FeatureSequence], path: str | Path) -> EmbeddingStore:
    """Write sequences to a store file and return the opened store."""
    path = Path(path)
    seqs = list(sequences)
    dim = seqs[0].frames.shape[1] if seqs else 0
    index = []
    offset = 0
    for seq in seqs:
        if seq.frames.shape[1] != dim:
            raise StoreError(
                f"segment {seq.segment_id!r}: dim {seq.frames.shape[1]} != store dim {dim}"
            )
        if seq.segment_id in {i[0] for i in index}:
            raise StoreError(f"duplicate segment id {seq.segment_id!r}")
        index.append((seq.segment_id, offset, seq.frames.shape[0]))
        offset += seq.frames.shape[0]
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", FORMAT_VERSION, dim, len(seqs)))
        for seg_id, off, t in index:
            raw = seg_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<QI", off, t))
        for seq in seqs:
            fh.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())
    return EmbeddingStore(path)


def pool_mean(seq: FeatureSequence) -> EmbeddingVector:
    """Mean over time, accumulated in float64, stored as float32."""
    if seq.frames.shape[0] < 1:
        raise StoreError(f"segment {seq.segment_id!r}: cannot pool an empty sequence")
    pooled = seq.frames.astype(np.float64).mean(axis=0).astype(np.float32)
    return EmbeddingVector(segment_id=seq.segment_id, values=pooled)


# --- synthetic generation --------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Attribute-conditioned Gaussian synthetic features for desk-scale tests."""

    dim: int = 768
    frames_min: int = 5
    frames_max: int = 20
    separation: float = 2.0
    noise_sigma: float = 1.0
    age_slope: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.frames_min < 1 or self.frames_max < self.frames_min:
            raise ValueError("bad synthetic frame/dim configuration")
        if self.noise_sigma <= 0 or self.separation < 0:
            raise ValueError("need noise_sigma > 0 and separation >= 0")


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def synth_generate(
    manifest: DatasetManifest,
    label_spaces: dict[str, LabelSpace],
    cfg: SynthConfig,
    path: str | Path,
) -> EmbeddingStore:
    """Generate a deterministic synthetic store for a manifest.

    Every frame of a segment is the sum of fixed unit mean vectors for the
    segment's present categorical attribute classes (scaled by
    ``separation``), an age drift term along a fixed direction, and i.i.d.
    Gaussian noise. Per-segment randomness is seeded from
    mix64(cfg.seed, fnv1a64(segment_id)), so output is independent of record
    order and reruns are byte-identical.
    """
    if not manifest.records:
        raise ValueError("manifest is empty")
    global_rng = np.random.Generator(np.random.PCG64(cfg.seed))
    class_means: dict[tuple[str, str], np.ndarray] = {}
    for attr in sorted(label_spaces):
        space = label_spaces[attr]
        for cls in space.classes:
            class_means[(attr, cls)] = _unit_vector(global_rng, cfg.dim)
    age_direction = _unit_vector(global_rng, cfg.dim)

    def sequences() -> Iterator[FeatureSequence]:
        for rec in manifest.records:
            rng = np.random.Generator(
                np.random.PCG64(mix64(cfg.seed, fnv1a64(rec.segment_id)))
            )
            t = int(rng.integers(cfg.frames_min, cfg.frames_max + 1))
            base = np.zeros(cfg.dim)
            for attr in sorted(label_spaces):
                value = rec.get(attr)
                if value is None:
                    continue
                key = (attr, canonicalize_label(value))
                if key in class_means:
                    base = base + cfg.separation * class_means[key]
            if rec.age is not None:
                base = base + cfg.age_slope * (rec.age - 40.0) * age_direction
            frames = base[None, :] + cfg.noise_sigma * rng.standard_normal((t, cfg.dim))
            yield FeatureSequence(rec.segment_id, frames.astype(np.float32))

    return write_store(sequences(), path)


# --- external import -------------------------------------------------------

def import_external(
    directory: str | Path, dim: int, path: str | Path
) -> EmbeddingStore:
    """Consolidate per-segment raw float32 files into a store.

    ``directory`` must contain ``index.csv`` with header
    ``segment_id,filename``; each named file holds one segment's frames as
    raw little-endian float32, row-major with ``dim`` columns, so its size
    must be a multiple of 4*dim.
    """
    directory = Path(directory)
    listing = directory / "index.csv"
    if not listing.is_file():
        raise StoreError(f"missing index listing {listing}")
    entries = []
    with listing.open(encoding="utf-8", newline="") as fh:
        import csv as _csv

        reader = _csv.DictReader(fh)
        if reader.fieldnames != ["segment_id", "filename"]:
            raise StoreError(f"{listing}: header must be 'segment_id,filename'")
        for i, row in enumerate(reader, start=2):
            entries.append((i, row["segment_id"].strip(), row["filename"].strip()))

    def sequences() -> Iterator[FeatureSequence]:
        for lineno, seg_id, filename in entries:
            f = directory / filename
            if not f.is_file():
                raise StoreError(f"{listing} row {lineno}: missing file {f}")
            size = f.stat().st_size
            if size == 0 or size % (4 * dim) != 0:
                raise StoreError(
                    f"{f}: size {size} is not a positive multiple of 4*dim ({4 * dim})"
                )
            frames = np.fromfile(f, dtype="<f4").reshape(-1, dim)
            yield FeatureSequence(seg_id, frames)

    return write_store(sequences(), path)


def pooled_matrix(store: EmbeddingStore, segment_ids: Sequence[str]) -> np.ndarray:
    """Stack pooled embeddings for the given segments into an (N, D) matrix."""
    return np.stack([pool_mean(store.get_sequence(s)).values for s in segment_ids])
