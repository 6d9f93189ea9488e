"""Adapters from as-distributed corpus layouts to the generic manifest.

Each adapter scans a corpus root and emits a ``DatasetManifest`` whose
attribute columns are populated only for the attributes that corpus actually
labels. Audio files are never decoded; durations are taken from metadata when
the corpus provides them and left missing otherwise.
"""

from __future__ import annotations

import csv
import datetime as _dt
from pathlib import Path
from typing import Optional

from .corpus import DatasetManifest, ManifestError, SegmentRecord
from .util import fnv1a64, mix64

CORPUS_KINDS = ("timit", "voxceleb2", "l2arctic", "saa", "common_voice")

_GENDER_CANON = {
    "m": "male", "male": "male", "man": "male",
    "f": "female", "female": "female", "woman": "female",
}


def canonical_gender(raw: Optional[str]) -> Optional[str]:
    """Map a raw gender label to 'female'/'male'; anything else is missing."""
    if raw is None:
        return None
    return _GENDER_CANON.get(raw.strip().lower())


def adapt_corpus(
    kind: str, root: str | Path, aux: Optional[str | Path] = None
) -> DatasetManifest:
    """Build a generic manifest from an as-distributed corpus directory."""
    root = Path(root)
    if kind not in CORPUS_KINDS:
        raise ValueError(f"unknown corpus kind {kind!r}; expected one of {CORPUS_KINDS}")
    if not root.is_dir():
        raise ManifestError(f"{kind}: corpus root is not a directory: {root}")
    if kind == "timit":
        return _adapt_timit(root)
    if kind == "voxceleb2":
        if aux is None:
            raise ManifestError("voxceleb2 requires an age/gender annotation file (aux)")
        return _adapt_voxceleb2(root, Path(aux))
    if kind == "l2arctic":
        return _adapt_l2arctic(root)
    if kind == "saa":
        return _adapt_saa(root)
    return _adapt_common_voice(root)


# --- TIMIT -----------------------------------------------------------------

_TIMIT_EDU = {"BS", "HS", "MS", "PHD", "AS"}


def _timit_age(recdate: str, birthdate: str) -> Optional[float]:
    try:
        rec = _dt.datetime.strptime(recdate.strip(), "%m/%d/%y")
        birth = _dt.datetime.strptime(birthdate.strip(), "%m/%d/%y")
    except ValueError:
        return None
    # strptime's %y pivot puts 1986 recordings and 19xx births on the right
    # side already; guard against a birth "after" recording from pivot wrap.
    if birth > rec:
        birth = birth.replace(year=birth.year - 100)
    age = (rec - birth).days / 365.25
    return age if 0 < age < 120 else None


def _adapt_timit(root: Path) -> DatasetManifest:
    spkrinfo = root / "DOC" / "SPKRINFO.TXT"
    if not spkrinfo.is_file():
        raise ManifestError(f"timit: missing expected path {spkrinfo}")
    speakers = {}
    for line in spkrinfo.read_text(encoding="utf-8", errors="replace").splitlines():
        line = line.strip()
        if not line or line.startswith(";"):
            continue
        parts = line.split()
        if len(parts) < 9:
            continue
        sid, sex, _dr, use, recdate, birthdate = parts[0], parts[1], parts[2], parts[3], parts[4], parts[5]
        edu = parts[8].upper()
        speakers[f"{sex.upper()}{sid.upper()}"] = {
            "gender": canonical_gender(sex),
            "split": "dev" if use.upper() == "TRN" else "test",
            "age": _timit_age(recdate, birthdate),
            "education": edu if edu in _TIMIT_EDU else None,
        }
    records = []
    for top in ("TRAIN", "TEST"):
        top_dir = root / top
        if not top_dir.is_dir():
            raise ManifestError(f"timit: missing expected path {top_dir}")
        for wav in sorted(top_dir.rglob("*")):
            if wav.suffix.lower() != ".wav":
                continue
            spk = wav.parent.name.upper()
            info = speakers.get(spk)
            if info is None:
                continue
            records.append(SegmentRecord(
                dataset_id="timit",
                speaker_id=spk,
                segment_id=f"timit/{spk}/{wav.stem.upper()}",
                audio_path=str(wav),
                split=info["split"],
                age=info["age"],
                gender=info["gender"],
                education=info["education"],
            ))
    return DatasetManifest(dataset_id="timit", records=tuple(records))


# --- VoxCeleb2 -------------------------------------------------------------

def _adapt_voxceleb2(root: Path, aux: Path) -> DatasetManifest:
    """VoxCeleb2 layout: <root>/{dev,test}/aac/<spk>/<video>/<seg>.m4a.

    ``aux`` is a CSV with header ``speaker_id,age,gender`` carrying the
    externally curated age/gender annotations; speakers absent from it get
    missing attributes.
    """
    if not aux.is_file():
        raise ManifestError(f"voxceleb2: annotation file not found: {aux}")
    annots = {}
    with aux.open(encoding="utf-8", newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh), start=2):
            if row.get("speaker_id") is None:
                raise ManifestError(f"voxceleb2 aux row {i}: missing speaker_id column")
            age = None
            if row.get("age"):
                try:
                    age = float(row["age"])
                except ValueError:
                    raise ManifestError(
                        f"voxceleb2 aux row {i}: bad age {row['age']!r}"
                    ) from None
            annots[row["speaker_id"].strip()] = {
                "age": age,
                "gender": canonical_gender(row.get("gender")),
            }
    records = []
    found_any = False
    for part, split in (("dev", "dev"), ("test", "test")):
        aac = root / part / "aac"
        if not aac.is_dir():
            continue
        found_any = True
        for seg in sorted(aac.rglob("*.m4a")):
            spk = seg.relative_to(aac).parts[0]
            video = seg.parent.name
            info = annots.get(spk, {})
            records.append(SegmentRecord(
                dataset_id="voxceleb2",
                speaker_id=spk,
                segment_id=f"voxceleb2/{spk}/{video}/{seg.stem}",
                audio_path=str(seg),
                split=split,
                age=info.get("age"),
                gender=info.get("gender"),
            ))
    if not found_any:
        raise ManifestError(f"voxceleb2: missing expected path {root / 'dev' / 'aac'}")
    return DatasetManifest(dataset_id="voxceleb2", records=tuple(records))


# --- L2-Arctic -------------------------------------------------------------

# Speaker -> (native language, gender), from the corpus documentation.
L2ARCTIC_SPEAKERS = {
    "ABA": ("arabic", "male"), "SKA": ("arabic", "female"),
    "YBAA": ("arabic", "male"), "ZHAA": ("arabic", "female"),
    "ASI": ("hindi", "male"), "RRBI": ("hindi", "male"),
    "SVBI": ("hindi", "female"), "TNI": ("hindi", "female"),
    "HJK": ("korean", "female"), "HKK": ("korean", "male"),
    "YDCK": ("korean", "female"), "YKWK": ("korean", "male"),
    "BWC": ("mandarin", "male"), "LXC": ("mandarin", "female"),
    "NCC": ("mandarin", "female"), "TXHC": ("mandarin", "male"),
    "EBVS": ("spanish", "male"), "ERMS": ("spanish", "male"),
    "MBMPS": ("spanish", "female"), "NJS": ("spanish", "female"),
    "HQTV": ("vietnamese", "male"), "PNV": ("vietnamese", "female"),
    "THV": ("vietnamese", "male"), "TLV": ("vietnamese", "female"),
}

# Held-out speakers (one per language except arabic), giving the 19/5
# dev/test speaker split used throughout.
L2ARCTIC_TEST_SPEAKERS = ("TNI", "YKWK", "TXHC", "NJS", "TLV")


def _adapt_l2arctic(root: Path) -> DatasetManifest:
    records = []
    found_any = False
    for spk in sorted(L2ARCTIC_SPEAKERS):
        wav_dir = root / spk / "wav"
        if not wav_dir.is_dir():
            continue
        found_any = True
        language, gender = L2ARCTIC_SPEAKERS[spk]
        split = "test" if spk in L2ARCTIC_TEST_SPEAKERS else "dev"
        for wav in sorted(wav_dir.glob("*.wav")):
            records.append(SegmentRecord(
                dataset_id="l2arctic",
                speaker_id=spk,
                segment_id=f"l2arctic/{spk}/{wav.stem}",
                audio_path=str(wav),
                split=split,
                gender=gender,
                native_language=language,
            ))
    if not found_any:
        raise ManifestError(
            f"l2arctic: no speaker directories found; expected e.g. {root / 'ABA' / 'wav'}"
        )
    return DatasetManifest(dataset_id="l2arctic", records=tuple(records))


# --- Speech Accent Archive -------------------------------------------------

SAA_TEST_FRACTION = 0.2
_SAA_SPLIT_SEED = 0x5AA


def _adapt_saa(root: Path) -> DatasetManifest:
    """Speech Accent Archive: <root>/speakers_all.csv + recordings/<file>.mp3.

    The distribution has no official dev/test partition; speakers are split
    80/20 by a fixed hash of the speaker id, so the split is stable across
    runs and machines.
    """
    meta = root / "speakers_all.csv"
    if not meta.is_file():
        raise ManifestError(f"saa: missing expected path {meta}")
    records = []
    with meta.open(encoding="utf-8", newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh), start=2):
            if row.get("file_missing?", "").strip().lower() in ("true", "1", "yes"):
                continue
            filename = (row.get("filename") or "").strip()
            if not filename:
                raise ManifestError(f"saa row {i}: missing filename")
            speaker = (row.get("speakerid") or filename).strip()
            age = None
            if (row.get("age") or "").strip():
                try:
                    age = float(row["age"])
                except ValueError:
                    age = None
            if age is not None and not (0 < age < 120):
                age = None
            split = (
                "test"
                if (mix64(_SAA_SPLIT_SEED, fnv1a64(speaker)) / 2**64) < SAA_TEST_FRACTION
                else "dev"
            )
            records.append(SegmentRecord(
                dataset_id="saa",
                speaker_id=speaker,
                segment_id=f"saa/{filename}",
                audio_path=str(root / "recordings" / f"{filename}.mp3"),
                split=split,
                age=age,
                gender=canonical_gender(row.get("sex")),
                native_language=(row.get("native_language") or "").strip() or None,
                country=(row.get("country") or "").strip() or None,
            ))
    return DatasetManifest(dataset_id="saa", records=tuple(records))


# --- Common Voice 6.1 (English) --------------------------------------------

def _adapt_common_voice(root: Path) -> DatasetManifest:
    """Common Voice: <root>/{dev,test}.tsv with client_id/path/age/gender/accent.

    Age groups ("twenties", ...) are not converted to numeric ages, so the
    manifest carries no age column; the accent field is ingested as country.
    Rows without any demographic field are dropped.
    """
    records = []
    found_any = False
    for part, split in (("dev", "dev"), ("test", "test")):
        tsv = root / f"{part}.tsv"
        if not tsv.is_file():
            continue
        found_any = True
        with tsv.open(encoding="utf-8", newline="") as fh:
            for i, row in enumerate(csv.DictReader(fh, delimiter="\t"), start=2):
                gender = canonical_gender(row.get("gender"))
                accent = (row.get("accent") or "").strip() or None
                if gender is None and accent is None:
                    continue
                path = (row.get("path") or "").strip()
                if not path:
                    raise ManifestError(f"common_voice {tsv.name} row {i}: missing path")
                records.append(SegmentRecord(
                    dataset_id="common_voice",
                    speaker_id=(row.get("client_id") or "").strip(),
                    segment_id=f"common_voice/{Path(path).stem}",
                    audio_path=str(root / "clips" / path),
                    split=split,
                    gender=gender,
                    country=accent,
                ))
    if not found_any:
        raise ManifestError(f"common_voice: missing expected path {root / 'dev.tsv'}")
    return DatasetManifest(dataset_id="common_voice", records=tuple(records))
