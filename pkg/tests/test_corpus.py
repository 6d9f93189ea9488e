import numpy as np
import pytest

from speechattr.corpus import (
    ATTRIBUTES,
    DatasetManifest,
    ManifestError,
    SegmentRecord,
    availability_matrix,
    canonicalize_label,
    harmonize_labels,
    parse_manifest,
    split_train_val,
    summarize,
    write_manifest,
)
from conftest import make_records, table1_manifests

HEADER = "dataset_id,speaker_id,segment_id,audio_path,split,duration_s,age,gender,native_language,country,education"


def write_lines(tmp_path, lines, name="m.csv"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


class TestParseManifest:
    def test_basic_roundtrip(self, tmp_path):
        manifest = make_records(
            "d", 4, 2, 1,
            ages=[30.5, 41.0, 52.25, 63.0],
            genders=["male", "female", "male", "female"],
            durations=[1.25, 2.0, 3.5, 4.0],
        )
        path = tmp_path / "out.csv"
        write_manifest(manifest, path)
        back = parse_manifest(path)
        assert back.records == manifest.records

    def test_header_only(self, tmp_path):
        p = write_lines(tmp_path, [HEADER])
        assert parse_manifest(p).records == ()

    def test_missing_cells_become_absent(self, tmp_path):
        p = write_lines(tmp_path, [HEADER, "d,s1,seg1,,dev,,,,,,"])
        rec = parse_manifest(p).records[0]
        for attr in ATTRIBUTES:
            assert rec.get(attr) is None
        assert rec.duration_s is None

    def test_bad_age_names_row_and_field(self, tmp_path):
        p = write_lines(tmp_path, [HEADER, "d,s1,seg1,,dev,,abc,,,,"])
        with pytest.raises(ManifestError, match="row 2.*age"):
            parse_manifest(p)

    def test_duplicate_segment_id(self, tmp_path):
        p = write_lines(tmp_path, [HEADER, "d,s1,seg1,,dev,,,,,,", "d,s1,seg1,,dev,,,,,,"])
        with pytest.raises(ManifestError, match="duplicate segment_id"):
            parse_manifest(p)

    def test_bad_split(self, tmp_path):
        p = write_lines(tmp_path, [HEADER, "d,s1,seg1,,train,,,,,,"])
        with pytest.raises(ManifestError, match="row 2.*split"):
            parse_manifest(p)

    def test_bad_header(self, tmp_path):
        p = write_lines(tmp_path, ["a,b,c"])
        with pytest.raises(ManifestError, match="header"):
            parse_manifest(p)

    def test_wrong_field_count(self, tmp_path):
        p = write_lines(tmp_path, [HEADER, "d,s1,seg1,dev"])
        with pytest.raises(ManifestError, match="row 2"):
            parse_manifest(p)

    def test_timit_sized_manifest_summary(self, tmp_path):
        # 461 dev speakers x 10 segments and 168 test speakers x 10 segments.
        manifest = make_records("timit", 461 + 168, 10, 168)
        path = tmp_path / "timit.csv"
        write_manifest(manifest, path)
        stats = summarize(parse_manifest(path))
        assert stats["dev"].speakers == 461
        assert stats["dev"].segments == 4610
        assert stats["test"].speakers == 168
        assert stats["test"].segments == 1680


class TestInvariants:
    def test_speaker_in_both_splits_rejected(self):
        recs = (
            SegmentRecord("d", "s1", "a", "dev"),
            SegmentRecord("d", "s1", "b", "test"),
        )
        with pytest.raises(ManifestError, match="both dev and test"):
            DatasetManifest("d", recs)

    def test_age_out_of_range_rejected(self):
        with pytest.raises(ManifestError, match="age"):
            SegmentRecord("d", "s", "x", "dev", age=150.0)
        with pytest.raises(ManifestError, match="age"):
            SegmentRecord("d", "s", "x", "dev", age=0.0)


class TestHarmonize:
    def test_single_manifest_count(self):
        m = make_records("l2", 6, 1, 0,
                         native_languages=["arabic", "hindi", "korean", "mandarin", "spanish", "vietnamese"])
        space = harmonize_labels([m], "native_language")
        assert space.num_classes == 6
        assert space.classes == tuple(sorted(space.classes))

    def test_canonical_merge_across_manifests(self):
        m1 = make_records("a", 2, 1, 0, native_languages=["Mandarin", "  spanish "])
        m2 = make_records("b", 3, 1, 0, native_languages=["mandarin", "hindi", "Tamil  X"])
        space = harmonize_labels([m1, m2], "native_language")
        # union after canonicalization: set-union oracle
        oracle = sorted({canonicalize_label(x) for x in
                         ["Mandarin", "  spanish ", "mandarin", "hindi", "Tamil  X"]})
        assert list(space.classes) == oracle
        assert space.num_classes == 4
        assert "tamil x" in space.classes

    def test_idempotent(self):
        m = make_records("a", 4, 1, 0, countries=["USA", "usa ", "France", "brazil"])
        space = harmonize_labels([m], "country")
        again = make_records("b", len(space.classes), 1, 0, countries=list(space.classes))
        assert harmonize_labels([again], "country") == space

    def test_absent_everywhere_errors(self):
        m = make_records("a", 2, 1, 0)
        with pytest.raises(ValueError, match="absent"):
            harmonize_labels([m], "education")

    def test_index_of(self):
        m = make_records("a", 2, 1, 0, genders=["male", "female"])
        space = harmonize_labels([m], "gender")
        assert space.classes == ("female", "male")
        assert space.index_of("Male  ") == 1


class TestSplitTrainVal:
    def test_exact_fraction(self):
        m = make_records("d", 10, 3, 0)
        train, val = split_train_val(m, 0.1, seed=5)
        train_speakers = {r.speaker_id for r in train}
        val_speakers = {r.speaker_id for r in val}
        assert len(val_speakers) == 1
        assert len(train_speakers) == 9
        assert not train_speakers & val_speakers

    def test_deterministic(self):
        m = make_records("d", 10, 3, 0)
        assert split_train_val(m, 0.3, seed=9) == split_train_val(m, 0.3, seed=9)

    def test_order_independent(self):
        m = make_records("d", 8, 2, 0)
        shuffled = DatasetManifest("d", tuple(reversed(m.records)))
        t1, v1 = split_train_val(m, 0.25, seed=1)
        t2, v2 = split_train_val(shuffled, 0.25, seed=1)
        assert {r.speaker_id for r in v1} == {r.speaker_id for r in v2}

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_l2arctic_sized(self, seed):
        m = make_records("l2", 19, 5, 0)
        train, val = split_train_val(m, 0.1, seed=seed)
        val_speakers = {r.speaker_id for r in val}
        assert len(val_speakers) in (1, 2)
        # all segments of a speaker are on one side
        sides = {}
        for r in train:
            sides.setdefault(r.speaker_id, set()).add("train")
        for r in val:
            sides.setdefault(r.speaker_id, set()).add("val")
        assert all(len(s) == 1 for s in sides.values())

    def test_too_few_speakers(self):
        m = make_records("d", 1, 2, 0)
        with pytest.raises(ValueError, match="2 dev speakers"):
            split_train_val(m, 0.5, seed=0)

    def test_operates_on_dev_only(self):
        m = make_records("d", 10, 2, 4)
        train, val = split_train_val(m, 0.2, seed=3)
        assert all(r.split == "dev" for r in train + val)
        assert len(train) + len(val) == len(m.split_records("dev"))


class TestAvailabilityMatrix:
    def test_table_pattern(self, five_manifests):
        matrix = availability_matrix(five_manifests)
        assert matrix.datasets_with("age") == ("saa", "timit", "voxceleb2")
        assert set(matrix.datasets_with("gender")) == {
            "saa", "timit", "voxceleb2", "l2arctic", "common_voice"
        }
        assert set(matrix.datasets_with("native_language")) == {"saa", "l2arctic"}
        assert set(matrix.datasets_with("country")) == {"saa", "common_voice"}
        assert matrix.datasets_with("education") == ("timit",)
        assert matrix.class_counts[("timit", "education")] == 5

    def test_all_false_row(self):
        m = make_records("bare", 3, 1, 1)
        matrix = availability_matrix([m])
        assert all(not matrix.has("bare", a) for a in ATTRIBUTES)

    def test_empty_input(self):
        with pytest.raises(ValueError):
            availability_matrix([])


class TestSummarize:
    def test_exact_counts_and_hours(self):
        m = make_records("d", 4, 2, 1, durations=[10.0, 20.0, 30.0, 40.0])
        stats = summarize(m)
        assert stats["dev"].speakers == 3
        assert stats["dev"].segments == 6
        assert stats["dev"].hours == pytest.approx((10 + 20 + 30) * 2 / 3600)
        assert stats["test"].segments == 2

    def test_missing_durations_degrade_to_unknown(self):
        m = make_records("d", 3, 1, 0)
        assert summarize(m)["dev"].hours is None

    def test_empty_manifest(self):
        m = DatasetManifest("d", ())
        stats = summarize(m)
        assert stats["dev"].speakers == 0 and stats["test"].segments == 0
        assert stats["dev"].hours == 0.0
