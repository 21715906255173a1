"""Manifest JSONL roundtrip and ordering guarantees."""

import json

import pytest

from vesselgen.manifest import (
    SampleClass,
    SampleManifestEntry,
    read_manifest,
    write_manifest,
)
from vesselgen.patchqc import QCReport


def _entry(sample_id, seed=7, cls=SampleClass.LOW_TORT):
    return SampleManifestEntry(
        sample_id=sample_id,
        sample_class=cls,
        seed=seed,
        image_path=f"train/{sample_id}_img.nii.gz",
        label_path=f"train/{sample_id}_lbl.nii.gz",
        qc=QCReport(0.12, 1, 0, True, True),
        params_hash="deadbeef",
    )


def test_roundtrip(tmp_path):
    path = tmp_path / "manifest.jsonl"
    entries = [_entry("b_0002"), _entry("a_0001", cls=SampleClass.SKULL)]
    write_manifest(path, entries)
    back = read_manifest(path)
    assert back == sorted(entries, key=lambda e: e.sample_id)
    assert back[0].sample_class is SampleClass.SKULL
    assert back[1].qc == QCReport(0.12, 1, 0, True, True)


def test_output_sorted_and_compact(tmp_path):
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, [_entry("z"), _entry("m"), _entry("a")])
    lines = path.read_text().splitlines()
    ids = [json.loads(ln)["sample_id"] for ln in lines]
    assert ids == ["a", "m", "z"]
    assert ": " not in lines[0] and ", " not in lines[0]


def test_class_serialized_under_class_key(tmp_path):
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, [_entry("a", cls=SampleClass.BACKGROUND)])
    record = json.loads(path.read_text())
    assert record["class"] == "background"
    assert "sample_class" not in record


def test_duplicate_id_seed_rejected(tmp_path):
    path = tmp_path / "manifest.jsonl"
    with pytest.raises(ValueError, match="duplicate"):
        write_manifest(path, [_entry("a", seed=1), _entry("a", seed=1)])


def test_same_id_different_seed_allowed(tmp_path):
    # the id carries the tree index, the seed the derived stream; both
    # must agree for a record to count as a duplicate
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, [_entry("a", seed=1), _entry("a", seed=2)])
    assert len(read_manifest(path)) == 2


def test_read_skips_blank_lines(tmp_path):
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, [_entry("a"), _entry("b")])
    path.write_text(path.read_text() + "\n\n")
    assert [e.sample_id for e in read_manifest(path)] == ["a", "b"]


def test_deterministic_bytes(tmp_path):
    p1 = tmp_path / "m1.jsonl"
    p2 = tmp_path / "m2.jsonl"
    write_manifest(p1, [_entry("a"), _entry("b")])
    write_manifest(p2, [_entry("b"), _entry("a")])
    assert p1.read_bytes() == p2.read_bytes()
