"""Dataset manifest records.

One JSONL line per sample, sorted by sample id so regenerating a dataset
reproduces the manifest byte for byte.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

from .patchqc import QCReport


class SampleClass(str, enum.Enum):
    LOW_TORT = "low_tort"
    HIGH_TORT = "high_tort"
    SKULL = "skull"
    BACKGROUND = "background"


@dataclass
class SampleManifestEntry:
    sample_id: str
    sample_class: SampleClass
    seed: int
    image_path: str   # relative to the manifest's directory
    label_path: str
    qc: QCReport
    params_hash: str

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "class": self.sample_class.value,
            "seed": self.seed,
            "image_path": self.image_path,
            "label_path": self.label_path,
            "qc": self.qc.to_dict(),
            "params_hash": self.params_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleManifestEntry":
        return cls(
            sample_id=d["sample_id"],
            sample_class=SampleClass(d["class"]),
            seed=int(d["seed"]),
            image_path=d["image_path"],
            label_path=d["label_path"],
            qc=QCReport.from_dict(d["qc"]),
            params_hash=d["params_hash"],
        )


def write_manifest(path: str | Path, entries: list[SampleManifestEntry]) -> None:
    """Write entries as JSONL sorted by sample id.

    Duplicate (sample_id, seed) pairs indicate a bookkeeping bug and are
    rejected.
    """
    entries = sorted(entries, key=lambda e: e.sample_id)
    seen = set()
    for e in entries:
        key = (e.sample_id, e.seed)
        if key in seen:
            raise ValueError(f"duplicate manifest entry {key}")
        seen.add(key)
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(json.dumps(e.to_dict(), sort_keys=True, separators=(",", ":")))
            f.write("\n")


def read_manifest(path: str | Path) -> list[SampleManifestEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                entries.append(SampleManifestEntry.from_dict(json.loads(line)))
    return entries
