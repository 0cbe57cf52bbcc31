"""Dataset manifests, cross-dataset deduplication and patient-level splits."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateImageId, SchemaError, TooFewPatients
from .scores import Label

MANIFEST_COLUMNS = ("image_id", "patient_id", "source", "label")


class Source(str, Enum):
    AMIBR = "AMiBr"
    MIDOG25 = "MIDOG25"
    OCTOPATH = "Octopath"


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    patient_id: str
    source: Source
    label: Label

    def __post_init__(self):
        if not self.image_id or not self.patient_id:
            raise ValueError("image_id and patient_id must be nonempty")


@dataclass(frozen=True)
class SplitAssignment:
    train: frozenset[str]
    test: frozenset[str]

    def split_of(self, patient_id: str) -> str:
        return "test" if patient_id in self.test else "train"


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a manifest CSV (``image_id,patient_id,source,label``).

    Raises:
        SchemaError: wrong header, unknown source or label, empty id.
        DuplicateImageId: an image id repeats within one source.
    """
    entries = []
    seen: set[tuple[Source, str]] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise SchemaError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                entry = ManifestEntry(
                    row["image_id"].strip(),
                    row["patient_id"].strip(),
                    Source(row["source"].strip()),
                    Label.parse(row["label"]),
                )
            except (ValueError, AttributeError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            key = (entry.source, entry.image_id)
            if key in seen:
                raise DuplicateImageId(f"{path}:{lineno}: {entry.image_id} repeated in {entry.source.value}")
            seen.add(key)
            entries.append(entry)
    return entries


def write_manifest(path: str | Path, entries: Iterable[ManifestEntry]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for e in entries:
            w.writerow([e.image_id, e.patient_id, e.source.value, e.label.value])


def dedup_overlap(entries: Sequence[ManifestEntry]) -> list[ManifestEntry]:
    """Drop MIDOG25 images that also appear in AMi-Br, keeping input order."""
    amibr = {e.image_id for e in entries if e.source is Source.AMIBR}
    return [e for e in entries if not (e.source is Source.MIDOG25 and e.image_id in amibr)]


def stratified_split(entries: Sequence[ManifestEntry], test_fraction: float = 0.2,
                     seed: int = 0) -> SplitAssignment:
    """Patient-level train/test split targeting a tile fraction.

    Patients are shuffled by a seeded generator and moved to the test side
    one by one until the test tile count first reaches
    ``test_fraction * total``.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    tiles = Counter(e.patient_id for e in entries)
    if len(tiles) < 2:
        raise TooFewPatients(f"need at least 2 patients, got {len(tiles)}")
    patients = sorted(tiles)
    order = np.random.default_rng(seed).permutation(len(patients))
    target = test_fraction * sum(tiles.values())
    test, taken = set(), 0
    for i in order:
        if taken >= target:
            break
        test.add(patients[i])
        taken += tiles[patients[i]]
    if len(test) == len(patients):
        # Keep at least one training patient.
        test.discard(patients[order[-1]])
    return SplitAssignment(frozenset(set(patients) - test), frozenset(test))


def write_split(path: str | Path, split: SplitAssignment) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "split"])
        for pid in sorted(split.train | split.test):
            w.writerow([pid, split.split_of(pid)])
