"""Dataset manifest: ingest the label CSV and build patient-disjoint splits.

The CSV follows the ChestXray14 convention: a header row with columns
"Image Index", "Finding Labels" (pipe-separated, "No Finding" for
normals) and "Patient ID". Records whose image file is missing are kept
but flagged and never assigned to a split.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import CapacityError, ParseError

SPLITS = ("train", "test_normal", "test_abnormal", "unassigned")

NO_FINDING = "No Finding"

_REQUIRED_COLUMNS = ("Image Index", "Finding Labels", "Patient ID")


@dataclass(frozen=True)
class XrayRecord:
    image_id: str
    file_path: str
    patient_id: str
    labels: frozenset = frozenset()
    split: str = "unassigned"
    file_missing: bool = False

    @property
    def is_normal(self) -> bool:
        return not self.labels


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    seed: int | None = None
    missing_files: list = field(default_factory=list)

    @property
    def counts(self) -> dict:
        out = {s: 0 for s in SPLITS}
        for r in self.records:
            out[r.split] += 1
        return out

    def by_split(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def patient_ids(self, split: str) -> set:
        return {r.patient_id for r in self.records if r.split == split}

    def check_invariants(self) -> None:
        """Train records are label-free and no patient straddles train/test."""
        for r in self.by_split("train"):
            if r.labels:
                raise AssertionError(f"train record {r.image_id} carries labels {set(r.labels)}")
        train = self.patient_ids("train")
        test = self.patient_ids("test_normal") | self.patient_ids("test_abnormal")
        overlap = train & test
        if overlap:
            raise AssertionError(f"patients in both train and test: {sorted(overlap)[:5]}")

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "seed": self.seed,
            "missing_files": self.missing_files,
            "records": [
                {
                    "image_id": r.image_id,
                    "file_path": r.file_path,
                    "patient_id": r.patient_id,
                    "labels": sorted(r.labels),
                    "split": r.split,
                    "file_missing": r.file_missing,
                }
                for r in self.records
            ],
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True))
        return path

    @classmethod
    def from_json(cls, path) -> "DatasetManifest":
        payload = json.loads(Path(path).read_text())
        records = [
            XrayRecord(
                image_id=r["image_id"],
                file_path=r["file_path"],
                patient_id=r["patient_id"],
                labels=frozenset(r["labels"]),
                split=r["split"],
                file_missing=r["file_missing"],
            )
            for r in payload["records"]
        ]
        return cls(records=records, seed=payload["seed"], missing_files=payload["missing_files"])


def _parse_labels(raw: str) -> frozenset:
    parts = [p.strip() for p in raw.split("|")]
    labels = {p for p in parts if p and p != NO_FINDING}
    return frozenset(labels)


def ingest_manifest(label_csv, image_dir) -> DatasetManifest:
    """One XrayRecord per CSV row, labels parsed, all splits unassigned.

    Rows referencing missing image files are flagged and listed in
    manifest.missing_files rather than dropped.
    """
    label_csv = Path(label_csv)
    image_dir = Path(image_dir)
    records = []
    seen = {}
    missing = []
    with open(label_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("empty CSV, no header row")
        fields = [f.strip() for f in reader.fieldnames]
        for col in _REQUIRED_COLUMNS:
            if col not in fields:
                raise ParseError(f"missing required column {col!r} (have {fields})")
        for row in reader:
            line = reader.line_num
            row = {(k or "").strip(): (v or "").strip() for k, v in row.items() if k is not None}
            name = row.get("Image Index", "")
            patient = row.get("Patient ID", "")
            if not name:
                raise ParseError("empty Image Index", line=line)
            if not patient:
                raise ParseError(f"empty Patient ID for image {name!r}", line=line)
            image_id = Path(name).stem
            if image_id in seen:
                raise ParseError(
                    f"duplicate image id {image_id!r} (first seen on line {seen[image_id]})",
                    line=line,
                )
            seen[image_id] = line
            file_path = image_dir / name
            file_missing = not file_path.is_file()
            if file_missing:
                missing.append(image_id)
            records.append(
                XrayRecord(
                    image_id=image_id,
                    file_path=str(file_path),
                    patient_id=patient,
                    labels=_parse_labels(row.get("Finding Labels", "")),
                    file_missing=file_missing,
                )
            )
    return DatasetManifest(records=records, missing_files=missing)


def make_splits(
    manifest: DatasetManifest,
    seed: int,
    n_train: int,
    n_test_normal: int,
    n_test_abnormal: int,
) -> DatasetManifest:
    """Assign splits so that train and test share no patient.

    Patients are visited in a seeded random order; test quotas are
    filled first (taking at most the needed number of images from each
    patient), then train collects normal images from the remaining
    patients. Images of a test patient beyond the quota stay unassigned,
    as do abnormal images of train patients.
    """
    eligible = [r for r in manifest.records if not r.file_missing]
    total_normal = sum(1 for r in eligible if r.is_normal)
    total_abnormal = len(eligible) - total_normal
    if n_test_abnormal > total_abnormal:
        raise CapacityError(
            f"requested {n_test_abnormal} abnormal test images but only "
            f"{total_abnormal} abnormal records exist"
        )
    if n_test_normal + n_train > total_normal:
        raise CapacityError(
            f"requested {n_train} train + {n_test_normal} normal test images but only "
            f"{total_normal} normal records exist"
        )

    by_patient = {}
    for r in eligible:
        by_patient.setdefault(r.patient_id, []).append(r)
    patients = sorted(by_patient)
    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]

    assignment = {}
    need_normal, need_abnormal = n_test_normal, n_test_abnormal
    train_pool = []
    for pid in order:
        recs = by_patient[pid]
        has_needed = (need_normal > 0 and any(r.is_normal for r in recs)) or (
            need_abnormal > 0 and any(not r.is_normal for r in recs)
        )
        if has_needed:
            for r in recs:
                if r.is_normal and need_normal > 0:
                    assignment[r.image_id] = "test_normal"
                    need_normal -= 1
                elif not r.is_normal and need_abnormal > 0:
                    assignment[r.image_id] = "test_abnormal"
                    need_abnormal -= 1
        else:
            train_pool.append(pid)
    if need_normal > 0 or need_abnormal > 0:
        raise CapacityError(
            f"could not fill test quotas: short {need_normal} normal and "
            f"{need_abnormal} abnormal images after visiting all patients"
        )

    need_train = n_train
    for pid in train_pool:
        if need_train <= 0:
            break
        for r in by_patient[pid]:
            if r.is_normal and need_train > 0:
                assignment[r.image_id] = "train"
                need_train -= 1
    if need_train > 0:
        raise CapacityError(
            f"could not fill train quota: short {need_train} normal images once "
            f"test patients were excluded (achievable maximum "
            f"{n_train - need_train})"
        )

    new_records = [
        replace(r, split=assignment.get(r.image_id, "unassigned")) for r in manifest.records
    ]
    out = DatasetManifest(
        records=new_records, seed=seed, missing_files=list(manifest.missing_files)
    )
    out.check_invariants()
    return out
