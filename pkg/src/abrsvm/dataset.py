"""Sample manifest loading and deterministic stratified k-fold assignment.

The manifest CSV is the single source of truth for labels; images are
never scanned to infer anything. Within-class shuffles are driven by
numpy's PCG64 generator so identical (manifest, k, seed) always reproduce
identical folds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

MANIFEST_HEADER = ["sample_id", "image_path", "label", "ear", "patient_id"]


class ManifestError(ValueError):
    """Raised when a sample manifest fails validation."""


class Label(Enum):
    NORMAL = "normal"
    ABNORMAL = "abnormal"


class Ear(Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    image_path: str
    label: Label
    ear: Ear
    patient_id: str


@dataclass(frozen=True)
class DatasetManifest:
    samples: tuple[SampleRecord, ...]
    counts: dict[Label, int] = field(default_factory=dict)

    def __post_init__(self):
        counts = {Label.NORMAL: 0, Label.ABNORMAL: 0}
        for s in self.samples:
            counts[s.label] += 1
        if self.counts:
            if dict(self.counts) != counts:
                raise ManifestError("counts do not match sample sequence")
        else:
            object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: dict[str, int]
    seed: int

    def test_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.fold_of.items() if f == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.fold_of.items() if f != fold]


def _parse_label(raw: str, line: int) -> Label:
    try:
        return Label(raw.strip().lower())
    except ValueError:
        raise ManifestError(f"line {line}: unknown label {raw!r} (expected normal/abnormal)")


def _parse_ear(raw: str, line: int) -> Ear:
    try:
        return Ear(raw.strip().lower())
    except ValueError:
        raise ManifestError(f"line {line}: unknown ear {raw!r} (expected left/right)")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a sample manifest CSV.

    Expected header: ``sample_id,image_path,label,ear,patient_id``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    samples: list[SampleRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: no samples (empty file)")
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestError(
                f"{path}: bad header {header!r}, expected {','.join(MANIFEST_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"{path}: line {lineno}: expected 5 fields, got {len(row)}")
            sample_id, image_path, label, ear, patient_id = (f.strip() for f in row)
            if not sample_id:
                raise ManifestError(f"{path}: line {lineno}: empty sample_id")
            if sample_id in seen:
                raise ManifestError(f"{path}: duplicate sample_id {sample_id!r}")
            if not image_path:
                raise ManifestError(f"{path}: line {lineno}: empty image_path")
            seen.add(sample_id)
            samples.append(
                SampleRecord(
                    sample_id=sample_id,
                    image_path=image_path,
                    label=_parse_label(label, lineno),
                    ear=_parse_ear(ear, lineno),
                    patient_id=patient_id,
                )
            )
    if not samples:
        raise ManifestError(f"{path}: no samples")
    return DatasetManifest(samples=tuple(samples))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for s in manifest.samples:
            writer.writerow([s.sample_id, s.image_path, s.label.value, s.ear.value, s.patient_id])


def stratified_fold_indices(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold index in [0, k) per row of ``y``.

    Each class is shuffled independently (PCG64 seeded by ``seed``) and
    dealt round-robin, so per-fold class counts differ from n_class/k by
    at most 1.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    y = np.asarray(y)
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = np.full(len(y), -1, dtype=np.int64)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            raise ValueError(
                f"class {cls!r} has {len(idx)} samples, fewer than k={k}"
            )
        rng.shuffle(idx)
        folds[idx] = np.arange(len(idx)) % k
    return folds


def stratified_kfold(
    manifest: DatasetManifest,
    k: int,
    seed: int,
    group_by_patient: bool = False,
) -> FoldAssignment:
    """Assign every sample to one of k folds, stratified by label.

    With ``group_by_patient`` all samples of a patient land in the same
    fold (stratified by the patient's first-listed label); the +/-1
    per-fold class balance is only guaranteed for the ungrouped default.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    for label, count in manifest.counts.items():
        if count < k:
            raise ValueError(f"class {label.value!r} has {count} samples, fewer than k={k}")
    if not group_by_patient:
        labels = np.array([s.label.value for s in manifest.samples])
        folds = stratified_fold_indices(labels, k, seed)
        fold_of = {s.sample_id: int(f) for s, f in zip(manifest.samples, folds)}
        return FoldAssignment(k=k, fold_of=fold_of, seed=seed)

    groups: dict[str, list[SampleRecord]] = {}
    for s in manifest.samples:
        groups.setdefault(s.patient_id or s.sample_id, []).append(s)
    gids = list(groups)
    glabels = np.array([groups[g][0].label.value for g in gids])
    for cls in np.unique(glabels):
        if int((glabels == cls).sum()) < k:
            raise ValueError(f"class {cls!r} has fewer than k={k} patient groups")
    gfolds = stratified_fold_indices(glabels, k, seed)
    fold_of = {}
    for gid, f in zip(gids, gfolds):
        for s in groups[gid]:
            fold_of[s.sample_id] = int(f)
    return FoldAssignment(k=k, fold_of=fold_of, seed=seed)
