"""Subject-independent k-fold plans."""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from vjepa_fer.autodiff.checkpoint import atomic_write_bytes
from vjepa_fer.errors import ConfigError, FormatError, ProtocolError
from vjepa_fer.videodata import labels as L
from vjepa_fer.videodata.manifest import VideoRecord

# CREMA-D validation subjects per split, short form (official IDs are 1000 + n).
CREMAD_TABLE = (
    (2, 3, 8, 10, 14, 16, 22, 32, 51, 54, 60, 66, 68, 70, 72, 77, 78, 86, 88),
    (4, 11, 12, 13, 19, 30, 33, 35, 39, 40, 48, 49, 53, 57, 67, 71, 73, 81),
    (5, 6, 17, 26, 28, 34, 42, 44, 50, 59, 64, 69, 82, 83, 84, 87, 90, 91),
    (7, 9, 15, 21, 23, 29, 36, 37, 38, 41, 45, 52, 55, 58, 61, 62, 74, 76),
    (1, 18, 20, 24, 25, 27, 31, 43, 46, 47, 56, 63, 65, 75, 79, 80, 85, 89),
)


@dataclass
class FoldPlan:
    k: int
    folds: list[list[str]]
    source: str

    def fold_of(self, subject: str) -> int:
        for i, f in enumerate(self.folds):
            if subject in f:
                return i
        raise ProtocolError(f"subject {subject!r} is in no fold")

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "source": self.source, "folds": self.folds}, indent=2)

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_bytes(path, (self.to_json() + "\n").encode())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FoldPlan":
        try:
            obj = json.loads(open(path).read())
            plan = cls(int(obj["k"]), [[str(s) for s in f] for f in obj["folds"]], str(obj.get("source", "file")))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid fold plan {path}: {exc}") from exc
        if len(plan.folds) != plan.k:
            raise FormatError(f"fold plan {path} declares k={plan.k} but lists {len(plan.folds)} folds")
        return plan


def cremad_table_plan() -> FoldPlan:
    return FoldPlan(5, [[str(1000 + n) for n in split] for split in CREMAD_TABLE], "table")


def make_folds(records: list[VideoRecord], k: int = 5, source: str = "generated", seed: int = 0) -> FoldPlan:
    """``source='table'`` returns the built-in CREMA-D plan; ``'generated'`` shuffles subjects
    with ``seed`` and deals them round-robin, so fold sizes differ by at most one."""
    if any(not r.subject_id for r in records):
        raise ProtocolError("every record needs a subject_id")
    if source == "table":
        tags = {r.dataset_tag for r in records}
        if tags != {L.CREMAD}:
            raise ProtocolError(f"the built-in table plan is for CREMA-D manifests only, got {sorted(tags)}")
        if k != 5:
            raise ConfigError("the built-in table plan has exactly 5 folds")
        return cremad_table_plan()
    if source != "generated":
        raise ConfigError(f"unknown fold source {source!r}")
    subjects = sorted({r.subject_id for r in records})
    if len(subjects) < k:
        raise ConfigError(f"{len(subjects)} subjects cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(subjects))
    folds = [sorted(subjects[j] for j in order[i::k]) for i in range(k)]
    return FoldPlan(k, folds, f"generated({seed})")


@dataclass
class FoldReport:
    ok: bool
    subjects_per_fold: list[int]
    videos_per_fold: list[int]
    duplicated: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [f"fold {i}: {s} subjects, {v} videos"
               for i, (s, v) in enumerate(zip(self.subjects_per_fold, self.videos_per_fold))]
        if self.duplicated:
            out.append(f"subjects in more than one fold: {', '.join(self.duplicated)}")
        if self.missing:
            out.append(f"subjects in no fold: {', '.join(self.missing)}")
        out.append("PASS" if self.ok else "FAIL")
        return out


class FoldError(ProtocolError):
    def __init__(self, report: FoldReport):
        parts = []
        if report.duplicated:
            parts.append(f"duplicated subjects {report.duplicated}")
        if report.missing:
            parts.append(f"uncovered subjects {report.missing}")
        super().__init__("fold plan violates subject independence: " + "; ".join(parts))
        self.report = report


def verify_folds(plan: FoldPlan, records: list[VideoRecord]) -> FoldReport:
    """Check disjointness and coverage of ``plan`` against ``records``; raises :class:`FoldError`."""
    counts = Counter(s for f in plan.folds for s in f)
    duplicated = sorted(s for s, c in counts.items() if c > 1)
    manifest_subjects = {r.subject_id for r in records}
    missing = sorted(manifest_subjects - set(counts))
    videos = Counter()
    for r in records:
        for i, f in enumerate(plan.folds):
            if r.subject_id in f:
                videos[i] += 1
    report = FoldReport(
        ok=not duplicated and not missing,
        subjects_per_fold=[len(f) for f in plan.folds],
        videos_per_fold=[videos[i] for i in range(len(plan.folds))],
        duplicated=duplicated,
        missing=missing,
    )
    if not report.ok:
        raise FoldError(report)
    return report


def split_records(records: list[VideoRecord], plan: FoldPlan,
                  fold_index: int) -> tuple[list[VideoRecord], list[VideoRecord]]:
    """(train, validation) records for one fold."""
    if not 0 <= fold_index < plan.k:
        raise ConfigError(f"fold index {fold_index} outside [0, {plan.k})")
    held = set(plan.folds[fold_index])
    train = [r for r in records if r.subject_id not in held]
    val = [r for r in records if r.subject_id in held]
    return train, val
