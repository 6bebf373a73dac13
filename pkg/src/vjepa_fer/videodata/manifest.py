"""Manifest CSV: one row per video (id, path, subject_id, label, dataset, duration_frames)."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path

from vjepa_fer.autodiff.checkpoint import atomic_write_bytes
from vjepa_fer.errors import FormatError, ProtocolError
from vjepa_fer.videodata import labels as L
from vjepa_fer.videodata.rvt import read_header

COLUMNS = ("id", "path", "subject_id", "label", "dataset", "duration_frames")


@dataclass(frozen=True)
class VideoRecord:
    id: str
    path: str
    subject_id: str
    label: str
    dataset_tag: str
    duration_frames: int


def write_manifest(path: str | os.PathLike, records: list[VideoRecord]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow((r.id, r.path, r.subject_id, r.label, r.dataset_tag, r.duration_frames))
    atomic_write_bytes(path, buf.getvalue().encode())


def read_manifest(path: str | os.PathLike, check_files: bool = False) -> list[VideoRecord]:
    """Parse a manifest; relative video paths resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != COLUMNS:
            raise FormatError(f"manifest {path} must have columns {','.join(COLUMNS)}")
        records = []
        for row in reader:
            vpath = row["path"]
            if not os.path.isabs(vpath):
                vpath = str(base / vpath)
            rec = VideoRecord(row["id"], vpath, row["subject_id"], row["label"], row["dataset"],
                              int(row["duration_frames"]))
            records.append(rec)
    validate_records(records, check_files)
    return records


def validate_records(records: list[VideoRecord], check_files: bool = False) -> None:
    synth_labels = {r.label for r in records if r.dataset_tag == L.SYNTH}
    for r in records:
        if r.dataset_tag not in L.DATASET_TAGS:
            raise ProtocolError(f"record {r.id}: unknown dataset tag {r.dataset_tag!r}")
        allowed = synth_labels if r.dataset_tag == L.SYNTH else L.label_set(r.dataset_tag)
        if r.label not in allowed:
            raise ProtocolError(f"record {r.id}: label {r.label!r} not in the {r.dataset_tag} label set")
        if not r.subject_id:
            raise ProtocolError(f"record {r.id}: empty subject_id")
        if check_files:
            t = read_header(r.path)[0]
            if t != r.duration_frames:
                raise ProtocolError(f"record {r.id}: manifest says {r.duration_frames} frames, file has {t}")


def dataset_labels(records: list[VideoRecord]) -> tuple[str, ...]:
    """The canonical label set for a manifest (all rows must share one dataset tag)."""
    tags = {r.dataset_tag for r in records}
    if len(tags) != 1:
        raise ProtocolError(f"manifest mixes dataset tags {sorted(tags)}")
    tag = tags.pop()
    if tag == L.SYNTH:
        return tuple(sorted({r.label for r in records}, key=_synth_key))
    return L.label_set(tag)


def _synth_key(name: str):
    digits = name[len("class"):] if name.startswith("class") else ""
    return (0, int(digits), name) if digits.isdigit() else (1, 0, name)
