"""Synthetic motion-coded expression dataset.

Each class is a bright blob drifting in a class-specific direction while its
radius pulses at a class-specific frequency, so the label lives in the motion
rather than in any single frame.  Subjects differ by background level, colour
tint, a fixed texture and the blob's starting offset; every video adds its own
pixel noise.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from vjepa_fer.errors import ConfigError
from vjepa_fer.videodata import labels as L
from vjepa_fer.videodata.manifest import VideoRecord, write_manifest
from vjepa_fer.videodata.rvt import VideoTensor, store_video


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 3
    num_subjects: int = 10
    videos_per_subject_class: int = 2
    min_frames: int = 40
    max_frames: int = 96
    size: int = 64
    seed: int = 0
    dataset: str = L.SYNTH
    k_folds: int = 5

    def labels(self) -> tuple[str, ...]:
        if self.dataset == L.SYNTH:
            return L.synth_labels(self.num_classes)
        return L.label_set(self.dataset)

    def subject_ids(self) -> list[str]:
        if self.dataset == L.CREMAD:
            return [str(1001 + i) for i in range(self.num_subjects)]
        if self.dataset == L.RAVDESS:
            return [f"{i + 1:02d}" for i in range(self.num_subjects)]
        return [f"S{i + 1:02d}" for i in range(self.num_subjects)]

    def validate(self) -> None:
        if len(self.labels()) < 2:
            raise ConfigError("synthetic data needs at least 2 classes")
        if self.num_subjects < self.k_folds:
            raise ConfigError(f"need at least {self.k_folds} subjects for {self.k_folds} folds, got {self.num_subjects}")
        if self.videos_per_subject_class < 1 or not 1 <= self.min_frames <= self.max_frames or self.size < 8:
            raise ConfigError(f"invalid synthetic config {self}")


def _subject_style(rng: np.random.Generator, size: int) -> dict:
    coarse = rng.standard_normal((4, 4))
    yy = np.linspace(0, 3, size)
    iy = np.clip(yy.astype(int), 0, 2)
    fy = yy - iy
    # bilinear upsample of a 4×4 field: smooth per-subject texture
    rows = coarse[iy] * (1 - fy)[:, None] + coarse[iy + 1] * fy[:, None]
    tex = rows[:, iy] * (1 - fy)[None, :] + rows[:, iy + 1] * fy[None, :]
    return {
        "background": rng.uniform(40.0, 90.0),
        "tint": rng.uniform(0.8, 1.2, size=3),
        "texture": 12.0 * tex,
        "offset": rng.uniform(-4.0, 4.0, size=2),
    }


def render_video(label_index: int, num_classes: int, style: dict, frames: int, size: int,
                 rng: np.random.Generator) -> VideoTensor:
    angle = 2.0 * np.pi * label_index / num_classes
    direction = np.array([np.sin(angle), np.cos(angle)])
    freq = 0.04 * (1 + label_index)
    t = np.arange(frames, dtype=np.float64)
    travel = 0.3 * size * np.minimum(1.0, t / 60.0)
    centre = size / 2 + style["offset"][None, :] + travel[:, None] * direction[None, :]
    radius = 0.09 * size * (1.0 + 0.35 * np.sin(2.0 * np.pi * freq * t + rng.uniform(0, 0.5)))
    grid = np.arange(size, dtype=np.float64)
    dy = grid[None, :, None] - centre[:, 0, None, None]
    dx = grid[None, None, :] - centre[:, 1, None, None]
    blob = 150.0 * np.exp(-(dy * dy + dx * dx) / (2.0 * radius[:, None, None] ** 2))
    base = style["background"] + style["texture"][None] + blob
    img = base[..., None] * style["tint"][None, None, None, :]
    img = img + rng.normal(0.0, 6.0, size=img.shape)
    return VideoTensor(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def gen_synthetic(out_dir: str | os.PathLike, cfg: SynthConfig) -> tuple[Path, list[VideoRecord]]:
    """Render the dataset into ``out_dir`` (which must exist); returns the manifest path and rows."""
    cfg.validate()
    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    labels = cfg.labels()
    k = len(labels)
    vid_dir = out / "videos"
    vid_dir.mkdir(exist_ok=True)
    root = np.random.SeedSequence(cfg.seed)
    subj_seqs = root.spawn(cfg.num_subjects)
    records: list[VideoRecord] = []
    for subj, sseq in zip(cfg.subject_ids(), subj_seqs):
        style_seq, *video_seqs = sseq.spawn(1 + k * cfg.videos_per_subject_class)
        style = _subject_style(np.random.default_rng(style_seq), cfg.size)
        n = 0
        for ci, label in enumerate(labels):
            for rep in range(cfg.videos_per_subject_class):
                vrng = np.random.default_rng(video_seqs[n])
                n += 1
                frames = int(vrng.integers(cfg.min_frames, cfg.max_frames + 1))
                video = render_video(ci, k, style, frames, cfg.size, vrng)
                vid = f"{subj}_{label}_{rep}"
                rel = f"videos/{vid}.rvt"
                store_video(out / rel, video)
                records.append(VideoRecord(vid, rel, subj, label, cfg.dataset, frames))
    manifest = out / "manifest.csv"
    write_manifest(manifest, records)
    return manifest, [replace(r, path=str(out / r.path)) for r in records]
