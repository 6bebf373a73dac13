"""Whole-video evaluation of trained probes: same-dataset folds and cross-dataset transfer."""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from vjepa_fer.errors import ConfigError, ProtocolError, UsageError
from vjepa_fer.evalproto.metrics import ConfusionMatrix, uar, war
from vjepa_fer.evalproto.voting import VOTINGS, vote
from vjepa_fer.videodata import labels as L
from vjepa_fer.videodata.augment import AugmentConfig, extract_and_transform
from vjepa_fer.videodata.clips import ClipSpec, enumerate_clips
from vjepa_fer.videodata.manifest import VideoRecord
from vjepa_fer.videodata.rvt import load_video

# (encoder, probe, clips) -> per-clip probabilities; injectable so fixtures can stand in for models
ClipScorer = Callable[[np.ndarray], np.ndarray]


class HarmonizationMode(enum.Enum):
    DROP_ONLY = "drop"
    MERGE_CALM_NEUTRAL = "merge"

    @classmethod
    def parse(cls, value) -> "HarmonizationMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError as exc:
            raise ConfigError(f"unknown harmonization mode {value!r}; expected 'drop' or 'merge'") from exc


@dataclass
class FoldEval:
    confusion: ConfusionMatrix
    uar: float
    war: float
    dropped: int = 0
    predictions: dict[str, int] = field(default_factory=dict)


@dataclass
class MetricsReport:
    dataset: str
    voting: str
    classes: tuple[str, ...]
    folds: list[FoldEval]
    mode: str | None = None
    source_dataset: str | None = None

    @property
    def fold_uar(self) -> np.ndarray:
        return np.array([f.uar for f in self.folds])

    @property
    def fold_war(self) -> np.ndarray:
        return np.array([f.war for f in self.folds])

    @property
    def mean_uar(self) -> float:
        return float(np.mean(self.fold_uar))

    @property
    def mean_war(self) -> float:
        return float(np.mean(self.fold_war))

    @property
    def std_uar(self) -> float:
        return float(np.std(self.fold_uar))

    @property
    def std_war(self) -> float:
        return float(np.std(self.fold_war))

    @property
    def dropped(self) -> int:
        return sum(f.dropped for f in self.folds)

    def confusion_sum(self) -> ConfusionMatrix:
        total = ConfusionMatrix.zeros(self.classes)
        for f in self.folds:
            total = total + f.confusion
        return total

    def confusion_mean(self) -> np.ndarray:
        return self.confusion_sum().counts / len(self.folds)

    def to_dict(self) -> dict:
        out = {"dataset": self.dataset, "voting": self.voting}
        if self.mode is not None:
            out["mode"] = self.mode
        if self.source_dataset is not None:
            out["source_dataset"] = self.source_dataset
        out.update({
            "classes": list(self.classes),
            "folds": [{"uar": f.uar, "war": f.war, "dropped": f.dropped} for f in self.folds],
            "mean_uar": self.mean_uar,
            "mean_war": self.mean_war,
            "std_uar": self.std_uar,
            "std_war": self.std_war,
            "dropped": self.dropped,
        })
        return out


# ---------------------------------------------------------------------------
# Clip scoring
# ---------------------------------------------------------------------------


def video_clips(record: VideoRecord, aug: AugmentConfig, stride: int = 1, length: int = 16,
                skip: int = 4) -> np.ndarray:
    """Every clip of the (padded) video, eval-mode transformed: ``(n_clips, length, H, W, 3)``."""
    video = load_video(record.path)
    aug = aug.with_mode(False)
    starts = enumerate_clips(video.num_frames, length, skip, stride)
    return np.stack([extract_and_transform(video, ClipSpec(record.id, s, skip, length), aug) for s in starts])


def model_scorer(encoder, probe) -> ClipScorer:
    from vjepa_fer.probe import predict_clip_probs

    return lambda clips: predict_clip_probs(encoder, probe, clips)


def score_videos(records: Sequence[VideoRecord], scorer: ClipScorer, aug: AugmentConfig, stride: int = 1,
                 workers: int = 1, length: int = 16, skip: int = 4) -> dict[str, np.ndarray]:
    """Per-video clip probabilities, keyed by record id (results independent of ``workers``)."""
    def one(rec):
        return rec.id, scorer(video_clips(rec, aug, stride, length, skip))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            pairs = list(pool.map(one, records))
    else:
        pairs = [one(r) for r in records]
    return dict(pairs)


# ---------------------------------------------------------------------------
# Same-dataset evaluation
# ---------------------------------------------------------------------------


def confusion_from_votes(records: Sequence[VideoRecord], clip_probs: dict[str, np.ndarray],
                         labels: tuple[str, ...], voting: str) -> FoldEval:
    index = {n: i for i, n in enumerate(labels)}
    cm = ConfusionMatrix.zeros(labels)
    preds = {}
    # deterministic accumulation order: sorted video id
    for rec in sorted(records, key=lambda r: r.id):
        if rec.label not in index:
            raise ProtocolError(f"video {rec.id} label {rec.label!r} outside the probe label set")
        p = clip_probs[rec.id]
        if p.shape[1] != len(labels):
            raise ProtocolError(f"probe emits {p.shape[1]} classes, label set has {len(labels)}")
        pred = vote(p, voting).label_index
        preds[rec.id] = pred
        cm.add(index[rec.label], pred)
    return FoldEval(cm, uar(cm), war(cm), 0, preds)


def evaluate_fold(scorer: ClipScorer, records: Sequence[VideoRecord], labels: tuple[str, ...],
                  votings: Sequence[str] = VOTINGS, aug: AugmentConfig | None = None, stride: int = 1,
                  workers: int = 1) -> dict[str, FoldEval]:
    """Vote every validation video over all its clips; one :class:`FoldEval` per voting strategy."""
    if not records:
        raise ProtocolError("fold has no validation videos")
    for v in votings:
        if v not in VOTINGS:
            raise ConfigError(f"unknown voting strategy {v!r}")
    aug = aug or AugmentConfig()
    probs = score_videos(records, scorer, aug, stride, workers)
    return {v: confusion_from_votes(records, probs, labels, v) for v in votings}


# ---------------------------------------------------------------------------
# Cross-dataset harmonisation
# ---------------------------------------------------------------------------


def harmonize(source: str, target: str, mode: HarmonizationMode, true_label: str,
              pred_label: str) -> tuple[str, str] | None:
    """Map one (ground truth, voted prediction) pair onto the shared CREMA-D classes.

    Returns ``None`` when the video is dropped.
    """
    if source == L.RAVDESS and target == L.CREMAD:
        if pred_label == "surprise":
            return None
        if pred_label == "calm":
            if mode is HarmonizationMode.DROP_ONLY:
                return None
            pred_label = "neutral"
        return true_label, pred_label
    if source == L.CREMAD and target == L.RAVDESS:
        if true_label == "surprise":
            return None
        if true_label == "calm":
            if mode is HarmonizationMode.DROP_ONLY:
                return None
            true_label = "neutral"
        return true_label, pred_label
    raise UsageError(f"cross-dataset harmonisation is defined between RAVDESS and CREMAD, got {source}->{target}")


def harmonized_fold(records: Sequence[VideoRecord], clip_probs: dict[str, np.ndarray],
                    source_labels: tuple[str, ...], source: str, target: str,
                    mode: HarmonizationMode, voting: str) -> FoldEval:
    classes = L.CREMAD_LABELS
    index = {n: i for i, n in enumerate(classes)}
    cm = ConfusionMatrix.zeros(classes)
    dropped = 0
    preds = {}
    for rec in sorted(records, key=lambda r: r.id):
        p = clip_probs[rec.id]
        if p.shape[1] != len(source_labels):
            raise ProtocolError(f"probe emits {p.shape[1]} classes, source label set has {len(source_labels)}")
        pred = source_labels[vote(p, voting).label_index]
        pair = harmonize(source, target, mode, rec.label, pred)
        if pair is None:
            dropped += 1
            continue
        t, q = pair
        if t not in index or q not in index:
            raise ProtocolError(f"video {rec.id}: harmonised pair {pair} outside {classes}")
        cm.add(index[t], index[q])
        preds[rec.id] = index[q]
    if cm.total == 0:
        raise ProtocolError("every video was dropped by harmonisation")
    return FoldEval(cm, uar(cm), war(cm), dropped, preds)


def cross_evaluate(scorers: Sequence[ClipScorer], records: Sequence[VideoRecord], source: str,
                   mode, voting: str, aug: AugmentConfig | None = None, stride: int = 1,
                   workers: int = 1, length: int = 16, skip: int = 4) -> MetricsReport:
    """Evaluate every source-trained probe on the whole target manifest under ``mode``.

    Each probe contributes one fold entry; means are taken over probes.
    """
    targets = {r.dataset_tag for r in records}
    if len(targets) != 1:
        raise ProtocolError(f"target manifest mixes dataset tags {sorted(targets)}")
    target = targets.pop()
    if mode is not None and target == source:
        raise UsageError("a harmonisation mode only applies to cross-dataset evaluation")
    if target == source:
        raise UsageError("cross_evaluate needs different source and target datasets")
    mode = HarmonizationMode.parse(mode)
    if not scorers:
        raise ProtocolError("no source-trained probes given")
    source_labels = L.label_set(source)
    aug = aug or AugmentConfig()
    folds = []
    for scorer in scorers:
        probs = score_videos(records, scorer, aug, stride, workers, length, skip)
        folds.append(harmonized_fold(records, probs, source_labels, source, target, mode, voting))
    return MetricsReport(target, voting, L.CREMAD_LABELS, folds, mode=mode.value, source_dataset=source)
