"""Whole-video decisions from per-clip class probabilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vjepa_fer.errors import ConfigError, ProtocolError

VOTINGS = ("mv", "pbv")


@dataclass
class VideoPrediction:
    label_index: int
    evidence: np.ndarray  # vote counts (MV) or summed probabilities (PBV)


def _as_matrix(clip_probs) -> np.ndarray:
    p = np.asarray(clip_probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ProtocolError("voting needs at least one clip prediction")
    return p


def vote_mv(clip_probs) -> VideoPrediction:
    """Every clip votes for its argmax; most votes wins, ties to the lowest class index."""
    p = _as_matrix(clip_probs)
    votes = np.bincount(p.argmax(axis=1), minlength=p.shape[1]).astype(np.float64)
    return VideoPrediction(int(votes.argmax()), votes)


def vote_pbv(clip_probs) -> VideoPrediction:
    """Sum clip probabilities, then argmax (ties to the lowest class index)."""
    p = _as_matrix(clip_probs)
    sums = p.sum(axis=0)
    return VideoPrediction(int(sums.argmax()), sums)


def vote(clip_probs, voting: str) -> VideoPrediction:
    if voting == "mv":
        return vote_mv(clip_probs)
    if voting == "pbv":
        return vote_pbv(clip_probs)
    raise ConfigError(f"unknown voting strategy {voting!r}; expected one of {VOTINGS}")
