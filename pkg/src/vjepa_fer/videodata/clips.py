"""Clip geometry: last-frame padding, clip enumeration and training-clip sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vjepa_fer.errors import ConfigError, ProtocolError
from vjepa_fer.videodata.rvt import VideoTensor

CLIP_LENGTH = 16
FRAME_SKIP = 4


@dataclass(frozen=True)
class ClipSpec:
    record_id: str
    start_frame: int
    skip: int = FRAME_SKIP
    length: int = CLIP_LENGTH

    @property
    def span(self) -> int:
        return clip_span(self.length, self.skip)

    def frame_indices(self) -> np.ndarray:
        return self.start_frame + self.skip * np.arange(self.length)

    def validate(self, padded_duration: int) -> None:
        if self.start_frame < 0 or self.start_frame + self.skip * (self.length - 1) >= padded_duration:
            raise ProtocolError(
                f"clip start {self.start_frame} (skip {self.skip}, length {self.length}) "
                f"does not fit in {padded_duration} frames")


def clip_span(length: int = CLIP_LENGTH, skip: int = FRAME_SKIP) -> int:
    """Frames covered by one clip, first through last sampled frame inclusive."""
    return skip * (length - 1) + 1


def padded_duration(duration: int, length: int = CLIP_LENGTH, skip: int = FRAME_SKIP) -> int:
    return max(int(duration), clip_span(length, skip))


def pad_video(v: VideoTensor, min_frames: int) -> VideoTensor:
    """Repeat the last frame until the video has at least ``min_frames`` frames."""
    t = v.num_frames
    if t >= min_frames:
        return v
    tail = np.repeat(v.frames[-1:], min_frames - t, axis=0)
    return VideoTensor(np.concatenate([v.frames, tail], axis=0), v.frame_rate)


def enumerate_clips(duration: int, length: int = CLIP_LENGTH, skip: int = FRAME_SKIP,
                    stride: int = 1) -> list[int]:
    """Every clip start of a (padded) video, ``stride`` frames apart."""
    if stride < 1:
        raise ConfigError(f"clip stride must be ≥ 1, got {stride}")
    d = padded_duration(duration, length, skip)
    return list(range(0, d - clip_span(length, skip) + 1, stride))


def sample_training_clips(duration: int, n: int = 8, rng: np.random.Generator | None = None,
                          length: int = CLIP_LENGTH, skip: int = FRAME_SKIP) -> list[int]:
    """Draw ``n`` clip starts uniformly; distinct when enough starts exist."""
    if n <= 0:
        raise ConfigError(f"number of clips must be positive, got {n}")
    if rng is None:
        raise ConfigError("sample_training_clips needs an explicit RNG")
    valid = enumerate_clips(duration, length, skip)
    picks = rng.choice(len(valid), size=n, replace=len(valid) < n)
    return [valid[i] for i in picks]
