"""Clip extraction with random-resized-crop / center-crop, bilinear resize and normalisation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from vjepa_fer.errors import ConfigError
from vjepa_fer.videodata.clips import ClipSpec, padded_duration, pad_video
from vjepa_fer.videodata.rvt import VideoTensor

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class AugmentConfig:
    target_size: tuple[int, int] = (224, 224)
    crop_scale_range: tuple[float, float] = (0.3, 1.0)
    channel_mean: tuple[float, float, float] = IMAGENET_MEAN
    channel_std: tuple[float, float, float] = IMAGENET_STD
    train_mode: bool = False
    aspect_range: tuple[float, float] = (3 / 4, 4 / 3)

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"crop_scale_range must satisfy 0 < min ≤ max ≤ 1, got {self.crop_scale_range}")
        if any(s <= 0 for s in self.channel_std):
            raise ConfigError(f"channel_std must be positive, got {self.channel_std}")
        if min(self.target_size) < 1:
            raise ConfigError(f"target_size must be positive, got {self.target_size}")

    def with_mode(self, train: bool) -> "AugmentConfig":
        return AugmentConfig(self.target_size, self.crop_scale_range, self.channel_mean,
                             self.channel_std, train, self.aspect_range)


def random_resized_box(h: int, w: int, cfg: AugmentConfig, rng: np.random.Generator) -> tuple[int, int, int, int]:
    """(top, left, height, width) of a crop covering a random area fraction of the frame."""
    area = h * w
    log_lo, log_hi = math.log(cfg.aspect_range[0]), math.log(cfg.aspect_range[1])
    for _ in range(10):
        frac = rng.uniform(*cfg.crop_scale_range)
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        cw = int(round(math.sqrt(area * frac * ratio)))
        ch = int(round(math.sqrt(area * frac / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    return center_square_box(h, w)


def center_square_box(h: int, w: int) -> tuple[int, int, int, int]:
    side = min(h, w)
    return (h - side) // 2, (w - side) // 2, side, side


def crop(frames: np.ndarray, box: tuple[int, int, int, int]) -> np.ndarray:
    top, left, ch, cw = box
    h, w = frames.shape[1:3]
    if ch < 1 or cw < 1 or top < 0 or left < 0 or top + ch > h or left + cw > w:
        raise ConfigError(f"crop box {box} exceeds frame {h}×{w}")
    return frames[:, top:top + ch, left:left + cw]


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, (src - i0).astype(np.float32)


def resize_bilinear_reference(frames: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Pure-numpy bilinear resize of ``(T, H, W, C)`` float frames (half-pixel centres)."""
    oh, ow = size
    y0, y1, wy = _axis_weights(frames.shape[1], oh)
    x0, x1, wx = _axis_weights(frames.shape[2], ow)
    rows = frames[:, y0] * (1 - wy)[None, :, None, None] + frames[:, y1] * wy[None, :, None, None]
    return rows[:, :, x0] * (1 - wx)[None, None, :, None] + rows[:, :, x1] * wx[None, None, :, None]


def resize_bilinear(frames: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of ``(T, H, W, C)`` frames to ``size`` = (height, width).

    All frames and channels go through one OpenCV call (frames folded into channels).
    """
    t, h, w, c = frames.shape
    oh, ow = size
    if (h, w) == (oh, ow):
        return frames.copy()
    stacked = np.ascontiguousarray(frames.transpose(1, 2, 0, 3).reshape(h, w, t * c))
    chunks = [cv2.resize(stacked[:, :, i:i + 512], (ow, oh), interpolation=cv2.INTER_LINEAR)
              for i in range(0, t * c, 512)]
    out = np.concatenate([ch.reshape(oh, ow, -1) for ch in chunks], axis=2)
    return out.reshape(oh, ow, t, c).transpose(2, 0, 1, 3)


def extract_and_transform(v: VideoTensor, spec: ClipSpec, cfg: AugmentConfig,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Gather the clip's frames, crop (one box for all frames), resize and normalise.

    Returns float32 ``(length, H_t, W_t, 3)``.
    """
    v = pad_video(v, padded_duration(v.num_frames, spec.length, spec.skip))
    spec.validate(v.num_frames)
    frames = v.frames[spec.frame_indices()]
    h, w = frames.shape[1:3]
    if cfg.train_mode:
        if rng is None:
            raise ConfigError("train-mode augmentation needs an RNG")
        box = random_resized_box(h, w, cfg, rng)
    else:
        box = center_square_box(h, w)
    x = crop(frames, box).astype(np.float32)
    if x.shape[1:3] != tuple(cfg.target_size):
        x = resize_bilinear(x, cfg.target_size)
    mean = np.asarray(cfg.channel_mean, dtype=np.float32)
    std = np.asarray(cfg.channel_std, dtype=np.float32)
    return ((x / np.float32(255.0) - mean) / std).astype(np.float32)
