"""Flat key/value run configuration.

Files hold ``key = value`` lines (an optional ``[run]`` header is allowed);
``#`` starts a comment.  Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields

from vjepa_fer.autodiff.checkpoint import atomic_write_bytes
from vjepa_fer.errors import ConfigError
from vjepa_fer.jepa import PretrainConfig
from vjepa_fer.probe import ProbeTrainConfig
from vjepa_fer.videodata.augment import AugmentConfig
from vjepa_fer.videodata.synthetic import SynthConfig
from vjepa_fer.vit import EncoderConfig, PredictorConfig, TubeletConfig


@dataclass
class RunConfig:
    seed: int = 0
    # data
    manifest: str = ""
    target_manifest: str = ""
    dataset: str = "SYNTH"
    classes: int = 3
    subjects: int = 10
    videos_per_class: int = 2
    min_frames: int = 40
    max_frames: int = 96
    frame_size: int = 64
    # model
    img_size: int = 64
    frames: int = 16
    frame_skip: int = 4
    patch_t: int = 2
    patch_h: int = 16
    patch_w: int = 16
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    pred_dim: int = 64
    pred_depth: int = 2
    pred_heads: int = 4
    # augmentation
    crop_scale_min: float = 0.3
    crop_scale_max: float = 1.0
    # pre-training
    steps: int = 200
    batch_size: int = 2
    lr: float = 5e-4
    weight_decay: float = 0.05
    warmup_frac: float = 0.1
    mask_ratio: float = 0.75
    mask_block_h: int = 2
    mask_block_w: int = 2
    ema_start: float = 0.998
    ema_end: float = 1.0
    # probe training
    encoder: str = ""
    encoder_init: str = "pretrained"
    probe_epochs: int = 20
    clips_per_video: int = 8
    probe_lr: float = 1e-3
    probe_weight_decay: float = 0.01
    probe_batch: int = 8
    pooling: str = "attentive"
    fold_source: str = "generated"
    k: int = 5
    fold: int = -1
    # evaluation
    probes: str = ""
    voting: str = "both"
    mode: str = "both"
    eval_stride: int = 1
    gradcheck_seeds: int = 20

    # -- construction ----------------------------------------------------
    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def update(self, values: dict[str, str | int | float]) -> "RunConfig":
        known = {f.name: f for f in fields(self)}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            typ = known[key].type
            try:
                if typ in ("int", int):
                    val = int(raw)
                elif typ in ("float", float):
                    val = float(raw)
                else:
                    val = str(raw)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ}") from exc
            setattr(self, key, val)
        return self

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "RunConfig":
        try:
            text = open(path).read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        parser.optionxform = str
        if not text.lstrip().startswith("["):
            text = "[run]\n" + text
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        values = {}
        for section in parser.sections():
            values.update({k: v.strip().strip('"') for k, v in parser.items(section)})
        return cls().update(values)

    def dumps(self) -> str:
        lines = ["# resolved run configuration"]
        for key, val in dataclasses.asdict(self).items():
            lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | os.PathLike) -> None:
        atomic_write_bytes(path, self.dumps().encode())

    # -- typed views ----------------------------------------------------------
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(frames=self.frames, img_size=self.img_size,
                             tubelet=TubeletConfig(self.patch_t, self.patch_h, self.patch_w),
                             embed_dim=self.embed_dim, depth=self.depth, heads=self.heads,
                             mlp_ratio=self.mlp_ratio)

    def predictor_config(self) -> PredictorConfig:
        return PredictorConfig(pred_dim=self.pred_dim, depth=self.pred_depth, heads=self.pred_heads,
                               mlp_ratio=self.mlp_ratio)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(target_size=(self.img_size, self.img_size),
                             crop_scale_range=(self.crop_scale_min, self.crop_scale_max))

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                              weight_decay=self.weight_decay, warmup_frac=self.warmup_frac,
                              mask_ratio=self.mask_ratio, mask_block=(self.mask_block_h, self.mask_block_w),
                              ema_start=self.ema_start, ema_end=self.ema_end, clip_length=self.frames,
                              frame_skip=self.frame_skip, seed=self.seed)

    def probe_config(self) -> ProbeTrainConfig:
        return ProbeTrainConfig(epochs=self.probe_epochs, clips_per_video=self.clips_per_video, lr=self.probe_lr,
                                weight_decay=self.probe_weight_decay, batch_size=self.probe_batch,
                                seed=self.seed, pooling=self.pooling, clip_length=self.frames,
                                frame_skip=self.frame_skip)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(num_classes=self.classes, num_subjects=self.subjects,
                           videos_per_subject_class=self.videos_per_class, min_frames=self.min_frames,
                           max_frames=self.max_frames, size=self.frame_size, seed=self.seed,
                           dataset=self.dataset, k_folds=self.k)
