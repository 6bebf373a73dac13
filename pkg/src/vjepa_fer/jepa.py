"""Masked latent prediction with an EMA target encoder."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vjepa_fer.autodiff import tensor as T
from vjepa_fer.autodiff.checkpoint import atomic_write_bytes, load_checkpoint, save_checkpoint
from vjepa_fer.autodiff.nn import Module
from vjepa_fer.autodiff.optim import AdamW
from vjepa_fer.autodiff.tensor import Tensor
from vjepa_fer.errors import ConfigError, DimensionError, NumericError, ProtocolError
from vjepa_fer.videodata.augment import AugmentConfig, extract_and_transform
from vjepa_fer.videodata.clips import ClipSpec, sample_training_clips
from vjepa_fer.videodata.manifest import VideoRecord
from vjepa_fer.videodata.rvt import load_video
from vjepa_fer.vit import Encoder, EncoderConfig, Predictor, PredictorConfig, TubeMask, gen_tube_mask

logger = logging.getLogger(__name__)


class JepaModel(Module):
    """Online encoder, its EMA twin and the predictor (which owns the mask token)."""

    def __init__(self, enc_cfg: EncoderConfig, pred_cfg: PredictorConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(enc_cfg, rng)
        self.predictor = Predictor(enc_cfg, pred_cfg, rng)
        self.target = self.encoder.clone().set_requires_grad(False)

    @property
    def enc_cfg(self) -> EncoderConfig:
        return self.encoder.config

    def trainable_named(self) -> list[tuple[str, Tensor]]:
        return self.encoder.named_parameters("encoder.") + self.predictor.named_parameters("predictor.")

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.load_state_dict(arrays)
        self.target.set_requires_grad(False)


@dataclass
class EmaSchedule:
    """Momentum rising linearly from ``m_start`` at step 0 to ``m_end`` at the last step."""

    total_steps: int
    m_start: float = 0.998
    m_end: float = 1.0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError("EMA schedule needs at least one step")
        if not 0 <= self.m_start <= self.m_end <= 1:
            raise ConfigError(f"EMA momenta must satisfy 0 ≤ start ≤ end ≤ 1, got {self.m_start}, {self.m_end}")

    def momentum(self, step: int) -> float:
        if self.total_steps == 1:
            return self.m_start
        frac = min(max(step, 0), self.total_steps - 1) / (self.total_steps - 1)
        return self.m_start + (self.m_end - self.m_start) * frac


def ema_update(target_params: list[Tensor], online_params: list[Tensor], m: float) -> None:
    """In place, off the tape: target <- m * target + (1 - m) * online."""
    if len(target_params) != len(online_params):
        raise DimensionError(f"EMA over {len(target_params)} target vs {len(online_params)} online parameters")
    for tp, op in zip(target_params, online_params):
        if tp.shape != op.shape:
            raise DimensionError(f"EMA shape mismatch {tp.shape} vs {op.shape}")
    for tp, op in zip(target_params, online_params):
        if m == 1.0:
            continue
        tp.data *= tp.dtype.type(m)
        tp.data += tp.dtype.type(1.0 - m) * op.data


@dataclass
class JepaLoss:
    loss: Tensor
    pred: Tensor
    target: Tensor
    masked: np.ndarray
    visible: np.ndarray


def jepa_loss(model: JepaModel, clip: np.ndarray, mask: TubeMask) -> JepaLoss:
    """L1 between predicted and target-encoder embeddings at the masked tokens.

    The target branch runs without recording, so no gradient can reach it.
    """
    token_mask = mask.token_mask()
    if token_mask.size != model.enc_cfg.num_tokens:
        raise DimensionError(f"mask covers {token_mask.size} tokens, encoder has {model.enc_cfg.num_tokens}")
    masked = np.flatnonzero(token_mask)
    visible = np.flatnonzero(~token_mask)
    if masked.size == 0 or visible.size == 0:
        raise ProtocolError("tube mask must hide some tokens and leave some visible")
    with T.no_grad():
        full = model.target(clip)
        target = Tensor(full.data[masked])
    context = model.encoder(clip, visible)
    pred = model.predictor(context, visible, masked)
    return JepaLoss(T.l1_loss(pred, target), pred, target, masked, visible)


@dataclass
class PretrainConfig:
    steps: int = 200
    batch_size: int = 2
    lr: float = 1e-4
    weight_decay: float = 0.05
    warmup_frac: float = 0.1
    mask_ratio: float = 0.75
    mask_block: tuple[int, int] = (4, 4)
    ema_start: float = 0.998
    ema_end: float = 1.0
    clip_length: int = 16
    frame_skip: int = 4
    seed: int = 0
    collapse_every: int = 20

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be ≥ 1")

    def lr_at(self, step: int) -> float:
        warm = max(1, int(round(self.warmup_frac * self.steps)))
        return self.lr * min(1.0, (step + 1) / warm)


@dataclass
class PretrainResult:
    losses: list[float] = field(default_factory=list)
    momenta: list[float] = field(default_factory=list)
    embedding_var: list[tuple[int, float]] = field(default_factory=list)


def embedding_variance(encoder: Encoder, rng: np.random.Generator) -> float:
    """Mean per-feature variance across tokens of the encoder output on a random clip."""
    c = encoder.config
    clip = rng.standard_normal((c.frames, c.img_size, c.img_size, c.tubelet.channels)).astype(np.float32)
    with T.no_grad():
        out = encoder(clip).data
    return float(out.var(axis=0).mean())


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, 0x5EED])


def sample_batch(records: list[VideoRecord], cfg: PretrainConfig, aug: AugmentConfig, grid,
                 rng: np.random.Generator, cache: dict | None = None) -> list[tuple[np.ndarray, TubeMask]]:
    batch = []
    for _ in range(cfg.batch_size):
        rec = records[int(rng.integers(len(records)))]
        video = cache.get(rec.path) if cache is not None else None
        if video is None:
            video = load_video(rec.path)
            if cache is not None:
                cache[rec.path] = video
        start = sample_training_clips(rec.duration_frames, 1, rng, cfg.clip_length, cfg.frame_skip)[0]
        spec = ClipSpec(rec.id, start, cfg.frame_skip, cfg.clip_length)
        clip = extract_and_transform(video, spec, aug, rng)
        batch.append((clip, gen_tube_mask(grid, cfg.mask_ratio, cfg.mask_block, rng)))
    return batch


def model_arrays(model: JepaModel, opt: AdamW | None = None, step: int | None = None) -> dict[str, np.ndarray]:
    arrays = dict(model.state_dict())
    if opt is not None:
        names = [n for n, _ in model.trainable_named()]
        arrays.update(opt.state_arrays(names))
    if step is not None:
        arrays["pretrain.step"] = np.array([step], dtype=np.int64)
    return arrays


def make_optimizer(model: JepaModel, cfg: PretrainConfig) -> AdamW:
    named = model.trainable_named()
    # norms, biases and the mask token are not decayed
    no_decay = [p for n, p in named if p.ndim < 2 or n.endswith("mask_token")]
    return AdamW([p for _, p in named], lr=cfg.lr, weight_decay=cfg.weight_decay, no_decay=no_decay)


def pretrain_run(model: JepaModel, records: list[VideoRecord], cfg: PretrainConfig, aug: AugmentConfig,
                 out_dir: str | os.PathLike | None = None, optimizer: AdamW | None = None,
                 start_step: int = 0) -> PretrainResult:
    """Train ``model`` in place.  Per step: sample clips and tube masks, L1 latent loss,
    optimizer step on encoder and predictor, then the EMA update of the target.

    With ``out_dir`` the loss log (``loss.csv``) and the final checkpoint
    (``checkpoint.vjfc``) are written there.
    """
    if not records:
        raise ProtocolError("pre-training needs a non-empty dataset")
    aug = aug.with_mode(True)
    opt = optimizer or make_optimizer(model, cfg)
    sched = EmaSchedule(cfg.steps, cfg.ema_start, cfg.ema_end)
    online = model.encoder.parameters()
    target = model.target.parameters()
    grid = model.enc_cfg.grid
    result = PretrainResult()
    cache: dict = {}
    for step in range(start_step, cfg.steps):
        rng = _step_rng(cfg.seed, step)
        lr = cfg.lr_at(step)
        opt.zero_grad()
        total = 0.0
        for clip, mask in sample_batch(records, cfg, aug, grid, rng, cache):
            out = jepa_loss(model, clip, mask)
            T.backward(T.scale(out.loss, 1.0 / cfg.batch_size))
            total += float(out.loss.data)
        loss = total / cfg.batch_size
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss at step {step}: loss={loss} lr={lr}")
        opt.step(lr)
        m = sched.momentum(step)
        ema_update(target, online, m)
        result.losses.append(loss)
        result.momenta.append(m)
        if cfg.collapse_every and (step % cfg.collapse_every == 0 or step == cfg.steps - 1):
            var = embedding_variance(model.encoder, np.random.default_rng([cfg.seed, step, 1]))
            result.embedding_var.append((step, var))
            logger.info("step %d loss %.5f m %.5f lr %.2e emb-var %.4g", step, loss, m, lr, var)
    if out_dir is not None:
        out = Path(out_dir)
        write_loss_log(out / "loss.csv", range(start_step, cfg.steps), result)
        save_checkpoint(out / "checkpoint.vjfc", model_arrays(model, opt, cfg.steps))
    return result


def write_loss_log(path: Path, steps, result: PretrainResult) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("step", "loss", "momentum"))
    for s, loss, m in zip(steps, result.losses, result.momenta):
        w.writerow((s, repr(loss), repr(m)))
    atomic_write_bytes(path, buf.getvalue().encode())


def load_jepa(path: str | os.PathLike, enc_cfg: EncoderConfig, pred_cfg: PredictorConfig) -> JepaModel:
    model = JepaModel(enc_cfg, pred_cfg)
    model.load_arrays(load_checkpoint(path))
    return model


def load_encoder(path: str | os.PathLike, enc_cfg: EncoderConfig, which: str = "encoder") -> Encoder:
    """Pull one encoder (``encoder`` or ``target``) out of a pre-training checkpoint."""
    arrays = load_checkpoint(path)
    enc = Encoder(enc_cfg, np.random.default_rng(0))
    enc.load_state_dict(arrays, prefix=f"{which}.")
    return enc.set_requires_grad(False)
