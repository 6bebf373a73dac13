"""Attentive probe on a frozen encoder, and its training loop."""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vjepa_fer.autodiff import tensor as T
from vjepa_fer.autodiff.checkpoint import atomic_write_bytes, load_checkpoint, save_checkpoint
from vjepa_fer.autodiff.nn import Linear, Module, param, trunc_normal
from vjepa_fer.autodiff.optim import AdamW
from vjepa_fer.autodiff.tensor import Tensor
from vjepa_fer.errors import ConfigError, DimensionError, ProtocolError, UsageError
from vjepa_fer.videodata.augment import AugmentConfig, extract_and_transform
from vjepa_fer.videodata.clips import ClipSpec, sample_training_clips
from vjepa_fer.videodata.folds import FoldPlan, split_records
from vjepa_fer.videodata.manifest import VideoRecord
from vjepa_fer.videodata.rvt import load_video
from vjepa_fer.vit import Encoder

logger = logging.getLogger(__name__)

POOLINGS = ("attentive", "average")


class AttentiveProbe(Module):
    """One learnable query cross-attends over the encoder tokens; a depth-3 MLP classifies.

    With ``pooling='average'`` the tokens are mean-pooled instead (linear-pooling baseline);
    the query and attention weights then stay unused.
    """

    def __init__(self, dim: int, num_classes: int, heads: int, rng: np.random.Generator,
                 pooling: str = "attentive", zero_head: bool = False):
        if dim % heads:
            raise ConfigError(f"probe dim {dim} not divisible by heads {heads}")
        if pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {pooling!r}")
        self._heads = heads
        self._pooling = pooling
        # fan-in scaled init: with 0.02 the three-layer head starts on a flat plateau
        std = dim ** -0.5
        self.query = param(trunc_normal(rng, (1, dim)))
        self.wk = Linear(dim, dim, rng, std=std)
        self.wv = Linear(dim, dim, rng, std=std)
        self.wo = Linear(dim, dim, rng, std=std)
        self.fc1 = Linear(dim, dim, rng, std=std)
        self.fc2 = Linear(dim, dim, rng, std=std)
        self.fc3 = Linear(dim, num_classes, rng, std=std)
        if zero_head:
            self.fc3.weight.data[...] = 0.0
            self.fc3.bias.data[...] = 0.0

    @property
    def dim(self) -> int:
        return self.query.shape[1]

    @property
    def num_classes(self) -> int:
        return self.fc3.weight.shape[1]

    @property
    def pooling(self) -> str:
        return self._pooling

    def pool(self, tokens: Tensor, batch: int = 1) -> Tensor:
        """Pool ``batch`` stacked token sets ``(batch·N, D)`` into ``(batch, D)``."""
        rows, d = tokens.shape
        if rows == 0:
            raise ProtocolError("attentive pooling over zero tokens")
        if d != self.dim:
            raise DimensionError(f"tokens have dim {d}, probe expects {self.dim}")
        n = rows // batch
        if self._pooling == "average":
            if batch == 1:
                return T.mean_rows(tokens)
            return T.concat_rows([T.mean_rows(T.take_rows(tokens, np.arange(i * n, (i + 1) * n)))
                                  for i in range(batch)])
        h = self._heads
        dh = d // h
        q = T.reshape(T.expand_rows(self.query, batch), (batch * h, 1, dh))
        k = T.permute(T.reshape(self.wk(tokens), (batch, n, h, dh)), (0, 2, 3, 1))
        k = T.reshape(k, (batch * h, dh, n))
        v = T.permute(T.reshape(self.wv(tokens), (batch, n, h, dh)), (0, 2, 1, 3))
        v = T.reshape(v, (batch * h, n, dh))
        attn = T.softmax(T.scale(T.bmm(q, k), 1.0 / np.sqrt(dh)), axis=-1)   # (batch·h, 1, n)
        out = T.reshape(T.bmm(attn, v), (batch, d))
        return self.wo(out)

    def head(self, pooled: Tensor) -> Tensor:
        x = T.gelu(self.fc1(pooled))
        x = T.gelu(self.fc2(x))
        return self.fc3(x)

    def forward(self, tokens: Tensor) -> Tensor:
        """Logits ``(K,)`` for one clip's ``(N, D)`` token embeddings."""
        return T.reshape(self.head(self.pool(tokens)), (self.num_classes,))

    def forward_batch(self, tokens: Tensor, batch: int) -> Tensor:
        """Logits ``(batch, K)`` for ``batch`` clips stacked as ``(batch·N, D)``."""
        return self.head(self.pool(tokens, batch))


def attentive_pool(tokens: Tensor, probe: AttentiveProbe) -> Tensor:
    return probe.pool(tokens)


def classify(encoder_output: Tensor, probe: AttentiveProbe) -> Tensor:
    return probe(encoder_output)


def probabilities(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ProbeTrainConfig:
    epochs: int = 20
    clips_per_video: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 8
    seed: int = 0
    pooling: str = "attentive"
    clip_length: int = 16
    frame_skip: int = 4

    def __post_init__(self):
        if self.epochs < 1 or self.clips_per_video < 1 or self.batch_size < 1:
            raise ConfigError("epochs, clips_per_video and batch_size must be ≥ 1")


@dataclass
class ProbeHistory:
    epochs: list[int] = field(default_factory=list)
    mean_loss: list[float] = field(default_factory=list)
    train_war: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("epoch", "mean_loss", "train_war"))
        for row in zip(self.epochs, self.mean_loss, self.train_war):
            w.writerow((row[0], repr(row[1]), repr(row[2])))
        return buf.getvalue()


def encode_frozen(encoder: Encoder, clips: np.ndarray) -> np.ndarray:
    """Encoder outputs ``(B, N, D)`` for a clip stack, computed off the tape."""
    n = encoder.config.num_tokens
    with T.no_grad():
        out = encoder.encode_clips(clips).data
    return out.reshape(clips.shape[0], n, -1)


def _video_cache(records: list[VideoRecord]) -> dict:
    return {r.path: load_video(r.path) for r in records}


def train_probe(encoder: Encoder, records: list[VideoRecord], labels: tuple[str, ...], plan: FoldPlan,
                fold_index: int, cfg: ProbeTrainConfig, aug: AugmentConfig) -> tuple[AttentiveProbe, ProbeHistory]:
    """Train a probe on every fold except ``fold_index``; the encoder is never updated.

    Each epoch visits training videos in a shuffled order and draws
    ``clips_per_video`` clips from each; every clip is supervised with its
    video's label.
    """
    train, _ = split_records(records, plan, fold_index)
    if not train:
        raise ProtocolError(f"fold {fold_index} leaves no training videos")
    index = {name: i for i, name in enumerate(labels)}
    for r in train:
        if r.label not in index:
            raise ProtocolError(f"video {r.id} label {r.label!r} outside the probe label set")
    rng = np.random.default_rng([cfg.seed, fold_index])
    ecfg = encoder.config
    probe = AttentiveProbe(ecfg.embed_dim, len(labels), ecfg.heads, rng, pooling=cfg.pooling)
    opt = AdamW(probe.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay, no_decay=[probe.query])
    enc_params = encoder.parameters()
    if any(p.requires_grad for p in enc_params):
        raise UsageError("train_probe needs a frozen encoder (requires_grad=False on all parameters)")
    checksum = encoder.checksum()
    aug = aug.with_mode(True)
    videos = _video_cache(train)
    history = ProbeHistory()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        clips, ys = [], []
        for vi in order:
            rec = train[vi]
            for start in sample_training_clips(rec.duration_frames, cfg.clips_per_video, rng,
                                               cfg.clip_length, cfg.frame_skip):
                spec = ClipSpec(rec.id, start, cfg.frame_skip, cfg.clip_length)
                clips.append(extract_and_transform(videos[rec.path], spec, aug, rng))
                ys.append(index[rec.label])
        losses, correct = [], 0
        for b in range(0, len(clips), cfg.batch_size):
            batch = np.stack(clips[b:b + cfg.batch_size])
            feats = encode_frozen(encoder, batch)
            yb = np.asarray(ys[b:b + cfg.batch_size])
            opt.zero_grad()
            logits = probe.forward_batch(Tensor(feats.reshape(-1, feats.shape[-1])), len(batch))
            loss = T.cross_entropy(logits, yb)
            T.backward(loss)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
            for p in enc_params:
                if p.grad is not None:
                    raise UsageError("encoder parameter received a gradient during probe training")
            opt.step()
            losses.append(float(loss.data))
        history.epochs.append(epoch)
        history.mean_loss.append(float(np.mean(losses)))
        history.train_war.append(correct / len(clips))
        logger.info("fold %d epoch %d loss %.4f train-war %.3f", fold_index, epoch,
                    history.mean_loss[-1], history.train_war[-1])
    if encoder.checksum() != checksum:
        raise UsageError("encoder weights changed during probe training")
    return probe, history


def predict_clip_probs(encoder: Encoder, probe: AttentiveProbe, clips: np.ndarray, batch: int = 8) -> np.ndarray:
    """Softmax probabilities ``(n_clips, K)``."""
    out = []
    with T.no_grad():
        for b in range(0, len(clips), batch):
            feats = encode_frozen(encoder, clips[b:b + batch])
            logits = probe.forward_batch(Tensor(feats.reshape(-1, feats.shape[-1])), len(feats))
            out.append(logits.data.astype(np.float64))
    return probabilities(np.concatenate(out))


def save_probe(path: str | os.PathLike, probe: AttentiveProbe) -> None:
    arrays = probe.state_dict("probe.")
    arrays["probe.meta.heads"] = np.array([probe._heads], dtype=np.int64)
    arrays["probe.meta.average_pooling"] = np.array([probe.pooling == "average"], dtype=np.int64)
    save_checkpoint(path, arrays)


def load_probe(path: str | os.PathLike) -> AttentiveProbe:
    arrays = load_checkpoint(path)
    dim = arrays["probe.query"].shape[1]
    k = arrays["probe.fc3.weight"].shape[1]
    heads = int(arrays["probe.meta.heads"][0])
    pooling = "average" if int(arrays["probe.meta.average_pooling"][0]) else "attentive"
    probe = AttentiveProbe(dim, k, heads, np.random.default_rng(0), pooling=pooling)
    probe.load_state_dict(arrays, "probe.")
    return probe


def write_history(path: str | os.PathLike, history: ProbeHistory) -> None:
    atomic_write_bytes(Path(path), history.to_csv().encode())
