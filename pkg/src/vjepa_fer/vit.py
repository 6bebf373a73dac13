"""Video transformer pieces: tubelet embedding, 3-D sinusoidal positions, tube masks,
and the pre-norm encoder / predictor pair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vjepa_fer.autodiff import tensor as T
from vjepa_fer.autodiff.nn import LayerNorm, Linear, Module, param, trunc_normal
from vjepa_fer.autodiff.tensor import Tensor
from vjepa_fer.errors import ConfigError, DimensionError, ProtocolError


@dataclass(frozen=True)
class TubeletConfig:
    patch_t: int = 2
    patch_h: int = 16
    patch_w: int = 16
    channels: int = 3

    @property
    def patch_dim(self) -> int:
        return self.patch_t * self.patch_h * self.patch_w * self.channels

    def grid(self, frames: int, height: int, width: int) -> tuple[int, int, int]:
        if frames % self.patch_t or height % self.patch_h or width % self.patch_w:
            raise ConfigError(
                f"clip {frames}×{height}×{width} is not divisible by tubelet "
                f"{self.patch_t}×{self.patch_h}×{self.patch_w}")
        return frames // self.patch_t, height // self.patch_h, width // self.patch_w


@dataclass(frozen=True)
class EncoderConfig:
    frames: int = 16
    img_size: int = 64
    tubelet: TubeletConfig = TubeletConfig()
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        self.grid  # validates divisibility

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.tubelet.grid(self.frames, self.img_size, self.img_size)

    @property
    def num_tokens(self) -> int:
        t, h, w = self.grid
        return t * h * w


@dataclass(frozen=True)
class PredictorConfig:
    pred_dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.pred_dim % self.heads:
            raise ConfigError(f"pred_dim {self.pred_dim} not divisible by heads {self.heads}")


@dataclass
class TokenGrid:
    tokens: Tensor  # (T'·H'·W', D), rows in (t, h, w) row-major order
    grid: tuple[int, int, int]

    def __post_init__(self):
        if self.tokens.shape[0] != int(np.prod(self.grid)):
            raise DimensionError(f"{self.tokens.shape[0]} tokens for grid {self.grid}")


# ---------------------------------------------------------------------------
# Tokenisation
# ---------------------------------------------------------------------------


def patchify(clip: np.ndarray, cfg: TubeletConfig) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Cut a ``(T, H, W, C)`` clip into flattened non-overlapping tubelets, (t, h, w) order."""
    t, h, w, c = clip.shape
    if c != cfg.channels:
        raise DimensionError(f"clip has {c} channels, tubelet expects {cfg.channels}")
    gt, gh, gw = cfg.grid(t, h, w)
    x = clip.reshape(gt, cfg.patch_t, gh, cfg.patch_h, gw, cfg.patch_w, c)
    x = x.transpose(0, 2, 4, 1, 3, 5, 6)
    return np.ascontiguousarray(x.reshape(gt * gh * gw, cfg.patch_dim)), (gt, gh, gw)


class TubeletEmbed(Module):
    def __init__(self, cfg: TubeletConfig, embed_dim: int, rng: np.random.Generator):
        self._cfg = cfg
        self.proj = Linear(cfg.patch_dim, embed_dim, rng)

    def forward(self, clip: np.ndarray) -> TokenGrid:
        patches, grid = patchify(clip, self._cfg)
        x = Tensor(patches, dtype=self.proj.weight.dtype)
        return TokenGrid(self.proj(x), grid)


def tubelet_embed(clip: np.ndarray, embed: TubeletEmbed) -> TokenGrid:
    return embed(clip)


def _sincos_1d(pos: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    omega = 1.0 / 10000.0 ** (np.arange(half, dtype=np.float64) / max(half, 1))
    ang = pos[:, None].astype(np.float64) * omega[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def posembed_3d(grid: tuple[int, int, int], dim: int) -> np.ndarray:
    """Fixed sin/cos embedding; ``dim`` is split into equal t, h, w blocks.

    Each axis gets ``2 * (dim // 6)`` channels (sines then cosines); trailing
    channels left over when ``dim`` is not a multiple of 6 are zero.
    """
    gt, gh, gw = grid
    t, h, w = np.meshgrid(np.arange(gt), np.arange(gh), np.arange(gw), indexing="ij")
    per_axis = 2 * (dim // 6)
    out = np.zeros((gt * gh * gw, dim), dtype=np.float64)
    for i, coord in enumerate((t, h, w)):
        out[:, i * per_axis:(i + 1) * per_axis] = _sincos_1d(coord.ravel(), per_axis)
    return out


# ---------------------------------------------------------------------------
# Tube masks
# ---------------------------------------------------------------------------


@dataclass
class TubeMask:
    spatial_mask: np.ndarray  # (H', W') bool, True = masked
    grid: tuple[int, int, int]

    def token_mask(self) -> np.ndarray:
        """Per-token mask in (t, h, w) order: the spatial mask repeated at every t."""
        return np.tile(self.spatial_mask.ravel(), self.grid[0])

    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.token_mask())

    def visible_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.token_mask())


def gen_tube_mask(grid: tuple[int, int, int], mask_ratio: float = 0.75, block: tuple[int, int] = (4, 4),
                  rng: np.random.Generator | None = None) -> TubeMask:
    """Union of random spatial blocks covering at least ``mask_ratio`` of the H'×W' cells,
    always leaving one cell visible; extended over time into tubes."""
    if not 0 < mask_ratio < 1:
        raise ConfigError(f"mask ratio must be in (0, 1), got {mask_ratio}")
    if rng is None:
        raise ConfigError("gen_tube_mask needs an RNG")
    _, gh, gw = grid
    bh, bw = block
    if bh < 1 or bw < 1 or bh > gh or bw > gw:
        raise ConfigError(f"mask block {block} does not fit spatial grid {gh}×{gw}")
    cells = gh * gw
    if cells < 2:
        raise ConfigError("spatial grid needs at least two cells to mask")
    target = min(int(np.ceil(mask_ratio * cells)), cells - 1)
    mask = np.zeros((gh, gw), dtype=bool)
    while mask.sum() < target:
        top = int(rng.integers(0, gh - bh + 1))
        left = int(rng.integers(0, gw - bw + 1))
        cand = mask.copy()
        cand[top:top + bh, left:left + bw] = True
        if cand.all():
            # a whole block would hide everything: add its cells one at a time instead
            fresh = np.flatnonzero(cand.ravel() & ~mask.ravel())
            for cell in rng.permutation(fresh)[: target - int(mask.sum())]:
                mask.ravel()[cell] = True
            break
        mask = cand
    return TubeMask(mask, tuple(grid))


# ---------------------------------------------------------------------------
# Transformer
# ---------------------------------------------------------------------------


class Attention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self._heads = heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self._last_scores_shape: tuple[int, ...] | None = None

    def forward(self, x: Tensor, batch: int = 1) -> Tensor:
        """Self-attention within each of ``batch`` equal-length sequences stacked along rows."""
        rows, d = x.shape
        n = rows // batch
        h = self._heads
        dh = d // h

        def heads(t: Tensor) -> Tensor:
            t = T.permute(T.reshape(t, (batch, n, h, dh)), (0, 2, 1, 3))
            return T.reshape(t, (batch * h, n, dh))

        q, k, v = heads(self.wq(x)), heads(self.wk(x)), heads(self.wv(x))
        scores = T.scale(T.bmm(q, T.permute(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
        self._last_scores_shape = scores.shape  # (batch·heads, queries, keys)
        attn = T.softmax(scores, axis=-1)
        out = T.reshape(T.bmm(attn, v), (batch, h, n, dh))
        out = T.reshape(T.permute(out, (0, 2, 1, 3)), (rows, d))
        return self.wo(out)


class Block(Module):
    """Pre-norm transformer block with a GELU MLP."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator):
        hidden = int(dim * mlp_ratio)
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor, batch: int = 1) -> Tensor:
        x = T.add(x, self.attn(self.norm1(x), batch))
        return T.add(x, self.fc2(T.gelu(self.fc1(self.norm2(x)))))


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self._cfg = cfg
        self.patch = TubeletEmbed(cfg.tubelet, cfg.embed_dim, rng)
        self.blocks = [Block(cfg.embed_dim, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth)]
        # depth 0 is an identity map, so the output norm only exists with blocks
        self.norm = LayerNorm(cfg.embed_dim) if cfg.depth > 0 else None
        self._pos = posembed_3d(cfg.grid, cfg.embed_dim)

    @property
    def config(self) -> EncoderConfig:
        return self._cfg

    def embed(self, clip: np.ndarray) -> TokenGrid:
        """Tubelet tokens with positions already added."""
        tg = self.patch(clip)
        if tg.grid != self._cfg.grid:
            raise DimensionError(f"clip grid {tg.grid} != encoder grid {self._cfg.grid}")
        pos = Tensor(self._pos, dtype=tg.tokens.dtype)
        return TokenGrid(T.add(tg.tokens, pos), tg.grid)

    def encode(self, tokens: Tensor, visible=None) -> Tensor:
        """Run the blocks over all tokens, or only over the rows in ``visible`` (others dropped)."""
        x = tokens
        if visible is not None:
            visible = np.asarray(visible, dtype=np.int64)
            if visible.size == 0:
                raise ProtocolError("encode: empty visible token set")
            x = T.take_rows(x, visible)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x) if self.norm is not None else x

    def forward(self, clip: np.ndarray, visible=None) -> Tensor:
        return self.encode(self.embed(clip).tokens, visible)

    def encode_clips(self, clips: np.ndarray) -> Tensor:
        """Full-sequence encoding of a stack of clips ``(B, T, H, W, C)``; rows come back
        clip-major as ``(B·N, D)`` and each clip attends only within itself."""
        b = clips.shape[0]
        x = T.concat_rows([self.embed(c).tokens for c in clips])
        for blk in self.blocks:
            x = blk(x, b)
        return self.norm(x) if self.norm is not None else x


def encode(encoder: Encoder, tokens: TokenGrid | Tensor, visible=None) -> Tensor:
    x = tokens.tokens if isinstance(tokens, TokenGrid) else tokens
    return encoder.encode(x, visible)


class Predictor(Module):
    """Narrow transformer mapping context embeddings plus positioned mask tokens to
    predicted embeddings at the masked positions."""

    def __init__(self, enc: EncoderConfig, cfg: PredictorConfig, rng: np.random.Generator):
        self._cfg = cfg
        self.embed = Linear(enc.embed_dim, cfg.pred_dim, rng)
        self.mask_token = param(trunc_normal(rng, (1, cfg.pred_dim)))
        self.blocks = [Block(cfg.pred_dim, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.pred_dim)
        self.proj = Linear(cfg.pred_dim, enc.embed_dim, rng)
        self._pos = posembed_3d(enc.grid, cfg.pred_dim)

    def forward(self, context: Tensor, context_idx, masked_idx) -> Tensor:
        context_idx = np.asarray(context_idx, dtype=np.int64)
        masked = np.sort(np.asarray(masked_idx, dtype=np.int64))
        if masked.size == 0:
            raise ProtocolError("predict: no masked positions requested")
        if context_idx.size == 0:
            raise ProtocolError("predict: empty context")
        if context.shape[0] != context_idx.size:
            raise DimensionError(f"{context.shape[0]} context embeddings for {context_idx.size} positions")
        if np.intersect1d(context_idx, masked).size:
            raise ProtocolError("predict: masked positions overlap the context positions")
        dt = context.dtype
        ctx = T.add(self.embed(context), Tensor(self._pos[context_idx], dtype=dt))
        queries = T.add(T.expand_rows(self.mask_token, masked.size), Tensor(self._pos[masked], dtype=dt))
        x = T.concat_rows([ctx, queries])
        for blk in self.blocks:
            x = blk(x)
        x = T.take_rows(self.norm(x), np.arange(context_idx.size, context_idx.size + masked.size))
        return self.proj(x)


def predict(predictor: Predictor, context: Tensor, context_idx, masked_idx) -> Tensor:
    return predictor(context, context_idx, masked_idx)
