"""Gradient-check suite: every primitive plus small encoder / probe composites."""

from __future__ import annotations

import numpy as np

from vjepa_fer.autodiff import tensor as T
from vjepa_fer.autodiff.gradcheck import CheckResult, grad_check, run_primitive_suite
from vjepa_fer.probe import AttentiveProbe
from vjepa_fer.vit import Block, Encoder, EncoderConfig, TubeletConfig

# 2 frames of 8×8 pixels cut into 2×4×4 tubelets: a 1×2×2 grid of 4 tokens
TOY_ENCODER = EncoderConfig(frames=2, img_size=8, tubelet=TubeletConfig(2, 4, 4), embed_dim=12, depth=2,
                            heads=2, mlp_ratio=2.0)


def _params_scaled(module, rng, std=0.3):
    # larger-than-default weights so every path carries a non-trivial gradient
    for p in module.parameters():
        p.data[...] = rng.standard_normal(p.shape) * std


def block_case(seed: int, dtype=np.float64):
    """Loss of one transformer block on 4 tokens; returns (loss_fn, parameters)."""
    rng = np.random.default_rng(seed)
    with T.default_dtype(dtype):
        blk = Block(8, 2, 2.0, rng)
        _params_scaled(blk, rng)
        x = T.Tensor(rng.standard_normal((4, 8)), requires_grad=True, dtype=dtype)
        w = T.Tensor(rng.standard_normal((4, 8)), dtype=dtype)
    return (lambda: T.sum_all(T.mul(blk(x), w))), [x, *blk.parameters()]


def encoder_probe_case(seed: int, dtype=np.float64, num_classes: int = 3):
    """Cross-entropy of probe(encoder(clip)) for the 4-token toy encoder with 2 blocks."""
    rng = np.random.default_rng(seed)
    with T.default_dtype(dtype):
        enc = Encoder(TOY_ENCODER, rng)
        probe = AttentiveProbe(TOY_ENCODER.embed_dim, num_classes, 2, rng)
        _params_scaled(enc, rng)
        _params_scaled(probe, rng)
    clip = rng.standard_normal((2, 8, 8, 3)).astype(dtype)
    label = int(rng.integers(num_classes))
    return (lambda: T.cross_entropy(probe(enc(clip)), label)), enc.parameters() + probe.parameters()


def encoder_case(seed: int, dtype=np.float32):
    """Weighted sum of the toy 2-block encoder outputs."""
    rng = np.random.default_rng(seed)
    with T.default_dtype(dtype):
        enc = Encoder(TOY_ENCODER, rng)
        _params_scaled(enc, rng)
        w = T.Tensor(rng.standard_normal((4, TOY_ENCODER.embed_dim)), dtype=dtype)
    clip = rng.standard_normal((2, 8, 8, 3)).astype(dtype)
    return (lambda: T.sum_all(T.mul(enc(clip), w))), enc.parameters()


def run_composite_suite(seeds: int = 3, h: float = 1e-5, tol: float = 1e-4, max_coords: int = 24) -> list[CheckResult]:
    out = []
    for name, build in (("transformer_block", block_case), ("encoder2+probe", encoder_probe_case)):
        worst = 0.0
        for seed in range(seeds):
            fn, params = build(seed)
            worst = max(worst, grad_check(fn, params, h, max_coords, np.random.default_rng(seed)))
        out.append(CheckResult(name, worst, seeds, tol))
    return out


def run_all(seeds: int = 20) -> list[CheckResult]:
    return run_primitive_suite(seeds) + run_composite_suite()
