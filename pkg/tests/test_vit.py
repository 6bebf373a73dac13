import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vjepa_fer.autodiff import tensor as T
from vjepa_fer.autodiff.tensor import Tensor
from vjepa_fer.checks import TOY_ENCODER, block_case, encoder_case
from vjepa_fer.autodiff.gradcheck import grad_check
from vjepa_fer.errors import ConfigError, DimensionError, ProtocolError
from vjepa_fer.vit import (
    Attention, Encoder, EncoderConfig, Predictor, PredictorConfig, TubeletConfig, TubeletEmbed, encode,
    gen_tube_mask, patchify, posembed_3d, predict, tubelet_embed,
)


def small_encoder(depth=2, dim=12, seed=0):
    cfg = EncoderConfig(frames=4, img_size=8, tubelet=TubeletConfig(2, 4, 4), embed_dim=dim, depth=depth,
                        heads=2, mlp_ratio=2.0)
    return Encoder(cfg, np.random.default_rng(seed))


class TestTubelets:
    def test_full_scale_tokens(self):
        cfg = EncoderConfig(frames=16, img_size=224, embed_dim=12, depth=0, heads=1)
        assert cfg.grid == (8, 14, 14) and cfg.num_tokens == 1568

    def test_toy_scale_tokens(self):
        cfg = EncoderConfig()
        assert cfg.grid == (8, 4, 4) and cfg.num_tokens == 128

    def test_zero_clip_zero_tokens(self):
        embed = TubeletEmbed(TubeletConfig(2, 4, 4), 8, np.random.default_rng(0))
        tg = tubelet_embed(np.zeros((4, 8, 8, 3), dtype=np.float32), embed)
        assert tg.tokens.shape == (8, 8)
        assert not tg.tokens.data.any()

    def test_patch_layout(self):
        clip = np.arange(4 * 8 * 8 * 3, dtype=np.float32).reshape(4, 8, 8, 3)
        patches, grid = patchify(clip, TubeletConfig(2, 4, 4))
        assert grid == (2, 2, 2)
        # token (t=1, h=0, w=1) holds frames 2..3, rows 0..3, cols 4..7
        np.testing.assert_array_equal(patches[5], clip[2:4, 0:4, 4:8].ravel())

    def test_indivisible(self):
        with pytest.raises(ConfigError):
            TubeletConfig(2, 16, 16).grid(16, 60, 64)

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_grid_arithmetic(self, gt, gh, gw, pt, ph):
        cfg = TubeletConfig(pt, ph, ph)
        clip = np.zeros((gt * pt, gh * ph, gw * ph, 3), dtype=np.float32)
        patches, grid = patchify(clip, cfg)
        assert grid == (gt, gh, gw)
        assert patches.shape == (gt * gh * gw, pt * ph * ph * 3)


class TestPosEmbed:
    def test_origin(self):
        pe = posembed_3d((8, 4, 4), 128)
        per = 2 * (128 // 6)
        for axis in range(3):
            block = pe[0, axis * per:(axis + 1) * per]
            np.testing.assert_array_equal(block[: per // 2], 0.0)
            np.testing.assert_array_equal(block[per // 2:], 1.0)
        np.testing.assert_array_equal(pe[:, 3 * per:], 0.0)

    def test_range_and_distinct(self):
        pe = posembed_3d((8, 4, 4), 128)
        assert pe.shape == (128, 128)
        assert np.abs(pe).max() <= 1.0
        d = ((pe[:, None] - pe[None]) ** 2).sum(-1)
        off = d[~np.eye(128, dtype=bool)]
        assert off.min() > 1e-6


class TestTubeMask:
    def test_full_grid_half(self, rng):
        m = gen_tube_mask((8, 14, 14), 0.5, (4, 4), rng)
        assert m.spatial_mask.sum() >= 98
        assert m.token_mask().sum() >= 784
        assert m.token_mask().size == 1568

    def test_tube_property_and_determinism(self):
        for seed in range(20):
            m = gen_tube_mask((8, 4, 4), 0.75, (2, 2), np.random.default_rng(seed))
            tm = m.token_mask().reshape(8, 16)
            assert (tm == tm[0]).all()
            assert 12 <= tm[0].sum() <= 15
            again = gen_tube_mask((8, 4, 4), 0.75, (2, 2), np.random.default_rng(seed))
            np.testing.assert_array_equal(m.spatial_mask, again.spatial_mask)

    def test_full_grid_block_keeps_one_visible(self, rng):
        m = gen_tube_mask((8, 4, 4), 0.75, (4, 4), rng)
        assert 0 < m.visible_indices().size

    def test_block_too_big(self, rng):
        with pytest.raises(ConfigError):
            gen_tube_mask((2, 3, 3), 0.5, (4, 4), rng)


class TestEncoder:
    def test_depth_zero_is_identity(self, rng):
        enc = small_encoder(depth=0)
        x = Tensor(rng.standard_normal((8, 12)))
        np.testing.assert_array_equal(encode(enc, x).data, x.data)

    def test_single_token_attention(self, rng):
        attn = Attention(6, 2, rng)
        x = Tensor(rng.standard_normal((1, 6)), dtype=np.float64)
        attn.astype(np.float64)
        expected = attn.wo(attn.wv(x)).data
        np.testing.assert_allclose(attn(x).data, expected, atol=1e-12)

    def test_visible_subset_attention_shape(self):
        enc = small_encoder()
        clip = np.random.default_rng(0).standard_normal((4, 8, 8, 3)).astype(np.float32)
        out = enc(clip, visible=[0, 2, 5])
        assert out.shape == (3, 12)
        for blk in enc.blocks:
            assert blk.attn._last_scores_shape == (2, 3, 3)

    def test_full_then_select_shape(self):
        enc = small_encoder()
        clip = np.zeros((4, 8, 8, 3), dtype=np.float32)
        full = enc(clip)
        masked = np.array([1, 4, 6])
        assert full.data[masked].shape == (3, 12)

    def test_empty_visible(self):
        with pytest.raises(ProtocolError):
            small_encoder()(np.zeros((4, 8, 8, 3), dtype=np.float32), visible=[])

    def test_batched_matches_single(self):
        enc = small_encoder()
        clips = np.random.default_rng(1).standard_normal((3, 4, 8, 8, 3)).astype(np.float32)
        batched = enc.encode_clips(clips).data.reshape(3, 8, 12)
        for i in range(3):
            np.testing.assert_array_equal(batched[i], enc(clips[i]).data)

    def test_wrong_clip_size(self):
        with pytest.raises(DimensionError):
            small_encoder()(np.zeros((4, 12, 12, 3), dtype=np.float32))


class TestPredictor:
    def setup_method(self):
        self.enc_cfg = EncoderConfig(frames=4, img_size=8, tubelet=TubeletConfig(2, 4, 4), embed_dim=12,
                                     depth=1, heads=2)
        self.pred = Predictor(self.enc_cfg, PredictorConfig(pred_dim=6, depth=2, heads=2),
                              np.random.default_rng(0))

    def test_output_shape(self, rng):
        ctx = Tensor(rng.standard_normal((5, 12)))
        out = predict(self.pred, ctx, [0, 1, 2, 3, 4], [5, 6, 7])
        assert out.shape == (3, 12)

    def test_context_permutation_invariance(self, rng):
        ctx = rng.standard_normal((5, 12))
        idx = np.array([0, 2, 3, 5, 7])
        masked = [1, 4, 6]
        base = self.pred(Tensor(ctx), idx, masked).data
        for _ in range(5):
            p = rng.permutation(5)
            out = self.pred(Tensor(ctx[p]), idx[p], masked).data
            np.testing.assert_allclose(out, base, atol=1e-5)

    def test_masked_order_canonical(self, rng):
        ctx = Tensor(rng.standard_normal((5, 12)))
        a = self.pred(ctx, [0, 1, 2, 3, 4], [5, 6, 7]).data
        b = self.pred(ctx, [0, 1, 2, 3, 4], [7, 5, 6]).data
        np.testing.assert_array_equal(a, b)

    def test_no_masked_slots(self, rng):
        with pytest.raises(ProtocolError):
            self.pred(Tensor(rng.standard_normal((2, 12))), [0, 1], [])

    def test_overlap_rejected(self, rng):
        with pytest.raises(ProtocolError):
            self.pred(Tensor(rng.standard_normal((2, 12))), [0, 1], [1, 2])


class TestGradients:
    def test_block_64bit(self):
        fn, tensors = block_case(0, np.float64)
        assert grad_check(fn, tensors, h=1e-5, max_coords=40, rng=np.random.default_rng(0)) < 1e-5

    def test_block_32bit(self):
        fn, tensors = block_case(0, np.float32)
        assert grad_check(fn, tensors, h=1e-2, max_coords=40, rng=np.random.default_rng(0)) < 1e-3

    def test_toy_encoder_32bit(self):
        assert TOY_ENCODER.depth == 2
        fn, tensors = encoder_case(0, np.float32)
        assert grad_check(fn, tensors, h=1e-2, max_coords=40, rng=np.random.default_rng(0)) < 1e-3
