import math
from dataclasses import replace

import numpy as np
import pytest

from vjepa_fer.autodiff import tensor as T
from vjepa_fer.autodiff.checkpoint import load_checkpoint
from vjepa_fer.autodiff.tensor import Tensor
from vjepa_fer.errors import NumericError, ProtocolError
from vjepa_fer.jepa import (
    EmaSchedule, JepaModel, PretrainConfig, ema_update, jepa_loss, load_jepa, make_optimizer, pretrain_run,
)
from vjepa_fer.videodata.augment import AugmentConfig
from vjepa_fer.videodata.synthetic import SynthConfig, gen_synthetic
from vjepa_fer.vit import EncoderConfig, PredictorConfig, TubeMask, TubeletConfig, gen_tube_mask

ENC = EncoderConfig(frames=4, img_size=16, tubelet=TubeletConfig(2, 4, 4), embed_dim=12, depth=1, heads=2,
                    mlp_ratio=2.0)
PRED = PredictorConfig(pred_dim=6, depth=1, heads=2, mlp_ratio=2.0)
AUG = AugmentConfig(target_size=(16, 16))
CFG = PretrainConfig(steps=4, batch_size=2, lr=1e-3, mask_block=(2, 2), clip_length=4, frame_skip=2, seed=3,
                     collapse_every=2)


@pytest.fixture(scope="module")
def tiny_records(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg = SynthConfig(num_subjects=5, videos_per_subject_class=1, min_frames=8, max_frames=12, size=16)
    return gen_synthetic(out, cfg)[1]


def clip_and_mask(seed=0):
    rng = np.random.default_rng(seed)
    clip = rng.standard_normal((4, 16, 16, 3)).astype(np.float32)
    return clip, gen_tube_mask(ENC.grid, 0.75, (2, 2), rng)


class TestJepaLoss:
    def test_stop_gradient(self):
        model = JepaModel(ENC, PRED, seed=0)
        out = jepa_loss(model, *clip_and_mask())
        T.backward(out.loss)
        assert all(p.grad is None and not p.requires_grad for p in model.target.parameters())
        assert any(p.grad is not None and np.abs(p.grad).max() > 0 for p in model.encoder.parameters())
        assert any(p.grad is not None and np.abs(p.grad).max() > 0 for p in model.predictor.parameters())

    def test_zero_when_prediction_equals_target(self):
        model = JepaModel(ENC, PRED, seed=0)
        out = jepa_loss(model, *clip_and_mask())
        assert T.l1_loss(Tensor(out.target.data), out.target).item() == 0.0
        assert out.loss.item() > 0

    def test_shapes(self):
        model = JepaModel(ENC, PRED, seed=0)
        out = jepa_loss(model, *clip_and_mask())
        assert out.pred.shape == out.target.shape == (out.masked.size, 12)
        assert out.masked.size + out.visible.size == ENC.num_tokens

    def test_bit_reproducible(self):
        a = jepa_loss(JepaModel(ENC, PRED, seed=5), *clip_and_mask(2)).loss.data
        b = jepa_loss(JepaModel(ENC, PRED, seed=5), *clip_and_mask(2)).loss.data
        assert a.tobytes() == b.tobytes()

    def test_empty_mask_rejected(self):
        model = JepaModel(ENC, PRED)
        mask = TubeMask(np.zeros((4, 4), dtype=bool), ENC.grid)
        with pytest.raises(ProtocolError):
            jepa_loss(model, clip_and_mask()[0], mask)


class TestEma:
    def params(self, *vals):
        return [Tensor(np.array(v, dtype=np.float64)) for v in vals]

    def test_fixed_point(self):
        t, o = self.params([1.0, 2.0]), self.params([5.0, 6.0])
        ema_update(t, o, 1.0)
        np.testing.assert_array_equal(t[0].data, [1.0, 2.0])

    def test_copy(self):
        t, o = self.params([1.0, 2.0]), self.params([5.0, 6.0])
        ema_update(t, o, 0.0)
        np.testing.assert_array_equal(t[0].data, o[0].data)

    def test_hand_value(self):
        t, o = self.params([1.0]), self.params([0.0])
        ema_update(t, o, 0.99)
        assert t[0].data[0] == pytest.approx(0.99, abs=1e-15)

    @pytest.mark.parametrize("m", [0.9, 0.99, 0.998])
    def test_contraction_step_count(self, m):
        rng = np.random.default_rng(0)
        online = self.params(rng.standard_normal(10))
        target = self.params(online[0].data + rng.uniform(-1, 1, 10))
        delta0 = np.abs(target[0].data - online[0].data).max()
        predicted = math.ceil(math.log(1e-6 / delta0) / math.log(m))
        steps = 0
        while np.abs(target[0].data - online[0].data).max() >= 1e-6:
            ema_update(target, online, m)
            steps += 1
        assert abs(steps - predicted) <= 1

    def test_schedule_endpoints(self):
        s = EmaSchedule(200)
        assert s.momentum(0) == 0.998
        assert s.momentum(199) == 1.0
        assert s.momentum(100) == pytest.approx(0.998 + 0.002 * 100 / 199)


class TestPretrain:
    def test_run_logs_and_checkpoint(self, tiny_records, tmp_path):
        model = JepaModel(ENC, PRED, seed=0)
        res = pretrain_run(model, tiny_records, CFG, AUG, tmp_path)
        assert len(res.losses) == 4
        assert res.momenta[0] == 0.998 and res.momenta[-1] == 1.0
        lines = (tmp_path / "loss.csv").read_text().splitlines()
        assert lines[0] == "step,loss,momentum" and len(lines) == 5
        arrays = load_checkpoint(tmp_path / "checkpoint.vjfc")
        assert {"encoder.patch.proj.weight", "target.norm.gain", "predictor.mask_token",
                "optim.step", "pretrain.step"} <= set(arrays)
        assert int(arrays["optim.step"][0]) == 4
        assert all(v > 1e-4 for _, v in res.embedding_var)

    def test_checkpoint_round_trip_next_step(self, tiny_records, tmp_path):
        model = JepaModel(ENC, PRED, seed=0)
        opt = make_optimizer(model, CFG)
        short = replace(CFG, steps=2)
        pretrain_run(model, tiny_records, short, AUG, tmp_path, optimizer=opt)
        restored = load_jepa(tmp_path / "checkpoint.vjfc", ENC, PRED)
        assert restored.checksum() == model.checksum()
        ropt = make_optimizer(restored, CFG)
        names = [n for n, _ in restored.trainable_named()]
        ropt.load_state_arrays(names, load_checkpoint(tmp_path / "checkpoint.vjfc"))
        a = pretrain_run(model, tiny_records, CFG, AUG, optimizer=opt, start_step=2)
        b = pretrain_run(restored, tiny_records, CFG, AUG, optimizer=ropt, start_step=2)
        assert a.losses == b.losses
        assert restored.checksum() == model.checksum()

    def test_deterministic(self, tiny_records):
        runs = [pretrain_run(JepaModel(ENC, PRED, seed=1), tiny_records, CFG, AUG).losses for _ in range(2)]
        assert runs[0] == runs[1]

    def test_non_finite_aborts(self, tiny_records):
        model = JepaModel(ENC, PRED, seed=0)
        model.encoder.patch.proj.weight.data[...] = np.nan
        with pytest.raises(NumericError):
            pretrain_run(model, tiny_records, CFG, AUG)

    def test_empty_dataset(self):
        with pytest.raises(ProtocolError):
            pretrain_run(JepaModel(ENC, PRED), [], CFG, AUG)
