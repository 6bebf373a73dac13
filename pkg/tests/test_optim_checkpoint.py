import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vjepa_fer.autodiff import tensor as T
from vjepa_fer.autodiff.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from vjepa_fer.autodiff.nn import LayerNorm, Linear, Module
from vjepa_fer.autodiff.optim import AdamW, optimizer_step
from vjepa_fer.autodiff.tensor import Tensor
from vjepa_fer.errors import DimensionError, FormatError, UsageError


def scalar_param(v):
    return Tensor(np.array([v], dtype=np.float64), requires_grad=True)


class TestAdamW:
    def test_zero_grad_no_decay_is_noop(self):
        w = Tensor(np.array([1.0, -2.0], dtype=np.float64), requires_grad=True)
        opt = AdamW([w], lr=0.1)
        for _ in range(3):
            w.grad = np.zeros(2)
            optimizer_step([w], opt)
        np.testing.assert_array_equal(w.data, [1.0, -2.0])

    def test_first_step_is_lr(self):
        # bias-corrected moments are exactly g and g², so the step is lr·g/(|g|+eps)
        w = scalar_param(0.0)
        opt = AdamW([w], lr=0.1)
        w.grad = np.ones(1)
        opt.step()
        assert w.data[0] == pytest.approx(-0.1, abs=1e-8)

    def test_quadratic_bowl(self):
        w = scalar_param(1.0)
        opt = AdamW([w], lr=0.05)
        for _ in range(500):
            opt.zero_grad()
            T.backward(T.sum_all(T.mul(w, w)))
            opt.step()
        assert abs(w.data[0]) < 1e-3

    def test_decoupled_decay(self):
        w = scalar_param(2.0)
        keep = scalar_param(2.0)
        opt = AdamW([w, keep], lr=0.1, weight_decay=0.5, no_decay=[keep])
        w.grad = np.zeros(1)
        keep.grad = np.zeros(1)
        opt.step()
        assert w.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))
        assert keep.data[0] == 2.0

    def test_missing_grad(self):
        w = scalar_param(0.0)
        with pytest.raises(UsageError):
            AdamW([w]).step()

    def test_state_round_trip(self):
        w = Tensor(np.arange(3.0), requires_grad=True)
        opt = AdamW([w], lr=0.01)
        w.grad = np.ones(3, dtype=np.float32)
        opt.step()
        arrays = opt.state_arrays(["w"])
        fresh = AdamW([Tensor(np.arange(3.0), requires_grad=True)])
        fresh.load_state_arrays(["w"], arrays)
        assert fresh.state.step == 1
        np.testing.assert_array_equal(fresh.state.exp_avg[0], opt.state.exp_avg[0])


class Tiny(Module):
    def __init__(self, rng):
        self.fc = Linear(3, 2, rng)
        self.blocks = [LayerNorm(2), LayerNorm(2)]
        self._cache = Tensor([0.0])

    def forward(self, x):
        return self.blocks[1](self.blocks[0](self.fc(x)))


class TestModule:
    def test_parameter_names(self):
        names = [n for n, _ in Tiny(np.random.default_rng(0)).named_parameters("m.")]
        assert names == ["m.fc.weight", "m.fc.bias", "m.block0.gain", "m.block0.bias",
                         "m.block1.gain", "m.block1.bias"]

    def test_state_dict_round_trip(self):
        a, b = Tiny(np.random.default_rng(0)), Tiny(np.random.default_rng(1))
        assert a.checksum() != b.checksum()
        b.load_state_dict(a.state_dict())
        assert a.checksum() == b.checksum()

    def test_load_shape_mismatch(self):
        m = Tiny(np.random.default_rng(0))
        arrays = m.state_dict()
        arrays["fc.weight"] = np.zeros((2, 2))
        with pytest.raises(DimensionError):
            m.load_state_dict(arrays)

    def test_clone_is_independent(self):
        m = Tiny(np.random.default_rng(0))
        c = m.clone()
        c.fc.weight.data += 1
        assert m.checksum() != c.checksum()


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b.c": np.array([1.5]),
                  "step": np.array([7], dtype=np.int64), "s": np.float32(2.0) * np.ones(())}
        save_checkpoint(tmp_path / "x.vjfc", arrays)
        back = load_checkpoint(tmp_path / "x.vjfc")
        assert list(back) == list(arrays)
        for k in arrays:
            assert back[k].dtype == np.asarray(arrays[k]).dtype
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_header_layout(self):
        buf = encode_checkpoint({"w": np.zeros((2, 1), dtype=np.float32)})
        assert buf[:4] == b"VJFC"
        assert struct.unpack("<II", buf[4:12]) == (1, 1)
        assert struct.unpack("<H", buf[12:14]) == (1,)
        assert buf[15:17] == bytes([0, 2])

    def test_truncated(self):
        buf = encode_checkpoint({"w": np.ones(4, dtype=np.float32)})
        with pytest.raises(FormatError) as err:
            decode_checkpoint(buf[:-3])
        assert err.value.offset > 0

    def test_bad_magic_and_trailing(self):
        buf = encode_checkpoint({"w": np.ones(1, dtype=np.float32)})
        with pytest.raises(FormatError):
            decode_checkpoint(b"XXXX" + buf[4:])
        with pytest.raises(FormatError):
            decode_checkpoint(buf + b"\0")

    def test_failed_write_leaves_no_file(self, tmp_path):
        with pytest.raises(Exception):
            save_checkpoint(tmp_path / "y.vjfc", {"w": object()})
        assert list(tmp_path.iterdir()) == []

    @given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=4),
                      elements=st.floats(-1e6, 1e6, width=32)))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, arr):
        back = decode_checkpoint(encode_checkpoint({"t": arr}))["t"]
        assert back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()
