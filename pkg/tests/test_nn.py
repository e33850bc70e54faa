import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thinice import nn
from thinice.errors import CheckpointError, ShapeError, UnsupportedError
from thinice.nn import LayerSpec, build_network, build_preset, forward, load_checkpoint, save_checkpoint


def _mlp(seed=5):
    return build_network([LayerSpec.dense(2, 16), LayerSpec("relu"), LayerSpec.dense(16, 2)], seed)


class TestBuild:
    def test_same_seed_same_parameters(self):
        a, b = _mlp(), _mlp()
        assert all(p.data.tobytes() == q.data.tobytes() for p, q in zip(a.params, b.params))

    def test_fresh_network_is_dense(self):
        assert nn.sparsity(_mlp()) == 0.0

    def test_conv_channel_mismatch(self):
        layers = [LayerSpec.conv(1, 4, 3, 3), LayerSpec.conv(3, 4, 3, 3)]
        with pytest.raises(ShapeError):
            build_network(layers, 0, (1, 8, 8))

    def test_dense_dims_must_compose(self):
        with pytest.raises(ShapeError):
            build_network([LayerSpec.dense(2, 4), LayerSpec.dense(5, 2)], 0)

    @pytest.mark.parametrize("name,shape,classes", [("mlp-2x64", None, 2), ("cnn-tiny", (1, 8, 8), 3)])
    def test_presets(self, name, shape, classes):
        net = build_preset(name, classes, seed=0, input_shape=shape)
        x = np.zeros((4,) + net.input_shape, dtype=np.float32)
        assert nn.logits_of(net, x).shape == (4, classes)


class TestForward:
    def test_mask_equals_zeroed_theta(self):
        net = _mlp()
        x = np.random.default_rng(0).uniform(size=(6, 2)).astype(np.float32)
        masked, zeroed = net.copy(), net.copy()
        m = np.ones((2, 16), dtype=np.float32)
        m[0, 3] = m[1, 7] = 0
        masked.masks[0] = nn.Tensor(m)
        zeroed.params[0].data[0, 3] = zeroed.params[0].data[1, 7] = 0
        np.testing.assert_array_equal(nn.logits_of(masked, x), nn.logits_of(zeroed, x))

    def test_all_zero_masks_give_constant_logits(self):
        net = _mlp()
        net.params[1].data[:] = np.linspace(-1, 1, 16)
        net.params[3].data[:] = [0.3, -0.2]
        net.set_masks([np.zeros((2, 16)), np.zeros((16, 2))])
        out = nn.logits_of(net, np.random.default_rng(0).uniform(size=(5, 2)))
        np.testing.assert_array_equal(out, np.tile(np.float32([0.3, -0.2]), (5, 1)))

    def test_deterministic(self):
        net = _mlp()
        x = np.random.default_rng(1).uniform(size=(8, 2)).astype(np.float32)
        assert nn.logits_of(net, x).tobytes() == nn.logits_of(net, x).tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            forward(_mlp(), np.zeros((3, 5), dtype=np.float32))

    def test_apply_masks_idempotent(self):
        net = _mlp()
        net.set_masks([np.random.default_rng(0).integers(0, 2, size=(2, 16)), np.ones((16, 2))])
        once = [p.data.copy() for p in net.params]
        net.apply_masks()
        assert all(np.array_equal(a, p.data) for a, p in zip(once, net.params))


class TestPredictAndLosses:
    def test_argmax(self):
        assert nn.predict_logits([0.2, 0.9]) == 1

    def test_tie_goes_to_smaller_index(self):
        assert nn.predict_logits([0.5, 0.5]) == 0

    def test_margin_positive(self):
        assert float(nn.surrogate_loss("margin", [3.0, 1.0, 0.0], 0).data) == 2.0

    def test_margin_negative(self):
        assert float(nn.surrogate_loss("margin", [1.0, 3.0, 0.0], 0).data) == -2.0

    def test_dlr(self):
        assert abs(float(nn.surrogate_loss("dlr", [3.0, 2.0, 1.0], 0).data) + 0.5) < 1e-6

    def test_dlr_needs_three_classes(self):
        with pytest.raises(UnsupportedError):
            nn.surrogate_loss("dlr", [1.0, 2.0], 0)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, (8, 4), elements=st.integers(-3, 3).map(float)))
    def test_margin_sign_matches_prediction(self, z):
        y = np.arange(8) % 4
        m = nn.margin_values(z, y)
        correct = nn.predict_logits(z) == y
        assert correct[m > 0].all() and not correct[m < 0].any()
        # at margin 0 the label ties the runner-up; it wins only as the smaller index
        tied = m == 0
        smallest = np.array([np.flatnonzero(row == row.max())[0] for row in z]) == y
        assert (correct[tied] == smallest[tied]).all()

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 5, elements=st.floats(-10, 10)), st.floats(-50, 50), st.floats(0.1, 10))
    def test_dlr_shift_and_scale_invariant(self, z, shift, scale):
        if np.sort(z)[-1] - np.sort(z)[-3] < 1e-3:
            return
        base = float(nn.surrogate_loss("dlr", z, 1).data)
        moved = float(nn.surrogate_loss("dlr", z * scale + shift, 1).data)
        assert abs(base - moved) < 1e-4 * max(1.0, abs(base))


class TestSparsity:
    def _net_100(self):
        return build_network([LayerSpec.dense(10, 10)], 0)

    @pytest.mark.parametrize("zeros,expected", [(90, 0.90), (95, 0.95), (0, 0.0)])
    def test_counting(self, zeros, expected):
        net = self._net_100()
        m = np.ones(100)
        m[:zeros] = 0
        net.set_masks([m.reshape(10, 10)])
        assert nn.sparsity(net) == expected

    def test_non_binary_mask_rejected(self):
        with pytest.raises(ValueError):
            self._net_100().set_masks([np.full((10, 10), 0.5)])


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        net = build_preset("cnn-tiny", 3, seed=2, input_shape=(1, 8, 8))
        masks = [(np.random.default_rng(i).uniform(size=net.params[j].shape) > 0.3)
                 for i, j in enumerate(net.weight_indices)]
        net.set_masks(masks)
        save_checkpoint(net, tmp_path / "ck", provenance="test")
        back = load_checkpoint(tmp_path / "ck")
        for a, b in zip(net.params + [m for m in net.masks if m is not None],
                        back.params + [m for m in back.masks if m is not None]):
            assert a.data.tobytes() == b.data.tobytes()
        x = np.random.default_rng(9).uniform(size=(4, 1, 8, 8)).astype(np.float32)
        assert nn.logits_of(net, x).tobytes() == nn.logits_of(back, x).tobytes()
        with open(tmp_path / "ck" / "manifest.json") as fh:
            manifest = json.load(fh)
        assert manifest["sparsity"] == nn.sparsity(net)
        assert {"arch", "seed", "classes", "sparsity", "provenance"} <= set(manifest)

    def test_truncated_payload(self, tmp_path):
        save_checkpoint(_mlp(), tmp_path / "ck")
        path = tmp_path / "ck" / "param_0.tnsr"
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "ck")

    def test_missing_tensor_file(self, tmp_path):
        save_checkpoint(_mlp(), tmp_path / "ck")
        os.remove(tmp_path / "ck" / "mask_0.tnsr")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "ck")

    def test_corrupt_manifest(self, tmp_path):
        save_checkpoint(_mlp(), tmp_path / "ck")
        (tmp_path / "ck" / "manifest.json").write_text("{not json")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "ck")

    def test_float64_params_refused(self, tmp_path):
        net = build_preset("mlp-2x64", 2, seed=0, dtype=np.float64)
        with pytest.raises(CheckpointError):
            save_checkpoint(net, tmp_path / "ck")
        assert not os.path.exists(tmp_path / "ck")
