"""Tests for the two-head encoder, checkpoints and the memory bank."""
import numpy as np
import pytest

from twohead.core.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from twohead.core.exceptions import CheckpointFormatError, DimMismatchError, ShapeMismatchError
from twohead.core.membank import MemoryBank, duplicate_mask, init_bank, push_batch
from twohead.core.model import (
    CLASSIFIER,
    LOG_ETA,
    clean_forward,
    encode,
    eta,
    init_params,
    momentum_update,
    parameter_shapes,
    robust_forward,
)
from twohead.numerics import RngState, Tensor, grad


class TestEncoder:
    def test_robust_weights_carry_eta(self, params):
        assert LOG_ETA in params.robust
        assert LOG_ETA not in params.clean
        assert eta(params.robust) == pytest.approx(1 / 30, rel=1e-6)
        assert eta(params.clean) is None

    def test_shapes_follow_architecture(self, arch, params):
        for name, shape, _ in parameter_shapes(arch, robust=True):
            assert params.robust[name].shape == shape
            assert params.robust[name].dtype == np.float32

    def test_init_is_seed_deterministic(self, arch):
        a, b = init_params(arch, RngState(5)), init_params(arch, RngState(5))
        for name in a.robust:
            np.testing.assert_array_equal(a.robust[name], b.robust[name])

    def test_clean_and_robust_start_apart(self, params):
        assert not np.array_equal(params.clean[CLASSIFIER], params.robust[CLASSIFIER])

    def test_features_are_unit_norm(self, arch, params):
        x = RngState(1).uniform(0, 1, (5, 12))
        u, z = robust_forward(x, params)
        assert u.shape == (5, arch.feat_dim)
        assert z.shape == (5, arch.num_classes)
        np.testing.assert_allclose(np.linalg.norm(u.numpy(), axis=1), 1.0, atol=1e-5)
        np.testing.assert_allclose(np.linalg.norm(clean_forward(x, params).numpy(), axis=1), 1.0, atol=1e-5)

    def test_zero_input_gives_unit_features(self, params):
        u, z = robust_forward(np.zeros(12), params)
        v = clean_forward(np.zeros(12), params)
        expected = np.eye(8, dtype=np.float32)[0]
        np.testing.assert_allclose(u.numpy(), expected, atol=1e-6)
        np.testing.assert_allclose(v.numpy(), expected, atol=1e-6)
        np.testing.assert_array_equal(z.numpy(), np.zeros(3))

    def test_dead_trunk_gives_unit_features(self, params):
        params.robust["base.0.b"] = np.full(16, -100.0, dtype=np.float32)
        x = RngState(1).uniform(0, 1, (4, 12))
        u, _ = robust_forward(x, params)
        np.testing.assert_allclose(np.linalg.norm(u.numpy(), axis=1), 1.0, atol=1e-6)

    def test_zero_input_gradient_is_finite(self, params):
        def feature_sum(x):
            return robust_forward(x, params)[0].sum()

        (g,) = grad(feature_sum, [Tensor(np.zeros((2, 12)))])
        assert np.isfinite(g.numpy()).all()

    def test_classifier_perturbation_leaves_feature(self, params):
        x = RngState(3).uniform(0, 1, (6, 12))
        u, z = robust_forward(x, params)
        params.robust[CLASSIFIER] = params.robust[CLASSIFIER] + 0.5
        u2, z2 = robust_forward(x, params)
        np.testing.assert_array_equal(u.numpy(), u2.numpy())
        assert not np.array_equal(z.numpy(), z2.numpy())

    @pytest.mark.parametrize("name", ["feat.0.w", "feat.0.b", "feat.1.w", "feat.1.b"])
    def test_feature_perturbation_leaves_logits(self, params, name):
        x = RngState(3).uniform(0, 1, (6, 12))
        u, z = robust_forward(x, params)
        params.robust[name] = params.robust[name] + 0.25
        u2, z2 = robust_forward(x, params)
        np.testing.assert_array_equal(z.numpy(), z2.numpy())
        assert not np.array_equal(u.numpy(), u2.numpy())

    def test_forward_leaves_weights_writeable(self, params):
        robust_forward(np.ones(12), params)
        clean_forward(np.ones(12), params)
        assert all(w.flags.writeable for w in params.robust.values())
        assert all(w.flags.writeable for w in params.clean.values())
        params.robust[CLASSIFIER][0, 0] = 1.0

    def test_single_sample_is_squeezed(self, params):
        x = RngState(1).uniform(0, 1, (12,))
        u, z = robust_forward(x, params)
        assert u.ndim == 1 and z.ndim == 1

    def test_wrong_input_shape(self, params):
        with pytest.raises(ShapeMismatchError):
            robust_forward(np.zeros((2, 7)), params)

    def test_conv_encoder(self, conv_arch, conv_params):
        x = RngState(2).uniform(0, 1, (3, 1, 4, 4))
        enc = encode(x, conv_params.robust, conv_arch)
        assert enc.logits.shape == (3, 3)
        np.testing.assert_allclose(np.linalg.norm(enc.feature.numpy(), axis=1), 1.0, atol=1e-5)

    def test_missing_weights(self, arch, params):
        weights = dict(params.robust)
        del weights["feat.0.w"]
        with pytest.raises(ShapeMismatchError):
            encode(np.zeros((1, 12)), weights, arch)


class TestMomentumUpdate:
    def test_blend(self, params):
        out = momentum_update(params.clean, params.robust, 0.75)
        expected = 0.75 * params.clean[CLASSIFIER] + 0.25 * params.robust[CLASSIFIER]
        np.testing.assert_allclose(out[CLASSIFIER], expected, rtol=1e-6)
        assert LOG_ETA not in out

    def test_endpoints(self, params):
        np.testing.assert_array_equal(momentum_update(params.clean, params.robust, 1.0)[CLASSIFIER],
                                      params.clean[CLASSIFIER])
        np.testing.assert_array_equal(momentum_update(params.clean, params.robust, 0.0)[CLASSIFIER],
                                      params.robust[CLASSIFIER])

    def test_rejects_out_of_range(self, params):
        with pytest.raises(ValueError):
            momentum_update(params.clean, params.robust, 1.5)


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, params):
        bank = init_bank(8, 8, RngState(3))
        bank.push(RngState(4).normal((3, 8)))
        params.metadata = {"mode": "that", "seed": "7"}
        payload = encode_checkpoint(params, bank)
        restored = decode_checkpoint(payload)
        assert encode_checkpoint(restored.params, restored.bank) == payload
        for name in params.robust:
            np.testing.assert_array_equal(restored.params.robust[name], params.robust[name])
        assert restored.bank.cursor == 3
        assert restored.params.metadata == {"mode": "that", "seed": "7"}
        assert restored.params.arch == params.arch

    def test_conv_round_trip(self, conv_params):
        restored = decode_checkpoint(encode_checkpoint(conv_params))
        assert restored.bank is None
        assert restored.params.arch == conv_params.arch

    def test_file_round_trip(self, tmp_path, params):
        path = save_checkpoint(tmp_path / "a" / "run.ckpt", params)
        assert load_checkpoint(path).params.robust.keys() == params.robust.keys()
        assert not list((tmp_path / "a").glob("*.tmp"))

    def test_bad_magic(self, params):
        payload = encode_checkpoint(params)
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(b"NOPE" + payload[4:])

    def test_truncated(self, params):
        payload = encode_checkpoint(params)
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(payload[:-3])

    def test_trailing_bytes(self, params):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(encode_checkpoint(params) + b"\0")

    def test_wrong_version(self, params):
        payload = bytearray(encode_checkpoint(params))
        payload[4] = 9
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(bytes(payload))


class TestMemoryBank:
    def test_init_full_of_unit_vectors(self):
        bank = init_bank(16, 4, RngState(0))
        assert bank.capacity == 16 and bank.fill == 16 and bank.cursor == 0
        np.testing.assert_allclose(np.linalg.norm(bank.negatives(), axis=1), 1.0, atol=1e-6)

    def test_fifo_overwrites_oldest(self):
        bank = MemoryBank(np.tile(np.array([[1.0, 0.0]], dtype=np.float32), (4, 1)))
        bank.push(np.array([[0.0, 2.0], [0.0, -3.0]]))
        neg = bank.negatives()
        np.testing.assert_array_equal(neg[:2], [[0.0, 1.0], [0.0, -1.0]])
        np.testing.assert_array_equal(neg[2:], [[1.0, 0.0], [1.0, 0.0]])
        assert bank.cursor == 2

    def test_wraps_around(self):
        bank = init_bank(4, 2, RngState(0))
        bank.push(np.ones((3, 2)))
        bank.push(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert bank.cursor == 1
        np.testing.assert_array_equal(bank.negatives()[0], [0.0, 1.0])
        np.testing.assert_array_equal(bank.negatives()[3], [1.0, 0.0])

    def test_batch_larger_than_capacity_keeps_newest(self):
        bank = init_bank(2, 2, RngState(0))
        bank.push(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
        assert bank.cursor == 1
        assert sorted(map(tuple, bank.negatives())) == sorted([(0.0, 1.0), (-1.0, 0.0)])

    def test_dim_mismatch(self):
        bank = init_bank(4, 3, RngState(0))
        with pytest.raises(DimMismatchError):
            bank.push(np.ones((1, 2)))

    def test_capacity_power_of_two(self):
        with pytest.raises(ValueError):
            MemoryBank(np.ones((3, 2)))

    def test_negatives_is_a_snapshot(self):
        bank = init_bank(4, 2, RngState(0))
        snapshot = bank.negatives()
        bank.push(np.ones((4, 2)))
        assert not np.allclose(snapshot, bank.negatives())

    def test_functional_push_leaves_original(self):
        bank = init_bank(4, 2, RngState(0))
        before = bank.negatives()
        updated = push_batch(bank, np.ones((1, 2)))
        np.testing.assert_array_equal(bank.negatives(), before)
        assert updated.cursor == 1

    def test_duplicate_mask(self):
        neg = np.array([[1.0, 0.0], [0.0, 1.0]])
        mask = duplicate_mask(neg, np.array([[1.0, 0.0]]))
        assert mask.tolist() == [[True, False]]
