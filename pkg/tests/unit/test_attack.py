"""Tests for FGSM and PGD."""
import numpy as np
import pytest

from twohead.config import AttackConfig
from twohead.config.constants import AttackLoss, NormType
from twohead.core.attack import draw_targets, fgsm_attack, input_gradient_fn, pgd_attack, project
from twohead.core.exceptions import ConfigInconsistencyError, InvalidLabelError
from twohead.numerics import RngState


@pytest.fixture
def batch():
    rng = RngState(11)
    return rng.uniform(0.0, 1.0, (6, 12), dtype=np.float32), np.array([0, 1, 2, 0, 1, 2])


def _within_ball(adv, x, cfg):
    diff = adv.astype(np.float64) - x.astype(np.float64)
    if cfg.norm is NormType.LINF:
        return bool(np.all(np.abs(diff) <= cfg.eps))
    return bool(np.all(np.linalg.norm(diff.reshape(len(x), -1), axis=1) <= cfg.eps))


def test_project_linf_and_l2():
    np.testing.assert_array_equal(project(np.array([0.3, -0.7, 0.1]), 0.5, NormType.LINF), [0.3, -0.5, 0.1])
    np.testing.assert_allclose(project(np.array([3.0, 4.0]), 1.0, NormType.L2), [0.6, 0.8])
    np.testing.assert_array_equal(project(np.array([0.3, 0.4]), 1.0, NormType.L2), [0.3, 0.4])


@pytest.mark.parametrize("norm", [NormType.LINF, NormType.L2])
def test_pgd_respects_threat_model(params, batch, norm):
    x, y = batch
    cfg = AttackConfig.in_pixels(0.125, 0.05, steps=5, norm=norm, chunk_size=4)
    adv = pgd_attack(x, y, params, None, cfg, RngState(0))
    assert adv.shape == x.shape and adv.dtype == np.float32
    assert _within_ball(adv, x, cfg)
    assert adv.min() >= 0.0 and adv.max() <= 1.0


def test_pgd_on_dyadic_grid(params):
    x = np.full((3, 12), 0.5, dtype=np.float32)
    cfg = AttackConfig.in_pixels(0.125, 0.125, steps=3)
    adv = pgd_attack(x, np.array([0, 1, 2]), params, None, cfg, RngState(2))
    assert np.all(np.abs(adv.astype(np.float64) - 0.5) <= 0.125)


def test_fgsm_is_one_signed_step(params):
    x = np.full((2, 12), 0.5, dtype=np.float32)
    y = np.array([1, 2])
    cfg = AttackConfig.in_pixels(0.125, steps=7)
    adv = fgsm_attack(x, y, params, cfg)
    g = input_gradient_fn(params.robust, params.arch, cfg.loss, y)(x.astype(np.float64))
    np.testing.assert_array_equal(adv, (0.5 + 0.125 * np.sign(g)).astype(np.float32))


def test_single_sample_keeps_shape(params):
    x = np.full(12, 0.5, dtype=np.float32)
    adv = pgd_attack(x, 1, params, AttackLoss.CE, AttackConfig(steps=2), RngState(0))
    assert adv.shape == (12,)


def test_same_seed_same_attack(params, batch):
    x, y = batch
    cfg = AttackConfig(steps=3)
    np.testing.assert_array_equal(pgd_attack(x, y, params, None, cfg, RngState(5)),
                                  pgd_attack(x, y, params, None, cfg, RngState(5)))


def test_thread_count_does_not_change_result(params, batch):
    x, y = batch
    cfg = AttackConfig(steps=3, chunk_size=2)
    serial = pgd_attack(x, y, params, None, cfg, RngState(3), threads=1)
    parallel = pgd_attack(x, y, params, None, cfg, RngState(3), threads=3)
    np.testing.assert_array_equal(serial, parallel)


def test_sample_ids_fix_the_random_start(params, batch):
    x, y = batch
    cfg = AttackConfig(steps=2, chunk_size=2)
    whole = pgd_attack(x, y, params, None, cfg, RngState(4))
    tail = pgd_attack(x[2:], y[2:], params, None, cfg, RngState(4), ids=np.arange(2, 6))
    np.testing.assert_array_equal(whole[2:], tail)


@pytest.mark.parametrize("loss", [AttackLoss.CE, AttackLoss.NCE, AttackLoss.FEATURE])
def test_every_attack_loss_runs(params, batch, loss):
    x, y = batch
    cfg = AttackConfig(steps=2, loss=loss)
    assert _within_ball(pgd_attack(x, y, params, loss, cfg, RngState(0)), x, cfg)


def test_targeted_feature_attack_rejected(params, batch):
    x, y = batch
    with pytest.raises(ConfigInconsistencyError):
        pgd_attack(x, y, params, AttackLoss.FEATURE, AttackConfig(mode="targeted"), RngState(0))


def test_targeted_attack_stays_in_ball(params, batch):
    x, y = batch
    cfg = AttackConfig(steps=3, mode="targeted")
    assert _within_ball(pgd_attack(x, y, params, AttackLoss.CE, cfg, RngState(0)), x, cfg)


def test_targets_differ_from_labels():
    y = np.tile(np.arange(4), 25)
    targets = draw_targets(y, 4, RngState(0), range(len(y)))
    assert np.all(targets != y)
    assert set(targets) == {0, 1, 2, 3}


def test_invalid_label(params, batch):
    x, _ = batch
    with pytest.raises(InvalidLabelError):
        pgd_attack(x, np.full(6, 3), params, None, AttackConfig(steps=1), RngState(0))


@pytest.fixture(scope="module")
def many_samples():
    rng = RngState(21)
    x = rng.uniform(0.0, 1.0, (1000, 12), dtype=np.float32)
    x[:100] = np.round(x[:100])
    return x, np.arange(1000) % 3


@pytest.mark.parametrize("steps", [1, 10, 200])
@pytest.mark.parametrize("mode", ["untargeted", "targeted"])
@pytest.mark.parametrize("norm", [NormType.LINF, NormType.L2])
def test_constraints_hold_for_every_sample(params, many_samples, norm, mode, steps):
    x, y = many_samples
    cfg = AttackConfig.in_pixels(0.125, 0.05, steps=steps, norm=norm, mode=mode, chunk_size=250)
    adv = pgd_attack(x, y, params, AttackLoss.CE, cfg, RngState(9))
    assert adv.dtype == np.float32
    assert _within_ball(adv, x, cfg)
    assert adv.min() >= 0.0 and adv.max() <= 1.0
    if steps == 10:
        again = pgd_attack(x, y, params, AttackLoss.CE, cfg, RngState(9))
        assert adv.tobytes() == again.tobytes()
