"""Tests for the training arms."""
import numpy as np
import pytest

from twohead.config.constants import CleanEncoderPolicy, TrainMode
from twohead.core.exceptions import ConfigInconsistencyError
from twohead.core.model import init_params
from twohead.numerics import RngState
from twohead.training import ResultsManager, Trainer, train_clean_encoder
from twohead.utils.helpers import file_sha256
from fixtures.sample_data import tiny_dataset, tiny_settings

# 3 classes x 8 training samples, batches of 8, 2 epochs, PGD-2
BATCHES = 3


@pytest.fixture
def clean(settings, dataset):
    train, _ = dataset
    return train_clean_encoder(train, settings)


def _run(tmp_path, mode, clean=None, results=None, **train):
    settings = tiny_settings(tmp_path, train={"mode": mode, **train})
    tr, te = tiny_dataset(settings)
    return Trainer(settings, results).train(tr, te, clean)


class TestPassAccounting:
    def test_standard_spends_k_plus_one_per_batch(self, tmp_path, clean):
        _, metrics = _run(tmp_path, TrainMode.THAT, clean)
        assert metrics.passes == 2 * BATCHES * (2 + 1)
        assert metrics.weight_updates == 2 * BATCHES

    def test_free_spends_m_per_batch(self, tmp_path, clean):
        _, metrics = _run(tmp_path, TrainMode.FREE_THAT, clean, replays=2)
        assert len(metrics.epochs) == 1
        assert metrics.passes == 1 * BATCHES * 2
        assert metrics.weight_updates == metrics.passes

    def test_free_rounds_passes_up(self, tmp_path):
        _, metrics = _run(tmp_path, TrainMode.FREE_AT, epochs=3, replays=2)
        assert len(metrics.epochs) == 2
        assert metrics.passes == 2 * BATCHES * 2

    def test_natural_matches_free_with_one_replay(self, tmp_path):
        _, natural = _run(tmp_path, TrainMode.NATURAL)
        _, free = _run(tmp_path, TrainMode.FREE_AT, replays=1)
        assert natural.passes == free.passes == 2 * BATCHES

    def test_bank_receives_every_training_sample(self, tmp_path, clean):
        _, metrics = _run(tmp_path, TrainMode.THAT, clean)
        assert metrics.samples_pushed == 2 * 24

    def test_no_bank_without_contrastive_term(self, tmp_path):
        _, metrics = _run(tmp_path, TrainMode.THAT_NO_CL)
        assert metrics.samples_pushed == 0


class TestTrainer:
    @pytest.mark.parametrize("mode", [TrainMode.THAT, TrainMode.NATURAL_CON, TrainMode.FREE_THAT])
    def test_contrastive_modes_need_clean_encoder(self, tmp_path, mode):
        with pytest.raises(ConfigInconsistencyError):
            _run(tmp_path, mode)

    def test_epoch_records(self, tmp_path, clean):
        _, metrics = _run(tmp_path, TrainMode.THAT, clean)
        assert [r.epoch for r in metrics.epochs] == [0, 1]
        assert [r.lr for r in metrics.epochs] == pytest.approx([0.05, 0.005])
        last = metrics.final
        assert last.loss_nce > 0 and last.loss_cl > 0
        assert last.loss_ce == 0.0 and last.loss_kl == 0.0
        assert 0.0 <= last.robust_acc <= 1.0
        assert last.passes == metrics.passes

    def test_kl_arm_reports_kl(self, tmp_path):
        _, metrics = _run(tmp_path, TrainMode.STANDARD_AT_KL)
        assert metrics.final.loss_kl >= -1e-6
        assert metrics.final.loss_ce > 0.0

    def test_frozen_clean_encoder_is_untouched(self, tmp_path, clean):
        params, _ = _run(tmp_path, TrainMode.THAT, clean)
        for name, value in clean.items():
            np.testing.assert_array_equal(params.clean[name], value)

    def test_momentum_clean_encoder_moves(self, tmp_path, clean):
        params, _ = _run(tmp_path, TrainMode.THAT, clean, clean_policy=CleanEncoderPolicy.MOMENTUM,
                         clean_momentum=0.5)
        assert not np.array_equal(params.clean["cls.w"], clean["cls.w"])

    def test_robust_weights_change(self, tmp_path, clean, settings):
        params, _ = _run(tmp_path, TrainMode.THAT, clean)
        start = init_params(settings.model, RngState(0).derive("init"), settings.loss.eta_init)
        assert not np.array_equal(params.robust["cls.w"], start.robust["cls.w"])
        assert not np.array_equal(params.robust["cls.log_eta"], start.robust["cls.log_eta"])

    def test_ablation_keeps_projection_head(self, tmp_path, settings):
        params, _ = _run(tmp_path, TrainMode.THAT_NO_CL)
        start = init_params(settings.model, RngState(0).derive("init"), settings.loss.eta_init)
        np.testing.assert_array_equal(params.robust["feat.0.w"], start.robust["feat.0.w"])

    def test_metadata(self, tmp_path, clean):
        params, _ = _run(tmp_path, TrainMode.THAT, clean, seed=3)
        assert params.metadata["mode"] == "that"
        assert params.metadata["seed"] == "3"


class TestCleanEncoder:
    def test_projection_head_keeps_its_init(self, settings, dataset):
        train, _ = dataset
        weights = train_clean_encoder(train, settings)
        start = init_params(settings.model, RngState(settings.train.seed).derive("init"),
                            settings.loss.eta_init).clean
        for name in ("feat.0.w", "feat.1.w"):
            np.testing.assert_array_equal(weights[name], start[name])
        assert not np.array_equal(weights["base.0.w"], start["base.0.w"])
        assert "cls.log_eta" not in weights

    def test_deterministic(self, settings, dataset):
        train, _ = dataset
        a, b = train_clean_encoder(train, settings), train_clean_encoder(train, settings)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])


class TestResults:
    def test_checkpoints_and_metrics(self, tmp_path, clean):
        results = ResultsManager(tmp_path / "run")
        _run(tmp_path, TrainMode.THAT, clean, results=results)
        for tag in ("epoch_000", "epoch_001", "best", "final"):
            assert results.checkpoint_path(tag).exists()
        frame = results.load_metrics()
        assert list(frame.columns) == ["epoch", "lr", "loss_cl", "loss_nce", "loss_ce", "loss_kl",
                                       "clean_acc", "robust_acc@2", "passes", "wall_clock"]
        assert len(frame) == 2
        restored = results.load_checkpoint("final")
        assert restored.bank is not None and restored.bank.capacity == 16
        assert restored.params.metadata["epoch"] == "1"

    def test_same_seed_same_bytes(self, tmp_path, clean):
        first, second = ResultsManager(tmp_path / "a"), ResultsManager(tmp_path / "b")
        _run(tmp_path, TrainMode.THAT, clean, results=first)
        _run(tmp_path, TrainMode.THAT, clean, results=second)
        assert file_sha256(first.checkpoint_path("final")) == file_sha256(second.checkpoint_path("final"))

    def test_different_seed_different_bytes(self, tmp_path):
        first, second = ResultsManager(tmp_path / "a"), ResultsManager(tmp_path / "b")
        _run(tmp_path, TrainMode.THAT_NO_CL, results=first, seed=0)
        _run(tmp_path, TrainMode.THAT_NO_CL, results=second, seed=1)
        assert file_sha256(first.checkpoint_path("final")) != file_sha256(second.checkpoint_path("final"))
