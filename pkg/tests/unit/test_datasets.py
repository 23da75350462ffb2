"""Tests for dataset ingestion."""
import numpy as np
import pytest

from twohead.config import ArchitectureConfig, DataConfig
from twohead.core.exceptions import (
    BadMagicError,
    ConfigInconsistencyError,
    CountMismatchError,
    InvalidLabelError,
    ShapeMismatchError,
    TruncatedFileError,
)
from twohead.data import DatasetHandle, gen_synthetic, load_dataset, parse_idx, split_train_test, write_idx
from twohead.config.constants import DataSource
from fixtures.sample_data import tiny_conv_arch


@pytest.fixture
def idx_pair(tmp_path):
    images = np.array([[[0, 255], [128, 1]], [[10, 20], [30, 40]], [[255, 255], [0, 0]]], dtype=np.uint8)
    labels = np.array([3, 0, 9])
    return write_idx(images, labels, tmp_path / "img.idx", tmp_path / "lbl.idx"), images, labels


class TestIdx:
    def test_round_trip(self, idx_pair):
        (img_path, lbl_path), images, labels = idx_pair
        data = parse_idx(img_path, lbl_path, num_classes=10)
        assert data.images.dtype == np.float32
        assert data.images.shape == (3, 2, 2)
        np.testing.assert_array_equal(np.rint(data.images * 255).astype(np.uint8), images)
        np.testing.assert_array_equal(data.labels, labels)
        assert data.source is DataSource.IDX

    def test_full_intensity_is_one(self, idx_pair):
        (img_path, lbl_path), _, _ = idx_pair
        data = parse_idx(img_path, lbl_path)
        assert data.images[0, 0, 1] == 1.0
        assert data.images[0, 0, 0] == 0.0
        assert data.num_classes == 10

    def test_float_images_are_quantized(self, tmp_path):
        img, lbl = write_idx(np.full((1, 2, 2), 0.5), [1], tmp_path / "i", tmp_path / "l")
        np.testing.assert_allclose(parse_idx(img, lbl, 2).images, 128 / 255, rtol=1e-6)

    def test_bad_magic(self, idx_pair, tmp_path):
        (img_path, lbl_path), _, _ = idx_pair
        with pytest.raises(BadMagicError):
            parse_idx(lbl_path, lbl_path)

    def test_truncated(self, idx_pair, tmp_path):
        (img_path, lbl_path), _, _ = idx_pair
        short = tmp_path / "short.idx"
        short.write_bytes(img_path.read_bytes()[:-1])
        with pytest.raises(TruncatedFileError):
            parse_idx(short, lbl_path)
        stub = tmp_path / "stub.idx"
        stub.write_bytes(img_path.read_bytes()[:6])
        with pytest.raises(TruncatedFileError):
            parse_idx(stub, lbl_path)

    def test_count_mismatch(self, idx_pair, tmp_path):
        (img_path, _), _, _ = idx_pair
        _, other_labels = write_idx(np.zeros((2, 2, 2), dtype=np.uint8), [0, 1], tmp_path / "a", tmp_path / "b")
        with pytest.raises(CountMismatchError):
            parse_idx(img_path, other_labels)

    def test_write_rejects_flat_images(self, tmp_path):
        with pytest.raises(ShapeMismatchError):
            write_idx(np.zeros((2, 4)), [0, 1], tmp_path / "i", tmp_path / "l")


class TestSynthetic:
    def test_deterministic(self):
        a, b = gen_synthetic(3, 8, 5, seed=1), gen_synthetic(3, 8, 5, seed=1)
        np.testing.assert_array_equal(a.images, b.images)
        assert not np.array_equal(a.images, gen_synthetic(3, 8, 5, seed=2).images)

    def test_balanced_interleaved_and_clipped(self):
        data = gen_synthetic(4, 6, 7, seed=0, noise=1.0)
        assert data.class_counts().tolist() == [7, 7, 7, 7]
        np.testing.assert_array_equal(data.labels[:8], [0, 1, 2, 3, 0, 1, 2, 3])
        assert data.images.min() >= 0.0 and data.images.max() <= 1.0

    def test_nearest_class_mean_separates_defaults(self):
        train, test = load_dataset(DataConfig())
        means = np.stack([train.images[train.labels == c].mean(axis=0) for c in range(train.num_classes)])
        dist = ((test.images[:, None, :] - means[None]) ** 2).sum(axis=2)
        assert (dist.argmin(axis=1) == test.labels).mean() > 0.95


class TestHandle:
    def test_split_every_fifth_per_class(self):
        train, test = split_train_test(gen_synthetic(3, 4, 10, seed=0))
        assert len(train) == 24 and len(test) == 6
        assert test.class_counts().tolist() == [2, 2, 2]
        assert train.split == "train" and test.split == "test"

    def test_label_range_checked(self):
        with pytest.raises(InvalidLabelError):
            DatasetHandle(np.zeros((2, 3)), np.array([0, 5]), 3, DataSource.SYNTHETIC)

    def test_count_checked(self):
        with pytest.raises(CountMismatchError):
            DatasetHandle(np.zeros((2, 3)), np.array([0]), 3, DataSource.SYNTHETIC)

    def test_conform(self, settings):
        train, _ = load_dataset(settings.data)
        assert train.conform(settings.model) is train
        with pytest.raises(ShapeMismatchError):
            train.conform(tiny_conv_arch())
        with pytest.raises(ConfigInconsistencyError):
            train.conform(ArchitectureConfig(input_shape=[12], num_classes=5))

    def test_conform_reshapes(self):
        data = gen_synthetic(3, 16, 5, seed=0)
        assert data.conform(tiny_conv_arch()).images.shape == (15, 1, 4, 4)

    def test_idx_source_without_test_files_is_split(self, idx_pair):
        (img_path, lbl_path), _, _ = idx_pair
        cfg = DataConfig(source="idx", classes=10, train_images=img_path, train_labels=lbl_path)
        train, test = load_dataset(cfg)
        assert len(train) + len(test) == 3
