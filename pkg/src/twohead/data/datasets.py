"""Dataset ingestion: IDX digit files and the synthetic Gaussian mixture."""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from ..config.constants import IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC, PIXEL_SCALE, DataSource
from ..config.settings import ArchitectureConfig, DataConfig
from ..core.exceptions import (
    BadMagicError,
    ConfigInconsistencyError,
    CountMismatchError,
    InvalidLabelError,
    ShapeMismatchError,
    TruncatedFileError,
)
from ..numerics import RngState
from ..utils.helpers import atomic_write_bytes

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# one in every TEST_STRIDE samples of each class is held out
TEST_STRIDE = 5


@dataclass
class DatasetHandle:
    """Images in [0, 1] with integer labels in [0, num_classes)."""
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    source: DataSource
    split: str = "all"
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidLabelError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index, split: Optional[str] = None) -> "DatasetHandle":
        return replace(self, images=self.images[index], labels=self.labels[index],
                       split=split or self.split, meta=dict(self.meta))

    def conform(self, arch: ArchitectureConfig) -> "DatasetHandle":
        """Reshape every image to the architecture's input shape."""
        if arch.num_classes != self.num_classes:
            raise ConfigInconsistencyError(
                f"dataset has {self.num_classes} classes, model expects {arch.num_classes}")
        shape = tuple(arch.input_shape)
        if self.images.shape[1:] == shape:
            return self
        if int(np.prod(self.images.shape[1:])) != arch.input_dim:
            raise ShapeMismatchError(
                f"images of shape {self.images.shape[1:]} do not fit input shape {shape}")
        return replace(self, images=self.images.reshape((len(self),) + shape))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def _read_idx(path: PathLike, magic: int) -> np.ndarray:
    payload = Path(path).read_bytes()
    if len(payload) < 4:
        raise TruncatedFileError(f"{path}: no IDX header")
    found = int.from_bytes(payload[:4], "big")
    if found != magic:
        raise BadMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(payload) < header:
        raise TruncatedFileError(f"{path}: header ends early")
    dims = tuple(int(d) for d in np.frombuffer(payload, dtype=">u4", count=ndim, offset=4))
    size = int(np.prod(dims))
    if len(payload) < header + size:
        raise TruncatedFileError(f"{path}: payload has {len(payload) - header} of {size} bytes")
    return np.frombuffer(payload, dtype=np.uint8, count=size, offset=header).reshape(dims)


def parse_idx(image_path: PathLike, label_path: PathLike, num_classes: Optional[int] = None,
              split: str = "all") -> DatasetHandle:
    """Read an IDX image/label pair; pixel bytes become pixel/255 in float32."""
    raw = _read_idx(image_path, IDX_IMAGE_MAGIC)
    labels = _read_idx(label_path, IDX_LABEL_MAGIC).astype(np.int64)
    if len(raw) != len(labels):
        raise CountMismatchError(f"{len(raw)} images but {len(labels)} labels")
    classes = num_classes or (int(labels.max()) + 1 if len(labels) else 1)
    images = (raw.astype(np.float32) / np.float32(PIXEL_SCALE)).astype(np.float32)
    logger.info("loaded %d IDX images of shape %s from %s", len(raw), raw.shape[1:], image_path)
    return DatasetHandle(images, labels, classes, DataSource.IDX, split,
                         {"images": str(image_path), "labels": str(label_path)})


def write_idx(images: np.ndarray, labels: np.ndarray, image_path: PathLike,
              label_path: PathLike) -> Tuple[Path, Path]:
    """Write images (uint8, or floats in [0, 1]) and labels as an IDX pair."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise ShapeMismatchError(f"IDX images must be (count, rows, cols), got {images.shape}")
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    if images.dtype != np.uint8:
        images = np.rint(np.clip(images, 0.0, 1.0) * PIXEL_SCALE).astype(np.uint8)
    dims = np.array(images.shape, dtype=">u4").tobytes()
    atomic_write_bytes(image_path, IDX_IMAGE_MAGIC.to_bytes(4, "big") + dims + images.tobytes())
    label_bytes = np.asarray(labels, dtype=np.uint8)
    atomic_write_bytes(label_path, IDX_LABEL_MAGIC.to_bytes(4, "big")
                       + np.array([len(label_bytes)], dtype=">u4").tobytes() + label_bytes.tobytes())
    return Path(image_path), Path(label_path)


def gen_synthetic(num_classes: int, dim: int, per_class: int, seed: int,
                  noise: float = 0.2, radius: float = 1.0) -> DatasetHandle:
    """Isotropic Gaussian clusters around class means on a sphere about the mid-grey point.

    Samples are interleaved (sample i has label i mod C), so every class has
    exactly ``per_class`` members.
    """
    rng = RngState(seed).derive("synthetic")
    directions = rng.derive("means").normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = 0.5 + radius * directions
    labels = np.tile(np.arange(num_classes), per_class).astype(np.int64)
    jitter = rng.derive("noise").normal((len(labels), dim)) * noise
    images = np.clip(means[labels] + jitter, 0.0, 1.0).astype(np.float32)
    meta = {"dim": str(dim), "per_class": str(per_class), "seed": str(seed),
            "noise": repr(noise), "radius": repr(radius)}
    return DatasetHandle(images, labels, num_classes, DataSource.SYNTHETIC, "all", meta)


def split_train_test(data: DatasetHandle) -> Tuple[DatasetHandle, DatasetHandle]:
    """Every fifth sample of each class (by order of appearance) goes to test."""
    rank = np.zeros(len(data), dtype=np.int64)
    seen = np.zeros(data.num_classes, dtype=np.int64)
    for i, label in enumerate(data.labels):
        rank[i] = seen[label]
        seen[label] += 1
    test = rank % TEST_STRIDE == TEST_STRIDE - 1
    return data.subset(np.flatnonzero(~test), "train"), data.subset(np.flatnonzero(test), "test")


def load_dataset(cfg: DataConfig, seed: Optional[int] = None,
                 arch: Optional[ArchitectureConfig] = None) -> Tuple[DatasetHandle, DatasetHandle]:
    """Train and test handles for the configured source, shaped for ``arch``."""
    if cfg.source is DataSource.SYNTHETIC:
        train, test = split_train_test(
            gen_synthetic(cfg.classes, cfg.dim, cfg.per_class, cfg.seed if seed is None else seed,
                          cfg.noise, cfg.radius))
    else:
        train = parse_idx(cfg.train_images, cfg.train_labels, cfg.classes, "train")
        if cfg.test_images and cfg.test_labels:
            test = parse_idx(cfg.test_images, cfg.test_labels, cfg.classes, "test")
        else:
            train, test = split_train_test(train)
    if arch is not None:
        train, test = train.conform(arch), test.conform(arch)
    return train, test
