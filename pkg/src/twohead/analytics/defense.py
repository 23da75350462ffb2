"""
Test-time defenses and the robustness evaluation harness.

Two ways of turning the robust encoder into a classifier: the cosine
classifier head (softmax defense) and a vote over the nearest clean-encoder
features of the training set (KNN defense). Attacks at evaluation time always
go through the classifier head.
"""

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd

from ..config.constants import AttackLoss, DefenseMode
from ..config.settings import AttackConfig
from ..core.attack import DEFAULT_ETA, attack_loss, pgd_attack
from ..core.exceptions import (
    ConfigInconsistencyError,
    DimMismatchError,
    EmptyGalleryError,
    InvalidKError,
)
from ..core.losses import check_labels, normalized_logits
from ..core.model import CLASSIFIER, EncoderParams, encode, eta
from ..data.datasets import DatasetHandle
from ..numerics import RngState
from ..utils.helpers import atomic_write_bytes

logger = logging.getLogger(__name__)

BATCH = 256


@dataclass(frozen=True)
class GalleryIndex:
    """Unit clean features of every training sample, in dataset order."""
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def one_hot(self) -> np.ndarray:
        out = np.zeros((self.size, self.num_classes))
        out[np.arange(self.size), self.labels] = 1.0
        return out

    def save(self, path: Union[str, Path]) -> Path:
        buffer = io.BytesIO()
        np.savez(buffer, features=self.features, labels=self.labels,
                 num_classes=np.array(self.num_classes))
        return atomic_write_bytes(path, buffer.getvalue())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GalleryIndex":
        with np.load(Path(path)) as stored:
            return cls(stored["features"], stored["labels"], int(stored["num_classes"]))


def _features(images: np.ndarray, weights, params: EncoderParams) -> np.ndarray:
    dtype = np.asarray(weights[CLASSIFIER]).dtype
    parts = [encode(images[i:i + BATCH].astype(dtype), weights, params.arch).feature.numpy()
             for i in range(0, len(images), BATCH)]
    return np.concatenate(parts) if parts else np.zeros((0, params.arch.feat_dim), dtype=dtype)


def build_gallery(data: DatasetHandle, params: EncoderParams) -> GalleryIndex:
    """Clean-encoder features for all training samples."""
    features = _features(data.images, params.clean, params)
    logger.info("gallery built from %d training samples", len(features))
    return GalleryIndex(features, data.labels.copy(), data.num_classes)


def _neighbour_votes(sims: np.ndarray, labels: np.ndarray, num_classes: int, k: int) -> np.ndarray:
    # stable sort on -sims keeps the lower gallery index at equal similarity
    order = np.argsort(-sims, kind="stable")[:k]
    top, top_labels = sims[order], labels[order]
    votes = np.zeros(num_classes)
    for c in range(num_classes):
        # sorted before summing so the total does not depend on gallery order
        votes[c] = np.sort(top[top_labels == c]).sum()
    return votes


def knn_confidence(query, params: EncoderParams, gallery: GalleryIndex, k: int) -> np.ndarray:
    """P(c) = sum over the k nearest gallery rows of u.u_i * y_i(c).

    Accepts a single image (returns (C,)) or a batch (returns (B, C)).
    """
    if gallery.size == 0:
        raise EmptyGalleryError("the gallery holds no features")
    if not 1 <= k <= gallery.size:
        raise InvalidKError(f"k must lie in [1, {gallery.size}], got {k}")
    query = np.asarray(query)
    single = query.ndim == len(params.arch.input_shape)
    batch = query[None] if single else query
    u = _features(batch, params.robust, params).astype(np.float64)
    if u.shape[1] != gallery.features.shape[1]:
        raise DimMismatchError(f"query features are {u.shape[1]}-d, gallery rows {gallery.features.shape[1]}-d")
    sims = u @ gallery.features.astype(np.float64).T
    votes = np.stack([_neighbour_votes(row, gallery.labels, gallery.num_classes, k) for row in sims])
    return votes[0] if single else votes


def knn_classify(query, params: EncoderParams, gallery: GalleryIndex, k: int) -> np.ndarray:
    return np.argmax(knn_confidence(query, params, gallery, k), axis=-1)


def softmax_classify(query, params: EncoderParams) -> np.ndarray:
    """Argmax of the cosine logits of the robust classifier head."""
    query = np.asarray(query)
    single = query.ndim == len(params.arch.input_shape)
    batch = query[None] if single else query
    weights = params.robust
    dtype = np.asarray(weights[CLASSIFIER]).dtype
    sharpness = eta(weights) or DEFAULT_ETA
    preds = []
    for i in range(0, len(batch), BATCH):
        trunk = encode(batch[i:i + BATCH].astype(dtype), weights, params.arch, with_feature=False).trunk
        logits = normalized_logits(trunk, weights[CLASSIFIER], sharpness).numpy()
        preds.append(np.argmax(logits, axis=1))
    out = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return out[0] if single else out


def sample_losses(images: np.ndarray, labels: np.ndarray, params: EncoderParams,
                  kind: AttackLoss = AttackLoss.NCE) -> np.ndarray:
    """Per-sample classification loss of the robust encoder.

    Samples go through one at a time so a value never depends on which batch
    it was computed in.
    """
    if kind is AttackLoss.FEATURE:
        raise ConfigInconsistencyError("sample losses are defined for the classification heads only")
    weights = params.robust
    dtype = np.asarray(weights[CLASSIFIER]).dtype
    return np.array([attack_loss(weights, params.arch, kind, images[i:i + 1].astype(dtype),
                                 labels[i:i + 1]).item()
                     for i in range(len(images))], dtype=np.float64)


def sample_loss(x, y: int, params: EncoderParams, kind: AttackLoss = AttackLoss.NCE) -> float:
    return float(sample_losses(np.asarray(x)[None], check_labels(y, params.arch.num_classes), params, kind)[0])


def attack_name(cfg: Optional[AttackConfig]) -> str:
    if cfg is None:
        return "none"
    if cfg.steps == 1 and cfg.step_size == cfg.epsilon and not cfg.uses_random_start:
        return "fgsm"
    return "pgd"


@dataclass
class EvaluationReport:
    defense_mode: DefenseMode
    attack: str
    steps: int
    epsilon: float
    top1: float
    n_samples: int
    per_class: Dict[int, float] = field(default_factory=dict)
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    predictions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def to_frame(self) -> pd.DataFrame:
        row = {
            "defense_mode": self.defense_mode.value,
            "attack": self.attack,
            "K": self.steps,
            "eps": self.epsilon,
            "top1": self.top1,
            "n_samples": self.n_samples,
        }
        row.update({f"class_{c}": acc for c, acc in sorted(self.per_class.items())})
        return pd.DataFrame([row])

    def loss_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "sample": np.arange(self.n_samples),
            "loss": self.losses,
            "prediction": self.predictions,
        })


def evaluate(params: EncoderParams, data: DatasetHandle, attack: Optional[AttackConfig] = None,
             defense: DefenseMode = DefenseMode.SOFTMAX, gallery: Optional[GalleryIndex] = None,
             k: int = 50, rng: Optional[RngState] = None, limit: Optional[int] = None,
             threads: int = 1, attack_kind: Optional[AttackLoss] = None) -> EvaluationReport:
    """Top-1 accuracy of a defense on clean or attacked test samples."""
    n = len(data) if limit is None else min(limit, len(data))
    x, y = data.images[:n], data.labels[:n]
    if defense is DefenseMode.KNN and gallery is None:
        raise ConfigInconsistencyError("the KNN defense needs a gallery")

    x_in = x
    if attack is not None and n:
        x_in = pgd_attack(x, y, params, attack_kind, attack, (rng or RngState(0)).derive("evaluate"),
                          np.arange(n), threads)

    if defense is DefenseMode.KNN:
        preds = knn_classify(x_in, params, gallery, k) if n else np.zeros(0, dtype=np.int64)
    else:
        preds = softmax_classify(x_in, params) if n else np.zeros(0, dtype=np.int64)

    correct = preds == y
    per_class = {int(c): float(correct[y == c].mean()) for c in np.unique(y)}
    return EvaluationReport(
        defense_mode=defense,
        attack=attack_name(attack),
        steps=0 if attack is None else attack.steps,
        epsilon=0.0 if attack is None else attack.epsilon,
        top1=float(correct.mean()) if n else 0.0,
        n_samples=n,
        per_class=per_class,
        losses=sample_losses(x_in, y, params),
        predictions=np.asarray(preds, dtype=np.int64),
    )
