"""Training-objective terms.

Everything that takes tensors is built from registered primitives, so the
same code path serves training, attacks and the finite-difference checks.
"""
from typing import Optional, Union

import numpy as np

from ..config.constants import KL_PROB_FLOOR
from ..numerics import Tensor, as_tensor, clip_min, concat, l2_normalize, logsumexp
from .exceptions import (
    EmptyNegativesError,
    InvalidLabelError,
    NotADistributionError,
    ShapeMismatchError,
    ZeroDivergenceError,
)

# added to masked logits; exp() of it underflows to exactly zero
MASK_LOGIT = -1e9
DIST_TOL = 1e-6

Labels = Union[int, np.ndarray]


def _as_batch(x) -> Tensor:
    x = as_tensor(x)
    return x.reshape(1, -1) if x.ndim == 1 else x


def check_labels(y: Labels, num_classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(y))
    if not np.issubdtype(labels.dtype, np.integer) or np.any((labels < 0) | (labels >= num_classes)):
        raise InvalidLabelError(f"labels must be integers in [0, {num_classes})")
    return labels


def one_hot(y: Labels, num_classes: int, dtype=np.float32) -> np.ndarray:
    labels = check_labels(y, num_classes)
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def cross_entropy(logits, y: Labels, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy; ``reduction="none"`` keeps one value per row."""
    logits = _as_batch(logits)
    target = Tensor._wrap(one_hot(y, logits.shape[1], dtype=logits.dtype))
    if target.shape[0] != logits.shape[0]:
        raise ShapeMismatchError(f"{target.shape[0]} labels for {logits.shape[0]} rows")
    per_row = logsumexp(logits, axis=1) - (logits * target).sum(axis=1)
    return per_row if reduction == "none" else per_row.mean()


def contrastive_loss(u, v, negatives, tau: float, mask: Optional[np.ndarray] = None) -> Tensor:
    """InfoNCE-style loss pulling u toward v and away from every negative.

    ``u`` and ``v`` are (d,) or (B, d); ``negatives`` is (N, d) and shared by
    the batch. ``mask`` (B, N) removes bank rows from the denominator.
    """
    u, v = _as_batch(u), _as_batch(v)
    neg = np.asarray(negatives.data if isinstance(negatives, Tensor) else negatives)
    if neg.ndim != 2 or neg.shape[0] == 0:
        raise EmptyNegativesError("contrastive loss needs at least one negative")
    if neg.shape[1] != u.shape[1] or v.shape != u.shape:
        raise ShapeMismatchError(f"feature dims disagree: u {u.shape}, v {v.shape}, negatives {neg.shape}")
    pos = (u * v).sum(axis=1, keepdims=True) / tau
    neg_logits = (u @ Tensor._wrap(neg.T.astype(u.dtype))) / tau
    if mask is not None:
        neg_logits = neg_logits + Tensor._wrap(np.where(mask, MASK_LOGIT, 0.0).astype(u.dtype))
    logits = concat([pos, neg_logits], axis=1)
    return (logsumexp(logits, axis=1) - pos.reshape(-1)).mean()


def normalized_logits(embedding, class_weights, eta) -> Tensor:
    """Cosine logits ê·ŵ_i / η over unit embeddings and unit class columns."""
    e_hat = l2_normalize(_as_batch(embedding), axis=-1)
    w_hat = l2_normalize(as_tensor(class_weights), axis=0)
    return (e_hat @ w_hat) / eta


def nce_loss(embedding, class_weights, y: Labels, eta, reduction: str = "mean") -> Tensor:
    """Normalized cross-entropy of a cosine classifier with sharpness η."""
    return cross_entropy(normalized_logits(embedding, class_weights, eta), y, reduction)


def kl_term(p: Tensor, q: Tensor) -> Tensor:
    """Batch-mean KL(p || q) on the tape; q is clamped below at 1e-12."""
    p, q = _as_batch(p), _as_batch(q)
    log_ratio = clip_min(p, np.finfo(p.dtype).tiny).log() - clip_min(q, KL_PROB_FLOOR).log()
    return (p * log_ratio).sum(axis=1).mean()


def _check_distribution(name: str, values) -> np.ndarray:
    arr = np.asarray(values.data if isinstance(values, Tensor) else values, dtype=np.float64)
    if arr.ndim != 1 or np.any(arr < 0) or abs(arr.sum() - 1.0) > DIST_TOL:
        raise NotADistributionError(f"{name} is not a probability vector")
    return arr


def kl_contributions(p, q) -> np.ndarray:
    """Per-class p_i log(p_i / q_i), with 0 log 0 = 0 and q clamped at 1e-12."""
    p = _check_distribution("p", p)
    q = _check_distribution("q", q)
    if p.shape != q.shape:
        raise ShapeMismatchError(f"p {p.shape} and q {q.shape} differ")
    q = np.maximum(q, KL_PROB_FLOOR)
    safe_p = np.where(p > 0, p, 1.0)
    return np.where(p > 0, p * np.log(safe_p / q), 0.0)


def kl_divergence(p, q) -> float:
    return float(kl_contributions(p, q).sum())


def kl_tail_share(p, q, top_m: int) -> float:
    """Fraction of |KL| contributed by classes outside the top-m of p."""
    contrib = np.abs(kl_contributions(p, q))
    total = contrib.sum()
    if total == 0:
        raise ZeroDivergenceError("p and q coincide; the tail share is undefined")
    head = np.argsort(-_check_distribution("p", p), kind="stable")[:top_m]
    return float((total - contrib[head].sum()) / total)
