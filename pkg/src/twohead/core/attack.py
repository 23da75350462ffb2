"""FGSM and PGD adversarial examples.

Attack arithmetic runs in float64; the result is cast back to the input
precision and nudged toward the clean input until the threat-model
constraint holds exactly in float64. Random starts and random targets come
from per-sample derived streams, and batches are cut into fixed chunks, so
the number of worker threads never changes the output.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ..config.constants import AttackLoss, AttackMode, NormType
from ..config.settings import ArchitectureConfig, AttackConfig
from ..numerics import GradientTape, RngState, Tensor
from .exceptions import ConfigInconsistencyError
from .losses import check_labels, cross_entropy, nce_loss
from .model import CLASSIFIER, EncoderParams, encode, eta

logger = logging.getLogger(__name__)

GradientFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_ETA = 1.0 / 30.0
_MAX_NUDGES = 64


def project(delta, eps: float, norm: NormType, axis=None) -> np.ndarray:
    """Map ``delta`` into the eps-ball; ``axis`` selects per-sample L2 norms."""
    delta = np.asarray(delta)
    if norm is NormType.LINF:
        return np.clip(delta, -eps, eps)
    length = np.sqrt(np.sum(delta * delta, axis=axis, keepdims=axis is not None))
    safe = np.where(length > 0, length, 1.0)
    return np.where(length > eps, delta / safe * eps, delta)


def draw_targets(y: np.ndarray, num_classes: int, rng: RngState, ids: Sequence[int]) -> np.ndarray:
    """A uniformly drawn class different from each label."""
    offsets = np.array([rng.derive(int(i), "target").integers(0, num_classes - 1) for i in ids])
    return (np.asarray(y) + 1 + offsets) % num_classes


def _random_start(shape, cfg: AttackConfig, rng: RngState) -> np.ndarray:
    if cfg.norm is NormType.LINF:
        return rng.uniform(-cfg.eps, cfg.eps, shape)
    direction = rng.normal(shape)
    direction /= np.linalg.norm(direction)
    radius = cfg.eps * rng.uniform(0.0, 1.0) ** (1.0 / direction.size)
    return direction * radius


def _violations(out: np.ndarray, x64: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Elementwise (L-inf) or per-sample (L2) constraint violations."""
    out64 = out.astype(np.float64)
    outside = (out64 < cfg.lo) | (out64 > cfg.hi)
    if cfg.norm is NormType.LINF:
        return outside | (np.abs(out64 - x64) > cfg.eps)
    flat = (out64 - x64).reshape(len(out), -1)
    return (np.sqrt(np.sum(flat * flat, axis=1)) > cfg.eps) | outside.reshape(len(out), -1).any(axis=1)


def _enforce(x: np.ndarray, x_adv: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Cast to the input precision without leaving the eps-ball or the pixel range."""
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    x_ref = x.astype(dtype)
    x64 = x_ref.astype(np.float64)
    out = np.clip(x_adv, cfg.lo, cfg.hi).astype(dtype)
    for _ in range(_MAX_NUDGES):
        bad = _violations(out, x64, cfg)
        if not bad.any():
            return out
        if cfg.norm is NormType.LINF:
            out[bad] = np.nextafter(out[bad], x_ref[bad])
        else:
            shrunk = x64[bad] + (out[bad].astype(np.float64) - x64[bad]) * (1.0 - 1e-6)
            out[bad] = np.clip(shrunk, cfg.lo, cfg.hi).astype(dtype)
    logger.warning("constraint enforcement did not converge; reverting offenders to clean pixels")
    bad = _violations(out, x64, cfg)
    out[bad] = x_ref[bad]
    return out


def perturb(x: np.ndarray, gradient_fn: GradientFn, cfg: AttackConfig, rng: RngState,
            ids: Optional[Sequence[int]] = None, descend: bool = False) -> np.ndarray:
    """Projected (sign-)gradient steps on a batch, given its input gradient."""
    x = np.asarray(x)
    x64 = x.astype(np.float64)
    axes = tuple(range(1, x64.ndim))
    ids = np.arange(len(x64)) if ids is None else np.asarray(ids)

    delta = np.zeros_like(x64)
    if cfg.uses_random_start:
        delta = np.stack([_random_start(x64.shape[1:], cfg, rng.derive(int(i), "start")) for i in ids])
    x_adv = np.clip(x64 + project(delta, cfg.eps, cfg.norm, axis=axes), cfg.lo, cfg.hi)

    direction = -1.0 if descend else 1.0
    for _ in range(cfg.steps):
        g = np.asarray(gradient_fn(x_adv), dtype=np.float64)
        if cfg.norm is NormType.LINF:
            step = np.sign(g)
        else:
            length = np.sqrt(np.sum(g * g, axis=axes, keepdims=True))
            step = np.where(length > 0, g / np.where(length > 0, length, 1.0), 0.0)
        x_adv = x_adv + direction * cfg.step * step
        x_adv = np.clip(x64 + project(x_adv - x64, cfg.eps, cfg.norm, axis=axes), cfg.lo, cfg.hi)
    return _enforce(x, x_adv, cfg)


def attack_loss(weights: Mapping, arch: ArchitectureConfig, kind: AttackLoss, x,
                labels: np.ndarray, anchor: Optional[np.ndarray] = None) -> Tensor:
    """Per-sample loss the attacker ascends (or descends when targeted)."""
    enc = encode(x, weights, arch, with_feature=kind is AttackLoss.FEATURE)
    if kind is AttackLoss.CE:
        return cross_entropy(enc.logits, labels, reduction="none")
    if kind is AttackLoss.NCE:
        sharpness = eta(weights) or DEFAULT_ETA
        return nce_loss(enc.trunk, weights[CLASSIFIER], labels, sharpness, reduction="none")
    if anchor is None:
        raise ValueError("feature attack needs the clean features as anchor")
    return -(enc.feature * Tensor._wrap(anchor.astype(enc.feature.dtype))).sum(axis=1)


def input_gradient_fn(weights: Mapping, arch: ArchitectureConfig, kind: AttackLoss,
                      labels: np.ndarray, anchor: Optional[np.ndarray] = None) -> GradientFn:
    dtype = np.asarray(weights[CLASSIFIER]).dtype

    def gradient(x_adv: np.ndarray) -> np.ndarray:
        x_t = Tensor(x_adv, dtype=dtype)
        with GradientTape() as tape:
            tape.watch(x_t)
            total = attack_loss(weights, arch, kind, x_t, labels, anchor).sum()
        return tape.gradient(total, [x_t])[0].data

    return gradient


def pgd_attack(x, y, params: EncoderParams, loss: Optional[AttackLoss], cfg: AttackConfig,
               rng: RngState, ids: Optional[Sequence[int]] = None, threads: int = 1) -> np.ndarray:
    """K-step PGD against the robust encoder.

    Untargeted attacks ascend the selected loss; targeted attacks descend it
    toward a class drawn uniformly among the wrong ones.
    """
    kind = loss or cfg.loss
    arch = params.arch
    x = np.asarray(x)
    single = x.ndim == len(arch.input_shape)
    xb = x[None] if single else x
    yb = check_labels(y, arch.num_classes)
    targeted = cfg.mode is AttackMode.TARGETED
    if targeted and kind is AttackLoss.FEATURE:
        raise ConfigInconsistencyError("the feature attack has no targeted form")
    ids = np.arange(len(xb)) if ids is None else np.asarray(ids)
    goals = draw_targets(yb, arch.num_classes, rng, ids) if targeted else yb
    weights = params.robust
    dtype = np.asarray(weights[CLASSIFIER]).dtype

    def run(start: int) -> np.ndarray:
        part = slice(start, start + cfg.chunk_size)
        xc = xb[part]
        anchor = None
        if kind is AttackLoss.FEATURE:
            anchor = encode(xc.astype(dtype), weights, arch).feature.numpy()
        fn = input_gradient_fn(weights, arch, kind, goals[part], anchor)
        return perturb(xc, fn, cfg, rng, ids[part], descend=targeted)

    starts = list(range(0, len(xb), cfg.chunk_size))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    out = np.concatenate(parts) if parts else xb.copy()
    return out[0] if single else out


def fgsm_attack(x, y, params: EncoderParams, cfg: AttackConfig, rng: Optional[RngState] = None,
                ids: Optional[Sequence[int]] = None, threads: int = 1) -> np.ndarray:
    """Single saturated step: PGD with K=1, step = eps and no random start."""
    single_step = cfg.model_copy(update={"steps": 1, "step_size": cfg.epsilon, "random_start": False})
    return pgd_attack(x, y, params, cfg.loss, single_step, rng or RngState(0), ids, threads)
