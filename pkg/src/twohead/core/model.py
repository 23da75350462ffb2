"""Clean and two-head robust encoders.

Both encoders share one layout: a trunk (``base.*``), a two-layer projection
head (``feat.*``) whose output is unit-normalized, and a bias-free linear
classifier head (``cls.w``). The robust encoder additionally owns the NCE
sharpness ``cls.log_eta``.

Weights are plain name -> array mappings so that the optimizer, the
checkpoint codec and the momentum update can treat them uniformly.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from ..config.constants import Architecture
from ..config.settings import ArchitectureConfig
from ..numerics import RngState, Tensor, as_tensor, conv2d, l2_normalize, max_pool2d, zero_norm_tolerance
from .exceptions import ShapeMismatchError

Weights = Dict[str, np.ndarray]
WeightLike = Mapping[str, Union[np.ndarray, Tensor]]

LOG_ETA = "cls.log_eta"
CLASSIFIER = "cls.w"


@dataclass
class Encoding:
    trunk: Tensor
    feature: Tensor
    logits: Tensor


@dataclass
class EncoderParams:
    """Weights of the clean encoder and of the two-head robust encoder."""
    arch: ArchitectureConfig
    clean: Weights
    robust: Weights
    metadata: Dict[str, str] = field(default_factory=dict)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.arch,
            {k: v.copy() for k, v in self.clean.items()},
            {k: v.copy() for k, v in self.robust.items()},
            dict(self.metadata),
        )


def _trunk_shapes(arch: ArchitectureConfig) -> List[Tuple[str, Tuple[int, ...], int]]:
    """(name, shape, fan_in) for every trunk tensor, in init order."""
    shapes: List[Tuple[str, Tuple[int, ...], int]] = []
    if arch.arch is Architecture.CONV:
        channels, height, width = arch.input_shape
        for i, out_ch in enumerate(arch.conv_channels):
            shapes.append((f"base.conv{i}.w", (out_ch, channels, 3, 3), channels * 9))
            shapes.append((f"base.conv{i}.b", (out_ch,), 0))
            channels, height, width = out_ch, height // 2, width // 2
        fan_in = channels * height * width
    else:
        fan_in = arch.input_dim
    for i, width_out in enumerate(arch.widths):
        shapes.append((f"base.{i}.w", (fan_in, width_out), fan_in))
        shapes.append((f"base.{i}.b", (width_out,), 0))
        fan_in = width_out
    return shapes


def parameter_shapes(arch: ArchitectureConfig, robust: bool) -> List[Tuple[str, Tuple[int, ...], int]]:
    shapes = _trunk_shapes(arch)
    hidden = arch.widths[-1]
    shapes += [
        ("feat.0.w", (hidden, arch.proj_hidden), hidden),
        ("feat.0.b", (arch.proj_hidden,), 0),
        ("feat.1.w", (arch.proj_hidden, arch.feat_dim), arch.proj_hidden),
        ("feat.1.b", (arch.feat_dim,), 0),
        (CLASSIFIER, (hidden, arch.num_classes), hidden),
    ]
    if robust:
        shapes.append((LOG_ETA, (), 0))
    return shapes


def _init_weights(arch: ArchitectureConfig, rng: RngState, robust: bool, eta_init: float) -> Weights:
    weights: Weights = {}
    for name, shape, fan_in in parameter_shapes(arch, robust):
        if name == LOG_ETA:
            weights[name] = np.asarray(math.log(eta_init), dtype=np.float32)
        elif fan_in == 0:
            weights[name] = np.zeros(shape, dtype=np.float32)
        else:
            bound = math.sqrt(1.0 / fan_in)
            weights[name] = rng.uniform(-bound, bound, shape, dtype=np.float32)
    return weights


def init_params(arch: ArchitectureConfig, rng: RngState, eta_init: float = 1.0 / 30.0) -> EncoderParams:
    """Fan-in uniform weights in [-sqrt(1/n), sqrt(1/n)], zero biases."""
    return EncoderParams(
        arch=arch,
        clean=_init_weights(arch, rng.derive("clean"), robust=False, eta_init=eta_init),
        robust=_init_weights(arch, rng.derive("robust"), robust=True, eta_init=eta_init),
    )


def _lift(weights: WeightLike) -> Dict[str, Tensor]:
    return {k: v if isinstance(v, Tensor) else Tensor._wrap(np.asarray(v)) for k, v in weights.items()}


def _trunk(x: Tensor, w: Mapping[str, Tensor], arch: ArchitectureConfig) -> Tensor:
    batch = x.shape[0]
    h = x
    if arch.arch is Architecture.CONV:
        h = h.reshape((batch, *arch.input_shape))
        for i in range(len(arch.conv_channels)):
            bias = w[f"base.conv{i}.b"].reshape(1, -1, 1, 1)
            h = max_pool2d((conv2d(h, w[f"base.conv{i}.w"]) + bias).relu())
    h = h.reshape(batch, -1)
    for i in range(len(arch.widths)):
        h = (h @ w[f"base.{i}.w"] + w[f"base.{i}.b"]).relu()
    return h


def _feature(t: Tensor, w: Mapping[str, Tensor]) -> Tensor:
    hidden = (t @ w["feat.0.w"] + w["feat.0.b"]).relu()
    proj = hidden @ w["feat.1.w"] + w["feat.1.b"]
    # a vanishing projection (zero input, dead trunk) maps to the first basis direction
    dead = np.linalg.norm(proj.data.astype(np.float64), axis=-1) <= zero_norm_tolerance(proj.dtype)
    if dead.any():
        anchor = np.zeros(proj.shape, dtype=proj.dtype)
        anchor[dead, 0] = 1.0
        proj = proj + as_tensor(anchor)
    return l2_normalize(proj, axis=-1)


def _batch(x, arch: ArchitectureConfig) -> Tuple[Tensor, bool]:
    x = as_tensor(x)
    sample_ndim = len(arch.input_shape)
    if x.ndim == sample_ndim:
        return x.reshape((1, *x.shape)), True
    if x.ndim != sample_ndim + 1 or int(np.prod(x.shape[1:])) != arch.input_dim:
        raise ShapeMismatchError(f"input of shape {x.shape} does not match {arch.input_shape}")
    return x, False


def encode(x, weights: WeightLike, arch: ArchitectureConfig, with_feature: bool = True) -> Encoding:
    """Batched forward pass through trunk, projection head and classifier head."""
    xb, _ = _batch(x, arch)
    w = _lift(weights)
    missing = {n for n, _, _ in parameter_shapes(arch, robust=False)} - set(w)
    if missing:
        raise ShapeMismatchError(f"weights are missing {sorted(missing)}")
    t = _trunk(xb, w, arch)
    feature = _feature(t, w) if with_feature else t
    return Encoding(trunk=t, feature=feature, logits=t @ w[CLASSIFIER])


def clean_forward(x, params: EncoderParams) -> Tensor:
    """Unit clean feature v = g(x; W_c)."""
    xb, single = _batch(x, params.arch)
    v = encode(xb, params.clean, params.arch).feature
    return v.reshape(-1) if single else v


def robust_forward(x, params: EncoderParams) -> Tuple[Tensor, Tensor]:
    """Unit feature u and raw logits z of the robust encoder."""
    xb, single = _batch(x, params.arch)
    enc = encode(xb, params.robust, params.arch)
    if single:
        return enc.feature.reshape(-1), enc.logits.reshape(-1)
    return enc.feature, enc.logits


def momentum_update(clean: Weights, robust: Weights, m: float) -> Weights:
    """w_c <- m * w_c + (1 - m) * w_a over every tensor the two networks share."""
    if not 0.0 <= m <= 1.0:
        raise ValueError("momentum must lie in [0, 1]")
    updated: Weights = {}
    for name, wc in clean.items():
        wa = robust.get(name)
        if wa is None:
            updated[name] = wc.copy()
            continue
        if wa.shape != wc.shape:
            raise ShapeMismatchError(f"{name}: clean {wc.shape} vs robust {wa.shape}")
        updated[name] = (m * wc + (1.0 - m) * wa).astype(wc.dtype)
    return updated


def eta(weights: WeightLike) -> Optional[float]:
    value = weights.get(LOG_ETA)
    if value is None:
        return None
    data = value.data if isinstance(value, Tensor) else np.asarray(value)
    return float(np.exp(data))
