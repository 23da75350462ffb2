"""Loss surface of one sample along two perturbation directions."""

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..config.constants import AttackLoss, DirectionKind
from ..config.settings import AttackConfig
from ..core.attack import input_gradient_fn
from ..core.exceptions import ShapeMismatchError
from ..core.losses import check_labels
from ..core.model import EncoderParams
from ..numerics import RngState
from ..utils.helpers import atomic_write_text
from .defense import sample_loss

logger = logging.getLogger(__name__)


@dataclass
class SurfaceSpec:
    """Center sample, direction pair and grid geometry.

    ``half_range`` is in pixel units and defaults to the attack radius.
    """
    center: np.ndarray
    label: int
    directions: Tuple[DirectionKind, DirectionKind] = (DirectionKind.ADVERSARIAL, DirectionKind.RADEMACHER)
    resolution: int = 21
    half_range: Optional[float] = None
    loss: AttackLoss = AttackLoss.NCE
    seed: int = 0

    def __post_init__(self):
        if self.resolution < 1 or self.resolution % 2 == 0:
            raise ValueError("grid resolution must be a positive odd number")
        if self.half_range is not None and self.half_range <= 0:
            raise ValueError("half_range must be positive")
        if len(self.directions) != 2:
            raise ValueError("a surface needs exactly two directions")


@dataclass
class SurfaceResult:
    grid: np.ndarray
    a: np.ndarray
    b: np.ndarray
    clamped_cells: int
    meta: Dict[str, str] = field(default_factory=dict)

    @property
    def center(self) -> float:
        c = len(self.a) // 2
        return float(self.grid[c, c])

    @property
    def sharpness(self) -> float:
        """Largest rise over the center value anywhere on the grid."""
        return float(self.grid.max() - self.center)

    def to_csv(self) -> str:
        header = "".join(f"# {key}={value}\n" for key, value in self.meta.items())
        body = pd.DataFrame(self.grid).to_csv(header=False, index=False, float_format="%.17g")
        return header + body

    def coordinates(self) -> pd.DataFrame:
        return pd.DataFrame({"index": np.arange(len(self.a)), "a": self.a, "b": self.b})

    def save(self, path: Union[str, Path], with_coordinates: bool = True) -> Path:
        path = Path(path)
        atomic_write_text(path, self.to_csv())
        if with_coordinates:
            atomic_write_text(path.with_name(path.stem + "_coords.csv"),
                              self.coordinates().to_csv(index=False, float_format="%.17g"))
        return path


def read_surface(path: Union[str, Path]) -> Tuple[Dict[str, str], np.ndarray]:
    """Metadata and grid from a file written by ``SurfaceResult.save``."""
    text = Path(path).read_text(encoding="utf-8")
    meta = {}
    for line in text.splitlines():
        if line.startswith("# ") and "=" in line:
            key, value = line[2:].split("=", 1)
            meta[key] = value
    grid = pd.read_csv(io.StringIO(text), comment="#", header=None,
                       float_precision="round_trip").to_numpy(dtype=np.float64)
    return meta, grid


def rademacher_direction(shape: Sequence[int], rng: RngState, scale: float) -> np.ndarray:
    """Entries +scale or -scale with equal probability."""
    return rng.rademacher(tuple(shape)) * scale


def adversarial_direction(x: np.ndarray, y: int, params: EncoderParams, atk: AttackConfig,
                          kind: Optional[AttackLoss] = None) -> np.ndarray:
    """Sign of the input gradient of the loss at x, times the attack radius."""
    labels = check_labels(y, params.arch.num_classes)
    gradient = input_gradient_fn(params.robust, params.arch, kind or atk.loss, labels)
    g = gradient(np.asarray(x, dtype=np.float64)[None])[0]
    return np.sign(g) * atk.eps


def _direction(kind: DirectionKind, spec: SurfaceSpec, params: EncoderParams, atk: AttackConfig,
               rng: RngState) -> np.ndarray:
    shape = np.shape(spec.center)
    if kind is DirectionKind.ZERO:
        return np.zeros(shape)
    if kind is DirectionKind.ADVERSARIAL:
        return adversarial_direction(spec.center, spec.label, params, atk, spec.loss)
    return rademacher_direction(shape, rng, atk.eps)


def grid_multipliers(resolution: int, half_range: float, scale: float) -> np.ndarray:
    """Multipliers of the direction vectors, sweeping [-r/s, r/s] uniformly."""
    c = (resolution - 1) // 2
    if c == 0:
        return np.zeros(1)
    return np.array([(half_range / scale) * (i - c) / c for i in range(resolution)])


def loss_grid(spec: SurfaceSpec, params: EncoderParams, atk: AttackConfig,
              directions: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> SurfaceResult:
    """Cell (i, j) holds loss(clamp(x + a_i d1 + b_j d2), y).

    Explicit ``directions`` override the ones described by the spec.
    """
    x = np.asarray(spec.center)
    if x.shape != tuple(params.arch.input_shape):
        raise ShapeMismatchError(f"center of shape {x.shape} does not match {params.arch.input_shape}")
    rng = RngState(spec.seed).derive("surface")
    if directions is None:
        d1 = _direction(spec.directions[0], spec, params, atk, rng.derive(0))
        d2 = _direction(spec.directions[1], spec, params, atk, rng.derive(1))
    else:
        d1, d2 = (np.asarray(d, dtype=np.float64) for d in directions)
    half_range = spec.half_range or atk.eps
    a = grid_multipliers(spec.resolution, half_range, atk.eps)
    b = a.copy()

    x64 = x.astype(np.float64)
    grid = np.empty((len(a), len(b)))
    clamped = 0
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            point = x64 + ai * d1 + bj * d2
            inside = np.clip(point, atk.lo, atk.hi)
            if not np.array_equal(inside, point):
                clamped += 1
            grid[i, j] = sample_loss(inside.astype(x.dtype), spec.label, params, spec.loss)

    if clamped:
        logger.info("%d of %d grid points clamped to the pixel range", clamped, grid.size)
    meta = {
        "directions": ",".join(d.value for d in spec.directions),
        "resolution": str(spec.resolution),
        "half_range": repr(half_range),
        "scale": repr(atk.eps),
        "label": str(spec.label),
        "loss": spec.loss.value,
        "seed": str(spec.seed),
        "clamped_cells": str(clamped),
    }
    return SurfaceResult(grid, a, b, clamped, meta)
