"""Finite-difference verification of tape gradients."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import primitives as P
from .rng import RngState
from .tensor import Tensor, grad, observe_kinks

logger = logging.getLogger(__name__)

# keeps the relative error meaningful where both gradients are near zero
REL_ERROR_FLOOR = 1e-5

Case = Tuple[Callable[..., Tensor], List[np.ndarray]]


@dataclass
class ParamCheck:
    """Outcome for one parameter tensor"""
    name: str
    max_rel_error: float
    checked: int
    excluded: int
    passed: bool


@dataclass
class GradCheckReport:
    h: float
    tol: float
    params: List[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def excluded(self) -> int:
        return sum(p.excluded for p in self.params)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(p) for p in self.params])


def _evaluate(f: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> Tuple[float, List[np.ndarray]]:
    with observe_kinks() as patterns:
        value = f(*[Tensor(a) for a in arrays]).item()
    return value, patterns


def _same_branch(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_diff_check(f: Callable[..., Tensor], params: Sequence, h: float = 1e-5,
                      tol: float = 1e-4, names: Optional[Sequence[str]] = None,
                      max_coords: Optional[int] = None,
                      rng: Optional[RngState] = None) -> GradCheckReport:
    """Compare ``grad(f)`` with central differences (f(p+h) - f(p-h)) / 2h.

    Coordinates whose +h and -h evaluations take different branches of a
    piecewise primitive are reported as excluded rather than failed. With
    ``max_coords`` only a seeded sample of coordinates per parameter is probed.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    arrays = [np.array(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in params]
    names = list(names) if names is not None else [f"param{i}" for i in range(len(arrays))]
    analytic = [g.numpy() for g in grad(f, arrays)]
    rng = rng or RngState(0)
    report = GradCheckReport(h=h, tol=tol)

    for index, (name, base) in enumerate(zip(names, arrays)):
        coords = np.arange(base.size)
        if max_coords is not None and base.size > max_coords:
            coords = np.sort(rng.derive(index).permutation(base.size)[:max_coords])
        worst, excluded = 0.0, 0
        for flat in coords:
            probe = [a.copy() for a in arrays]
            probe[index].reshape(-1)[flat] = base.reshape(-1)[flat] + h
            f_plus, kinks_plus = _evaluate(f, probe)
            probe[index].reshape(-1)[flat] = base.reshape(-1)[flat] - h
            f_minus, kinks_minus = _evaluate(f, probe)
            if not _same_branch(kinks_plus, kinks_minus):
                excluded += 1
                continue
            numeric = (f_plus - f_minus) / (2 * h)
            exact = analytic[index].reshape(-1)[flat]
            denom = max(abs(numeric), abs(exact), REL_ERROR_FLOOR)
            worst = max(worst, abs(numeric - exact) / denom)
        report.params.append(ParamCheck(name, worst, len(coords) - excluded, excluded, worst < tol))

    logger.debug("gradcheck: max rel error %.3e, %d excluded points", report.max_rel_error, report.excluded)
    return report


def _weighted(rng: RngState, shape) -> Tensor:
    return Tensor(rng.normal(shape))


def primitive_cases(rng: RngState) -> Dict[str, Case]:
    """One scalar test computation per registered primitive.

    Each output is contracted against fixed random weights so that every
    output coordinate contributes to the checked gradient.
    """
    r = rng.derive("primitives")
    w3 = _weighted(r, (3, 4))
    w_vec = _weighted(r, (4,))
    w_row = _weighted(r, (3,))
    cases: Dict[str, Case] = {
        "add": (lambda a, b: ((a + b) * w3).sum(), [r.normal((3, 4)), r.normal((1, 4))]),
        "subtract": (lambda a, b: ((a - b) * w3).sum(), [r.normal((3, 4)), r.normal((3, 4))]),
        "multiply": (lambda a, b: ((a * b) * w3).sum(), [r.normal((3, 4)), r.normal((4,))]),
        "divide": (lambda a, b: ((a / b) * w3).sum(),
                   [r.normal((3, 4)), r.uniform(0.5, 2.0, (3, 4))]),
        "negative": (lambda a: ((-a) * w3).sum(), [r.normal((3, 4))]),
        "exp": (lambda a: (a.exp() * w3).sum(), [r.normal((3, 4))]),
        "log": (lambda a: (a.log() * w3).sum(), [r.uniform(0.5, 2.0, (3, 4))]),
        "relu": (lambda a: (a.relu() * w3).sum(), [r.normal((3, 4))]),
        "clip_min": (lambda a: (P.clip_min(a, 0.1) * w3).sum(), [r.normal((3, 4))]),
        "matmul": (lambda a, b: ((a @ b) * w3).sum(), [r.normal((3, 5)), r.normal((5, 4))]),
        "sum": (lambda a: (a.sum(axis=0) * w_vec).sum(), [r.normal((3, 4))]),
        "mean": (lambda a: (a.mean(axis=1, keepdims=True) * w3).sum(), [r.normal((3, 4))]),
        "reshape": (lambda a: (a.reshape(3, 4) * w3).sum(), [r.normal((12,))]),
        "concat": (lambda a, b: (P.concat([a, b], axis=0) * w3).sum(),
                   [r.normal((1, 4)), r.normal((2, 4))]),
        "l2_normalize": (lambda a: (P.l2_normalize(a) * w3).sum(), [r.normal((3, 4))]),
        "stable_softmax": (lambda a: (P.stable_softmax(a) * w3).sum(), [r.normal((3, 4))]),
        "logsumexp": (lambda a: (P.logsumexp(a, axis=1) * w_row).sum(),
                      [r.normal((3, 4))]),
    }
    w_conv = _weighted(r, (2, 3, 4, 4))
    cases["conv2d"] = (lambda x, k: (P.conv2d(x, k) * w_conv).sum(),
                       [r.normal((2, 2, 4, 4)), r.normal((3, 2, 3, 3))])
    w_pool = _weighted(r, (2, 2, 2, 2))
    cases["max_pool2d"] = (lambda x: (P.max_pool2d(x) * w_pool).sum(), [r.normal((2, 2, 4, 4))])
    return cases
