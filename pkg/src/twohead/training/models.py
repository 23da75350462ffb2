"""
Data Models for Training Runs
"""

from dataclasses import asdict, dataclass, field
from typing import List, Optional

import pandas as pd

from ..config.constants import TrainMode


@dataclass
class EpochRecord:
    """One row of the metrics CSV"""
    epoch: int
    lr: float
    loss_cl: float
    loss_nce: float
    loss_ce: float
    loss_kl: float
    clean_acc: float
    robust_acc: float
    passes: int
    wall_clock: float


@dataclass
class RunMetrics:
    """Per-epoch history plus the forward-backward pass counter"""
    mode: TrainMode
    eval_steps: int
    epochs: List[EpochRecord] = field(default_factory=list)
    passes: int = 0
    weight_updates: int = 0
    samples_pushed: int = 0

    @property
    def robust_column(self) -> str:
        return f"robust_acc@{self.eval_steps}"

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.epochs[-1] if self.epochs else None

    @property
    def best_robust_acc(self) -> float:
        return max((r.robust_acc for r in self.epochs), default=0.0)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(r) for r in self.epochs])
        return frame.rename(columns={"robust_acc": self.robust_column})
