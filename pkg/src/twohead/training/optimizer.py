"""SGD with momentum and coupled weight decay."""
from typing import Dict, Iterable, Mapping, Optional

import numpy as np

from ..config.settings import TrainConfig

NO_DECAY = ("cls.log_eta",)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Base rate decayed once for every milestone at or before ``epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    passed = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.lr * cfg.lr_decay ** passed


class SGD:
    """v <- mu * v + (g + wd * w);  w <- w - lr * v

    The first step starts from v = 0. Tensors named in ``no_decay`` skip the
    weight-decay term.
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 1e-4,
                 no_decay: Iterable[str] = NO_DECAY):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, weights: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        """Update ``weights`` in place for every tensor that has a gradient."""
        for name, g in grads.items():
            w = weights[name]
            g = np.asarray(g, dtype=w.dtype)
            if self.weight_decay and name not in self.no_decay:
                g = g + w.dtype.type(self.weight_decay) * w
            v: Optional[np.ndarray] = self.velocity.get(name)
            v = g if v is None else w.dtype.type(self.momentum) * v + g
            self.velocity[name] = v
            weights[name] = (w - w.dtype.type(lr) * v).astype(w.dtype)
