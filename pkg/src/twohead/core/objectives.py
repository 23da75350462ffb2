"""Training objectives, one per training mode.

Every objective knows which loss its attacker ascends and how to score a
batch of (possibly adversarial) inputs. ``ObjectiveFactory`` maps a
``TrainMode`` to its objective; free modes share the objective of their
standard counterpart and differ only in how the trainer produces inputs.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple, Type

import numpy as np

from ..config.constants import AttackLoss, TrainMode
from ..config.settings import ArchitectureConfig, AttackConfig, BankConfig, LossConfig
from ..numerics import RngState, Tensor, as_tensor, stable_softmax
from .attack import pgd_attack
from .exceptions import ConfigInconsistencyError
from .losses import contrastive_loss, cross_entropy, kl_term, nce_loss
from .membank import MemoryBank, duplicate_mask
from .model import CLASSIFIER, LOG_ETA, EncoderParams, encode


@dataclass
class BatchContext:
    """Everything about the current mini-batch an objective may read."""
    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    rng: RngState
    clean_features: Optional[np.ndarray] = None
    negatives: Optional[np.ndarray] = None


@dataclass
class LossBreakdown:
    total: Tensor
    parts: Dict[str, float] = field(default_factory=dict)


class TrainingObjective(ABC):
    """Loss of one training arm plus the attack that feeds it."""

    attack_kind: Optional[AttackLoss] = None
    uses_bank: bool = False
    uses_eta: bool = False

    def __init__(self, arch: ArchitectureConfig, loss_cfg: LossConfig, attack_cfg: AttackConfig,
                 bank_cfg: Optional[BankConfig] = None, threads: int = 1):
        self.arch = arch
        self.loss_cfg = loss_cfg
        self.attack_cfg = attack_cfg
        self.bank_cfg = bank_cfg or BankConfig()
        self.threads = threads

    @property
    def needs_clean_encoder(self) -> bool:
        return self.uses_bank

    def trainable(self, names) -> List[str]:
        """Parameter names this objective updates; the rest stay at their init."""
        keep = []
        for name in names:
            if name.startswith("feat.") and not self.uses_bank:
                continue
            if name == LOG_ETA and not self.uses_eta:
                continue
            keep.append(name)
        return keep

    @property
    def attack_passes(self) -> int:
        """Forward-backward passes the attacker spends per batch."""
        return self.attack_cfg.steps if self.attack_kind is not None else 0

    def adversarial_inputs(self, params: EncoderParams, ctx: BatchContext) -> np.ndarray:
        if self.attack_kind is None:
            return ctx.x
        return pgd_attack(ctx.x, ctx.y, params, self.attack_kind, self.attack_cfg,
                          ctx.rng.derive("attack"), ctx.ids, self.threads)

    @abstractmethod
    def loss(self, weights: Mapping[str, Tensor], x_in, ctx: BatchContext) -> LossBreakdown:
        pass

    def _eta(self, weights: Mapping[str, Tensor]):
        if LOG_ETA in weights:
            return as_tensor(weights[LOG_ETA]).exp()
        return self.loss_cfg.eta_init

    def _nce(self, weights, trunk: Tensor, y) -> Tensor:
        return nce_loss(trunk, weights[CLASSIFIER], y, self._eta(weights))

    def _contrastive(self, feature: Tensor, ctx: BatchContext) -> Tensor:
        if ctx.clean_features is None or ctx.negatives is None:
            raise ConfigInconsistencyError("contrastive objective needs clean features and a memory bank")
        mask = None
        if self.bank_cfg.exclude_positive:
            mask = duplicate_mask(ctx.negatives, ctx.clean_features)
        return contrastive_loss(feature, ctx.clean_features, ctx.negatives, self.loss_cfg.temperature, mask)


class NaturalObjective(TrainingObjective):
    """Cross-entropy on clean inputs."""

    def loss(self, weights, x_in, ctx):
        ce = cross_entropy(encode(x_in, weights, self.arch, with_feature=False).logits, ctx.y)
        return LossBreakdown(ce, {"loss_ce": ce.item()})


class NaturalContrastiveObjective(TrainingObjective):
    """Clean cross-entropy plus feature alignment with the clean encoder."""
    uses_bank = True

    def loss(self, weights, x_in, ctx):
        enc = encode(x_in, weights, self.arch)
        ce = cross_entropy(enc.logits, ctx.y)
        cl = self._contrastive(enc.feature, ctx)
        return LossBreakdown(ce + cl, {"loss_ce": ce.item(), "loss_cl": cl.item()})


class StandardATObjective(TrainingObjective):
    """Min-max training: cross-entropy on PGD examples."""
    attack_kind = AttackLoss.CE

    def loss(self, weights, x_in, ctx):
        ce = cross_entropy(encode(x_in, weights, self.arch, with_feature=False).logits, ctx.y)
        return LossBreakdown(ce, {"loss_ce": ce.item()})


class StandardATKLObjective(TrainingObjective):
    """Adversarial cross-entropy plus lambda * KL(clean prediction || adversarial prediction)."""
    attack_kind = AttackLoss.CE

    def loss(self, weights, x_in, ctx):
        z_adv = encode(x_in, weights, self.arch, with_feature=False).logits
        z_clean = encode(ctx.x, weights, self.arch, with_feature=False).logits
        ce = cross_entropy(z_adv, ctx.y)
        kl = kl_term(stable_softmax(z_clean, axis=-1), stable_softmax(z_adv, axis=-1))
        total = ce + kl * self.loss_cfg.kl_weight
        return LossBreakdown(total, {"loss_ce": ce.item(), "loss_kl": kl.item()})


class THATObjective(TrainingObjective):
    """Normalized cross-entropy on PGD examples plus contrastive alignment, unweighted."""
    attack_kind = AttackLoss.NCE
    uses_bank = True
    uses_eta = True

    def loss(self, weights, x_in, ctx):
        enc = encode(x_in, weights, self.arch)
        nce = self._nce(weights, enc.trunk, ctx.y)
        cl = self._contrastive(enc.feature, ctx)
        return LossBreakdown(nce + cl, {"loss_nce": nce.item(), "loss_cl": cl.item()})


class THATNoCLObjective(TrainingObjective):
    attack_kind = AttackLoss.NCE
    uses_eta = True

    def loss(self, weights, x_in, ctx):
        nce = self._nce(weights, encode(x_in, weights, self.arch, with_feature=False).trunk, ctx.y)
        return LossBreakdown(nce, {"loss_nce": nce.item()})


class THATNoNCEObjective(TrainingObjective):
    """Plain cross-entropy in place of the normalized head, contrastive term kept."""
    attack_kind = AttackLoss.CE
    uses_bank = True

    def loss(self, weights, x_in, ctx):
        enc = encode(x_in, weights, self.arch)
        ce = cross_entropy(enc.logits, ctx.y)
        cl = self._contrastive(enc.feature, ctx)
        return LossBreakdown(ce + cl, {"loss_ce": ce.item(), "loss_cl": cl.item()})


class ObjectiveFactory:
    """Factory for training objectives"""

    _objectives: Dict[TrainMode, Type[TrainingObjective]] = {
        TrainMode.NATURAL: NaturalObjective,
        TrainMode.NATURAL_CON: NaturalContrastiveObjective,
        TrainMode.STANDARD_AT: StandardATObjective,
        TrainMode.STANDARD_AT_KL: StandardATKLObjective,
        TrainMode.THAT: THATObjective,
        TrainMode.THAT_NO_CL: THATNoCLObjective,
        TrainMode.THAT_NO_NCE: THATNoNCEObjective,
        TrainMode.FREE_AT: StandardATObjective,
        TrainMode.FREE_THAT: THATObjective,
    }

    @staticmethod
    def create_objective(mode: TrainMode, arch: ArchitectureConfig, loss_cfg: LossConfig,
                         attack_cfg: AttackConfig, bank_cfg: Optional[BankConfig] = None,
                         threads: int = 1) -> TrainingObjective:
        objective_class = ObjectiveFactory._objectives.get(mode)
        if objective_class is None:
            raise ConfigInconsistencyError(f"no objective for training mode {mode}")
        return objective_class(arch, loss_cfg, attack_cfg, bank_cfg, threads)

    @staticmethod
    def get_available_modes() -> list:
        return list(ObjectiveFactory._objectives.keys())


def clean_context(x: np.ndarray, y: np.ndarray, params: EncoderParams, rng: RngState,
                  bank: Optional[MemoryBank] = None, ids: Optional[np.ndarray] = None) -> BatchContext:
    """Batch context with clean-encoder features and a bank snapshot."""
    v = encode(x.astype(params.clean[CLASSIFIER].dtype), params.clean, params.arch).feature.numpy()
    return BatchContext(
        x=x, y=np.asarray(y), ids=np.arange(len(x)) if ids is None else ids, rng=rng,
        clean_features=v, negatives=None if bank is None else bank.negatives(),
    )


def combined_objective(x, y, params: EncoderParams, memory: MemoryBank, cfg: LossConfig,
                       atk: AttackConfig, rng: Optional[RngState] = None) -> Tuple[float, np.ndarray]:
    """NCE on PGD examples (attacking the NCE head) plus the contrastive term.

    Returns the loss value and the adversarial batch it was evaluated on.
    """
    x = np.asarray(x)
    if x.ndim == len(params.arch.input_shape):
        x = x[None]
    y = np.atleast_1d(np.asarray(y))
    objective = THATObjective(params.arch, cfg, atk)
    ctx = clean_context(x, y, params, rng or RngState(0), memory)
    x_adv = objective.adversarial_inputs(params, ctx)
    weights = {k: Tensor(v) for k, v in params.robust.items()}
    return objective.loss(weights, x_adv, ctx).total.item(), x_adv
