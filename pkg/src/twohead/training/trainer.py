"""
Trainer - Main orchestrator for the training arms

Standard training runs K-step PGD per batch and one weight update; free
training replays every batch m times, each replay spending one combined
forward-backward on both the weights and the persistent perturbation.
"""

import logging
import math
import time
from collections import defaultdict
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from ..config.constants import FREE_MODES, AttackMode, CleanEncoderPolicy, NormType
from ..config.settings import RunSettings
from ..core.attack import project
from ..core.exceptions import ConfigInconsistencyError
from ..core.membank import MemoryBank, init_bank
from ..core.model import EncoderParams, Weights, encode, init_params, momentum_update
from ..core.objectives import BatchContext, NaturalObjective, ObjectiveFactory, TrainingObjective
from ..analytics.defense import evaluate
from ..data.datasets import DatasetHandle
from ..numerics import RngState, Tensor, value_and_grad
from .models import EpochRecord, RunMetrics
from .optimizer import SGD, lr_at
from .results_manager import ResultsManager

logger = logging.getLogger(__name__)

LOSS_PARTS = ("loss_cl", "loss_nce", "loss_ce", "loss_kl")
CLEAN_GATE = 0.9


def clean_accuracy(weights: Weights, settings: RunSettings, data: DatasetHandle) -> float:
    """Raw-logit accuracy of a naturally trained network."""
    if len(data) == 0:
        return 0.0
    logits = encode(data.images, weights, settings.model, with_feature=False).logits.numpy()
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


class Trainer:
    """Runs one training arm end to end"""

    def __init__(self, settings: RunSettings, results: Optional[ResultsManager] = None):
        self.settings = settings
        self.results = results
        self.rng = RngState(settings.train.seed)
        self.objective: TrainingObjective = ObjectiveFactory.create_objective(
            settings.train.mode, settings.model, settings.loss, settings.attack,
            settings.bank, settings.run.threads,
        )
        self.eval_attack = settings.attack.model_copy(
            update={"steps": settings.train.eval_steps, "mode": AttackMode.UNTARGETED})

    # ------------------------------------------------------------------ setup

    def _batches(self, n: int, epoch: int, stream: str = "shuffle") -> List[np.ndarray]:
        order = self.rng.derive(stream, epoch).permutation(n)
        size = self.settings.train.batch_size
        return [order[i:i + size] for i in range(0, n, size)]

    def _progress(self, batches, desc: str):
        return tqdm(batches, desc=desc, leave=False, disable=not self.settings.run.progress)

    def _setup(self, clean: Optional[Weights]) -> Tuple[EncoderParams, Optional[MemoryBank]]:
        cfg = self.settings
        params = init_params(cfg.model, self.rng.derive("init"), cfg.loss.eta_init)
        if self.objective.needs_clean_encoder:
            if clean is None:
                raise ConfigInconsistencyError(
                    f"mode {cfg.train.mode.value} needs a trained clean encoder; run train-clean first")
            params.clean = {k: np.array(v, copy=True) for k, v in clean.items()}
        elif clean is not None:
            params.clean = {k: np.array(v, copy=True) for k, v in clean.items()}
        bank = None
        if self.objective.uses_bank:
            bank = init_bank(cfg.bank.capacity, cfg.model.feat_dim, self.rng)
        params.metadata = {"mode": cfg.train.mode.value, "seed": str(cfg.train.seed)}
        return params, bank

    def _context(self, data: DatasetHandle, idx: np.ndarray, params: EncoderParams,
                 bank: Optional[MemoryBank], rng: RngState) -> BatchContext:
        x, y = data.images[idx], data.labels[idx]
        ctx = BatchContext(x=x, y=y, ids=idx, rng=rng)
        if self.objective.uses_bank:
            ctx.clean_features = encode(x, params.clean, params.arch).feature.numpy()
            ctx.negatives = bank.negatives()
        return ctx

    # ------------------------------------------------------------------ steps

    @staticmethod
    def _step(objective: TrainingObjective, weights: Weights, names: List[str], x_in: np.ndarray,
              ctx: BatchContext, optimizer: SGD, lr: float,
              with_input: bool = False) -> Tuple[Dict[str, float], Optional[np.ndarray]]:
        """One forward-backward and one SGD update; optionally also d loss / d x_in."""
        holder = {}
        sources = [weights[n] for n in names]
        if with_input:
            sources.append(x_in)

        def loss(*tensors: Tensor) -> Tensor:
            current = dict(weights)
            current.update(zip(names, tensors))
            inputs = tensors[-1] if with_input else x_in
            holder["breakdown"] = objective.loss(current, inputs, ctx)
            return holder["breakdown"].total

        _, grads = value_and_grad(loss, sources)
        optimizer.step(weights, {n: g.data for n, g in zip(names, grads)}, lr)
        input_grad = grads[-1].data if with_input else None
        return holder["breakdown"].parts, input_grad

    def _after_batch(self, params: EncoderParams, bank: Optional[MemoryBank], ctx: BatchContext,
                     metrics: RunMetrics) -> None:
        if bank is not None:
            bank.push(ctx.clean_features)
            metrics.samples_pushed += len(ctx.clean_features)
        train = self.settings.train
        if train.clean_policy is CleanEncoderPolicy.MOMENTUM and self.objective.needs_clean_encoder:
            params.clean = momentum_update(params.clean, params.robust, train.clean_momentum)

    def _close_epoch(self, epoch: int, lr: float, sums: Dict[str, float], batches: int,
                     params: EncoderParams, bank: Optional[MemoryBank], test: DatasetHandle,
                     metrics: RunMetrics, started: float) -> None:
        train = self.settings.train
        clean = evaluate(params, test, None, limit=train.eval_samples)
        robust = evaluate(params, test, self.eval_attack, rng=self.rng.derive("monitor", epoch),
                          limit=train.eval_samples, threads=self.settings.run.threads)
        record = EpochRecord(
            epoch=epoch,
            lr=lr,
            **{part: sums.get(part, 0.0) / max(batches, 1) for part in LOSS_PARTS},
            clean_acc=clean.top1,
            robust_acc=robust.top1,
            passes=metrics.passes,
            wall_clock=time.perf_counter() - started,
        )
        improved = record.robust_acc > metrics.best_robust_acc or not metrics.epochs
        metrics.epochs.append(record)
        logger.info("epoch %d lr=%.4g clean=%.3f robust@%d=%.3f passes=%d", epoch, lr,
                    record.clean_acc, train.eval_steps, record.robust_acc, metrics.passes)

        if self.results is None:
            return
        params.metadata["epoch"] = str(epoch)
        self.results.write_metrics(metrics)
        if (epoch + 1) % train.checkpoint_every == 0:
            self.results.save_checkpoint(f"epoch_{epoch:03d}", params, bank)
        if improved:
            self.results.save_checkpoint("best", params, bank)

    def _finish(self, params: EncoderParams, bank: Optional[MemoryBank]) -> None:
        if self.results is not None:
            self.results.save_checkpoint("final", params, bank)

    # --------------------------------------------------------------- training

    def train_clean_encoder(self, train: DatasetHandle, test: Optional[DatasetHandle] = None) -> Weights:
        """Natural cross-entropy training of the clean network; the projection head keeps its init."""
        cfg = self.settings
        weights = init_params(cfg.model, self.rng.derive("init"), cfg.loss.eta_init).clean
        objective = NaturalObjective(cfg.model, cfg.loss, cfg.attack, cfg.bank, cfg.run.threads)
        names = objective.trainable(weights)
        optimizer = SGD(cfg.train.momentum, cfg.train.weight_decay)
        for epoch in range(cfg.train.epochs):
            lr = lr_at(epoch, cfg.train)
            batches = self._batches(len(train), epoch, "clean")
            for idx in self._progress(batches, f"clean {epoch}"):
                ctx = BatchContext(x=train.images[idx], y=train.labels[idx], ids=idx, rng=self.rng)
                self._step(objective, weights, names, ctx.x, ctx, optimizer, lr)
        if test is not None:
            accuracy = clean_accuracy(weights, cfg, test)
            logger.info("clean encoder accuracy %.3f", accuracy)
            if accuracy <= CLEAN_GATE:
                logger.warning("clean encoder accuracy %.3f is at or below %.2f; robust training "
                               "will align to a weak target", accuracy, CLEAN_GATE)
        return weights

    def train(self, train: DatasetHandle, test: DatasetHandle,
              clean: Optional[Weights] = None) -> Tuple[EncoderParams, RunMetrics]:
        if self.settings.train.mode in FREE_MODES:
            return self.train_free(train, test, clean)
        return self.train_standard(train, test, clean)

    def train_standard(self, train: DatasetHandle, test: DatasetHandle,
                       clean: Optional[Weights] = None) -> Tuple[EncoderParams, RunMetrics]:
        """K-step PGD, then one update, per batch: K + 1 forward-backward passes."""
        if len(train) == 0:
            raise ConfigInconsistencyError("the training set is empty")
        cfg = self.settings.train
        params, bank = self._setup(clean)
        objective = self.objective
        names = objective.trainable(params.robust)
        optimizer = SGD(cfg.momentum, cfg.weight_decay)
        metrics = RunMetrics(cfg.mode, cfg.eval_steps)

        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            lr = lr_at(epoch, cfg)
            sums: Dict[str, float] = defaultdict(float)
            batches = self._batches(len(train), epoch)
            for b, idx in enumerate(self._progress(batches, f"{cfg.mode.value} {epoch}")):
                ctx = self._context(train, idx, params, bank, self.rng.derive("batch", epoch, b))
                x_in = objective.adversarial_inputs(params, ctx)
                metrics.passes += objective.attack_passes
                parts, _ = self._step(objective, params.robust, names, x_in, ctx, optimizer, lr)
                metrics.passes += 1
                metrics.weight_updates += 1
                for key, value in parts.items():
                    sums[key] += value
                self._after_batch(params, bank, ctx, metrics)
            self._close_epoch(epoch, lr, sums, len(batches), params, bank, test, metrics, started)

        self._finish(params, bank)
        return params, metrics

    def _free_delta_step(self, delta: np.ndarray, g: np.ndarray) -> np.ndarray:
        atk = self.settings.attack
        axes = tuple(range(1, delta.ndim))
        g = g.astype(np.float64)
        if atk.norm is NormType.LINF:
            step = np.sign(g)
        else:
            length = np.sqrt(np.sum(g * g, axis=axes, keepdims=True))
            step = np.where(length > 0, g / np.where(length > 0, length, 1.0), 0.0)
        return project(delta + atk.eps * step, atk.eps, atk.norm, axis=axes)

    def train_free(self, train: DatasetHandle, test: DatasetHandle,
                   clean: Optional[Weights] = None) -> Tuple[EncoderParams, RunMetrics]:
        """ceil(epochs / m) passes over the data, each batch replayed m times.

        The perturbation is carried across replays and across batches.
        """
        if len(train) == 0:
            raise ConfigInconsistencyError("the training set is empty")
        cfg = self.settings.train
        atk = self.settings.attack
        replays = cfg.replays
        params, bank = self._setup(clean)
        objective = self.objective
        names = objective.trainable(params.robust)
        optimizer = SGD(cfg.momentum, cfg.weight_decay)
        metrics = RunMetrics(cfg.mode, cfg.eval_steps)
        delta = np.zeros((cfg.batch_size, *self.settings.model.input_shape))

        for epoch in range(math.ceil(cfg.epochs / replays)):
            started = time.perf_counter()
            lr = lr_at(epoch * replays, cfg)
            sums: Dict[str, float] = defaultdict(float)
            batches = self._batches(len(train), epoch)
            for b, idx in enumerate(self._progress(batches, f"{cfg.mode.value} {epoch}")):
                ctx = self._context(train, idx, params, bank, self.rng.derive("batch", epoch, b))
                n = len(idx)
                x64 = ctx.x.astype(np.float64)
                for _ in range(replays):
                    x_in = np.clip(x64 + delta[:n], atk.lo, atk.hi).astype(ctx.x.dtype)
                    parts, g = self._step(objective, params.robust, names, x_in, ctx, optimizer, lr,
                                          with_input=True)
                    delta[:n] = self._free_delta_step(delta[:n], g)
                    metrics.passes += 1
                    metrics.weight_updates += 1
                    for key, value in parts.items():
                        sums[key] += value / replays
                self._after_batch(params, bank, ctx, metrics)
            self._close_epoch(epoch, lr, sums, len(batches), params, bank, test, metrics, started)

        self._finish(params, bank)
        return params, metrics


def train_clean_encoder(train: DatasetHandle, settings: RunSettings,
                        test: Optional[DatasetHandle] = None) -> Weights:
    return Trainer(settings).train_clean_encoder(train, test)


def train_standard(train: DatasetHandle, test: DatasetHandle, settings: RunSettings,
                   clean: Optional[Weights] = None,
                   results: Optional[ResultsManager] = None) -> Tuple[EncoderParams, RunMetrics]:
    return Trainer(settings, results).train_standard(train, test, clean)


def train_free(train: DatasetHandle, test: DatasetHandle, settings: RunSettings,
               clean: Optional[Weights] = None,
               results: Optional[ResultsManager] = None) -> Tuple[EncoderParams, RunMetrics]:
    return Trainer(settings, results).train_free(train, test, clean)
