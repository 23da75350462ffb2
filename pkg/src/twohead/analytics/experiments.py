"""
Sweeps and ablations over trained models and training arms.

Every function returns a pandas DataFrame; the CLI writes it as CSV.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..config.constants import Architecture, TrainMode
from ..config.settings import AttackConfig, RunSettings
from ..core.losses import contrastive_loss, kl_term, nce_loss
from ..core.model import EncoderParams, Weights, init_params
from ..core.objectives import ObjectiveFactory, clean_context
from ..core.membank import init_bank
from ..data.datasets import DatasetHandle
from ..numerics import RngState, finite_diff_check, l2_normalize, primitive_cases, stable_softmax
from .defense import evaluate

logger = logging.getLogger(__name__)


def epsilon_sweep(params: EncoderParams, test: DatasetHandle, atk: AttackConfig,
                  epsilons: Sequence[float], limit: Optional[int] = None, seed: int = 0,
                  threads: int = 1) -> pd.DataFrame:
    """Softmax-defense accuracy for each radius (in /255 units), step size kept."""
    rows = []
    for eps in epsilons:
        cfg = atk.model_copy(update={"epsilon": float(eps), "step_size": min(atk.step_size, float(eps))})
        report = evaluate(params, test, cfg, rng=RngState(seed), limit=limit, threads=threads)
        rows.append({"eps": float(eps), "K": cfg.steps, "top1": report.top1, "n_samples": report.n_samples})
    return pd.DataFrame(rows)


def attack_strength_sweep(params: EncoderParams, test: DatasetHandle, atk: AttackConfig,
                          steps: Sequence[int] = (10, 30, 200), limit: Optional[int] = None,
                          seed: int = 0, threads: int = 1) -> pd.DataFrame:
    """Accuracy under PGD with an increasing number of iterations."""
    rows = []
    for k in steps:
        cfg = atk.model_copy(update={"steps": int(k)})
        report = evaluate(params, test, cfg, rng=RngState(seed), limit=limit, threads=threads)
        rows.append({"K": int(k), "eps": cfg.epsilon, "top1": report.top1, "n_samples": report.n_samples})
    return pd.DataFrame(rows)


def _final_row(settings: RunSettings, params: EncoderParams, test: DatasetHandle,
               limit: Optional[int]) -> Dict[str, float]:
    clean = evaluate(params, test, None, limit=limit)
    robust = evaluate(params, test, settings.attack, rng=RngState(settings.train.seed),
                      limit=limit, threads=settings.run.threads)
    return {"clean_acc": clean.top1, "robust_acc": robust.top1}


def _with(settings: RunSettings, **sections: Dict) -> RunSettings:
    """Copy of ``settings`` with some fields of some sections replaced."""
    updates = {name: getattr(settings, name).model_copy(update=values) for name, values in sections.items()}
    return settings.model_copy(update=updates)


def memory_size_sweep(settings: RunSettings, train: DatasetHandle, test: DatasetHandle,
                      clean: Weights, capacities: Sequence[int] = (0, 256, 1024, 4096),
                      limit: Optional[int] = None) -> pd.DataFrame:
    """THAT with several bank sizes; capacity 0 drops the contrastive term."""
    from ..training.trainer import Trainer

    rows = []
    for capacity in capacities:
        if capacity == 0:
            run = _with(settings, train={"mode": TrainMode.THAT_NO_CL})
        else:
            run = _with(settings, train={"mode": TrainMode.THAT}, bank={"capacity": int(capacity)})
        params, metrics = Trainer(run).train(train, test, clean)
        row = {"capacity": int(capacity), "passes": metrics.passes}
        row.update(_final_row(run, params, test, limit))
        logger.info("bank %d: clean %.3f robust %.3f", capacity, row["clean_acc"], row["robust_acc"])
        rows.append(row)
    return pd.DataFrame(rows)


def compare_arms(settings: RunSettings, train: DatasetHandle, test: DatasetHandle,
                 clean: Optional[Weights], modes: Sequence[TrainMode],
                 seeds: Sequence[int] = (0, 1, 2), limit: Optional[int] = None) -> pd.DataFrame:
    """Train every arm once per seed; per-seed rows followed by one mean row per arm."""
    from ..training.trainer import Trainer

    rows: List[Dict] = []
    for mode in modes:
        for seed in seeds:
            run = _with(settings, train={"mode": mode, "seed": int(seed)})
            params, metrics = Trainer(run).train(train, test, clean)
            row = {"mode": mode.value, "seed": str(seed), "passes": metrics.passes}
            row.update(_final_row(run, params, test, limit))
            rows.append(row)
    frame = pd.DataFrame(rows)
    if frame.empty:
        return frame
    means = frame.groupby("mode", sort=False)[["clean_acc", "robust_acc", "passes"]].mean().reset_index()
    means["seed"] = "mean"
    return pd.concat([frame, means[frame.columns]], ignore_index=True)


def gradient_check_suite(settings: RunSettings, seed: int = 0, h: float = 1e-5, tol: float = 1e-4,
                         max_coords: int = 8) -> pd.DataFrame:
    """Finite-difference checks of every primitive, every loss term and the full objective.

    Objective checks run a float64 copy of a tiny network so central
    differences at ``h`` stay meaningful.
    """
    rng = RngState(seed).derive("gradcheck")
    frames = []
    for name, (f, arrays) in primitive_cases(rng).items():
        report = finite_diff_check(f, arrays, h=h, tol=tol, names=[f"{name}[{i}]" for i in range(len(arrays))],
                                   max_coords=max_coords, rng=rng.derive(name))
        frames.append(report.to_frame().assign(group="primitive"))

    r = rng.derive("losses")
    negatives = r.normal((6, 4))
    negatives /= np.linalg.norm(negatives, axis=1, keepdims=True)
    v = r.normal((3, 4))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    y = np.array([0, 2, 1])
    loss_cases = {
        "contrastive": (lambda u: contrastive_loss(l2_normalize(u, axis=-1), v, negatives,
                                                   settings.loss.temperature), [r.normal((3, 4))]),
        "nce": (lambda e, w: nce_loss(e, w, y, settings.loss.eta_init), [r.normal((3, 5)), r.normal((5, 3))]),
        "kl": (lambda a, b: kl_term(stable_softmax(a, axis=-1), stable_softmax(b, axis=-1)),
               [r.normal((3, 5)), r.normal((3, 5))]),
    }
    for name, (f, arrays) in loss_cases.items():
        report = finite_diff_check(f, arrays, h=h, tol=tol, names=[f"{name}[{i}]" for i in range(len(arrays))],
                                   max_coords=max_coords, rng=r.derive(name))
        frames.append(report.to_frame().assign(group="loss"))

    frames.extend(_objective_checks(settings, rng.derive("objectives"), h, tol, max_coords))
    return pd.concat(frames, ignore_index=True)


def _objective_checks(settings: RunSettings, rng: RngState, h: float, tol: float,
                      max_coords: int) -> List[pd.DataFrame]:
    arch = settings.model.model_copy(update={"widths": [8], "feat_dim": 4, "proj_hidden": 6})
    if arch.arch is Architecture.CONV:
        arch = arch.model_copy(update={"conv_channels": [2]})
    params = init_params(arch, rng.derive("init"), settings.loss.eta_init)
    params.clean = {k: v.astype(np.float64) for k, v in params.clean.items()}
    params.robust = {k: v.astype(np.float64) for k, v in params.robust.items()}
    x = rng.derive("x").uniform(0.0, 1.0, (3, *arch.input_shape))
    y = np.array([0, 1, 0]) % arch.num_classes
    bank = init_bank(8, arch.feat_dim, rng)
    frames = []
    for mode in (TrainMode.THAT, TrainMode.STANDARD_AT_KL, TrainMode.NATURAL_CON):
        objective = ObjectiveFactory.create_objective(mode, arch, settings.loss, settings.attack, settings.bank)
        ctx = clean_context(x, y, params, rng.derive(mode.value), bank)
        names = objective.trainable(params.robust)

        def f(*tensors, objective=objective, ctx=ctx, names=names):
            weights = dict(params.robust)
            weights.update(zip(names, tensors))
            return objective.loss(weights, ctx.x, ctx).total

        report = finite_diff_check(f, [params.robust[n] for n in names], h=h, tol=tol,
                                   names=[f"{mode.value}:{n}" for n in names], max_coords=max_coords,
                                   rng=rng.derive(mode.value, "coords"))
        frames.append(report.to_frame().assign(group="objective"))
    return frames

