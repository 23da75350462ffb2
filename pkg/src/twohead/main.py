"""
Robust two-head encoders - Command-line entry point

    twohead train-clean --config desk.cfg
    twohead train --mode that --config desk.cfg --seed 7
    twohead eval --defense knn --attack pgd --k-steps 10
    twohead surface --dirs adv,rademacher --sample 3
"""

import argparse
import io
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .analytics.defense import GalleryIndex, build_gallery, evaluate
from .analytics.experiments import (
    attack_strength_sweep,
    compare_arms,
    epsilon_sweep,
    gradient_check_suite,
    memory_size_sweep,
)
from .analytics.surface import SurfaceSpec, loss_grid
from .config.constants import (
    AttackLoss,
    AttackMode,
    DefenseMode,
    DirectionKind,
    NormType,
    TrainMode,
)
from .config.settings import AttackConfig, RunSettings, load_settings
from .core.attack import pgd_attack
from .core.checkpoint import load_checkpoint
from .core.exceptions import ConfigInconsistencyError, TwoHeadError
from .core.model import init_params
from .data.datasets import DatasetHandle, load_dataset
from .numerics import RngState
from .training.results_manager import ResultsManager
from .training.trainer import Trainer, clean_accuracy
from .utils.helpers import atomic_write_bytes, atomic_write_text, configure_logging, file_sha256, format_percentage
from .visualization.charts import create_surface_chart, create_training_chart, write_chart

logger = logging.getLogger(__name__)

DIRECTION_ALIASES = {"adv": DirectionKind.ADVERSARIAL, "rand": DirectionKind.RADEMACHER}


def _csv_list(cast):
    def parse(text: str) -> List[Any]:
        return [cast(part.strip()) for part in text.split(",") if part.strip()]
    return parse


def _direction(text: str) -> DirectionKind:
    return DIRECTION_ALIASES.get(text) or DirectionKind(text)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="sectioned key = value config file")
    common.add_argument("--seed", type=int, help="training and attack seed")
    common.add_argument("--threads", type=int, help="worker threads for attack generation")
    common.add_argument("--name", help="run name (directory under the output dir)")
    common.add_argument("--output-dir", type=Path, help="root directory for run artifacts")
    common.add_argument("--quiet", action="store_true", help="hide progress bars")
    return common


def _attack_flags(parser: argparse.ArgumentParser, default: str = "pgd") -> None:
    parser.add_argument("--attack", choices=["none", "pgd", "fgsm"], default=default)
    parser.add_argument("--k-steps", type=int, help="PGD iterations")
    parser.add_argument("--eps", type=float, help="radius in /255 units")
    parser.add_argument("--step-size", type=float, help="step in /255 units")
    parser.add_argument("--norm", choices=[n.value for n in NormType])
    parser.add_argument("--targeted", action="store_true")
    parser.add_argument("--attack-loss", choices=[k.value for k in AttackLoss])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twohead", description="Robust two-head encoders at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    clean = sub.add_parser("train-clean", parents=[common], help="naturally train the clean encoder")
    clean.add_argument("--epochs", type=int)

    train = sub.add_parser("train", parents=[common], help="train one arm")
    train.add_argument("--mode", choices=[m.value for m in TrainMode])
    train.add_argument("--epochs", type=int)
    train.add_argument("--replays", type=int, help="replay count m for free modes")
    train.add_argument("--clean", type=Path, help="clean-encoder checkpoint")

    attack = sub.add_parser("attack", parents=[common], help="write adversarial examples")
    _attack_flags(attack)
    attack.add_argument("--checkpoint", type=Path)
    attack.add_argument("--limit", type=int)
    attack.add_argument("--out", type=Path, required=True, help=".npz with images, adversarial and labels")

    ev = sub.add_parser("eval", parents=[common], help="evaluate a defense under attack")
    _attack_flags(ev)
    ev.add_argument("--checkpoint", type=Path)
    ev.add_argument("--defense", choices=[d.value for d in DefenseMode])
    ev.add_argument("--k", type=int, help="neighbors for the KNN defense")
    ev.add_argument("--gallery", type=Path)
    ev.add_argument("--limit", type=int)
    ev.add_argument("--out", type=Path, help="report CSV")

    surface = sub.add_parser("surface", parents=[common], help="export a loss surface")
    surface.add_argument("--checkpoint", type=Path)
    surface.add_argument("--dirs", type=_csv_list(_direction))
    surface.add_argument("--sample", type=int)
    surface.add_argument("--resolution", type=int)
    surface.add_argument("--half-range", type=float, help="in /255 units")
    surface.add_argument("--out", type=Path)
    surface.add_argument("--html", type=Path, help="also write a contour chart")

    gallery = sub.add_parser("gallery", parents=[common], help="build the KNN gallery")
    gallery.add_argument("--checkpoint", type=Path)
    gallery.add_argument("--out", type=Path)

    gradcheck = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    gradcheck.add_argument("--out", type=Path)

    sweep = sub.add_parser("sweep", parents=[common], help="sweeps and ablations")
    sweep.add_argument("--kind", choices=["eps", "steps", "memory", "arms"], required=True)
    sweep.add_argument("--checkpoint", type=Path)
    sweep.add_argument("--clean", type=Path)
    sweep.add_argument("--values", type=_csv_list(float), help="eps, K or capacity values")
    sweep.add_argument("--modes", type=_csv_list(TrainMode))
    sweep.add_argument("--seeds", type=_csv_list(int))
    sweep.add_argument("--limit", type=int)
    sweep.add_argument("--out", type=Path)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Nested settings overrides from the flags that were given."""
    out: Dict[str, Dict[str, Any]] = {}

    def put(section: str, key: str, value: Any) -> None:
        if value is not None:
            out.setdefault(section, {})[key] = value

    put("train", "seed", args.seed)
    put("run", "threads", args.threads)
    put("run", "name", args.name)
    put("run", "output_dir", args.output_dir)
    if args.quiet:
        put("run", "progress", False)
    put("train", "mode", getattr(args, "mode", None))
    put("train", "epochs", getattr(args, "epochs", None))
    put("train", "replays", getattr(args, "replays", None))
    put("attack", "steps", getattr(args, "k_steps", None))
    put("attack", "epsilon", getattr(args, "eps", None))
    put("attack", "step_size", getattr(args, "step_size", None))
    put("attack", "norm", getattr(args, "norm", None))
    put("attack", "loss", getattr(args, "attack_loss", None))
    if getattr(args, "targeted", False):
        put("attack", "mode", AttackMode.TARGETED.value)
    put("defense", "mode", getattr(args, "defense", None))
    put("defense", "k", getattr(args, "k", None))
    put("surface", "resolution", getattr(args, "resolution", None))
    put("surface", "half_range", getattr(args, "half_range", None))
    put("surface", "sample_index", getattr(args, "sample", None))
    if getattr(args, "dirs", None):
        put("surface", "directions", [d.value for d in args.dirs])
    return out


def _attack_config(settings: RunSettings, kind: str) -> Optional[AttackConfig]:
    if kind == "none":
        return None
    if kind == "fgsm":
        return settings.attack.model_copy(
            update={"steps": 1, "step_size": settings.attack.epsilon, "random_start": False})
    return settings.attack


def _checkpoint(args: argparse.Namespace, results: ResultsManager):
    path = args.checkpoint or results.checkpoint_path("final")
    return load_checkpoint(path)


def _data(settings: RunSettings):
    return load_dataset(settings.data, arch=settings.model)


def _clean_weights(path: Optional[Path], results: ResultsManager):
    path = path or results.checkpoint_path("clean")
    if not Path(path).exists():
        return None
    return load_checkpoint(path).params.clean


def cmd_train_clean(args, settings: RunSettings, results: ResultsManager) -> int:
    train, test = _data(settings)
    trainer = Trainer(settings)
    weights = trainer.train_clean_encoder(train, test)
    params = init_params(settings.model, trainer.rng.derive("init"), settings.loss.eta_init)
    params.clean = weights
    params.metadata = {"mode": "clean", "seed": str(settings.train.seed)}
    path = results.save_checkpoint("clean", params)
    accuracy = clean_accuracy(weights, settings, test)
    print(f"✅ Clean encoder trained: {format_percentage(accuracy)} test accuracy -> {path}")
    return 0


def cmd_train(args, settings: RunSettings, results: ResultsManager) -> int:
    train, test = _data(settings)
    trainer = Trainer(settings, results)
    clean = _clean_weights(args.clean, results)
    results.save_config(settings)
    params, metrics = trainer.train(train, test, clean)
    write_chart(create_training_chart(metrics.to_frame(), f"{settings.train.mode.value} training"),
                results.run_dir / "training.html")
    final = metrics.final
    path = results.checkpoint_path("final")
    print(f"✅ Trained {settings.train.mode.value}: {len(metrics.epochs)} epochs, {metrics.passes} passes")
    print(f"📊 Clean {format_percentage(final.clean_acc)} | "
          f"robust@{settings.train.eval_steps} {format_percentage(final.robust_acc)}")
    print(f"📊 Checkpoint {path} sha256 {file_sha256(path)}")
    return 0


def cmd_attack(args, settings: RunSettings, results: ResultsManager) -> int:
    cfg = _attack_config(settings, args.attack)
    if cfg is None:
        raise ConfigInconsistencyError("the attack command needs --attack pgd or fgsm")
    checkpoint = _checkpoint(args, results)
    _, test = _data(settings)
    n = len(test) if args.limit is None else min(args.limit, len(test))
    x, y = test.images[:n], test.labels[:n]
    x_adv = pgd_attack(x, y, checkpoint.params, None, cfg, RngState(settings.train.seed).derive("evaluate"),
                       np.arange(n), settings.run.threads)
    buffer = io.BytesIO()
    np.savez(buffer, images=x, adversarial=x_adv, labels=y)
    atomic_write_bytes(args.out, buffer.getvalue())
    print(f"✅ {n} adversarial examples written to {args.out}")
    return 0


def _gallery(args, settings: RunSettings, checkpoint, results: ResultsManager) -> GalleryIndex:
    if args.gallery is not None:
        return GalleryIndex.load(args.gallery)
    train, _ = _data(settings)
    return build_gallery(train, checkpoint.params)


def cmd_eval(args, settings: RunSettings, results: ResultsManager) -> int:
    checkpoint = _checkpoint(args, results)
    _, test = _data(settings)
    defense = settings.defense.mode
    gallery = _gallery(args, settings, checkpoint, results) if defense is DefenseMode.KNN else None
    report = evaluate(checkpoint.params, test, _attack_config(settings, args.attack), defense, gallery,
                      settings.defense.k, RngState(settings.train.seed), args.limit or settings.defense.eval_limit,
                      settings.run.threads)
    out = args.out or results.run_dir / "reports" / f"eval_{defense.value}_{report.attack}.csv"
    atomic_write_text(out, report.to_frame().to_csv(index=False))
    atomic_write_text(out.with_name(out.stem + "_losses.csv"),
                      report.loss_frame().to_csv(index=False, float_format="%.17g"))
    print(f"📊 {defense.value} defense, attack {report.attack} (K={report.steps}, eps={report.epsilon}/255): "
          f"top-1 {format_percentage(report.top1)} on {report.n_samples} samples -> {out}")
    return 0


def cmd_surface(args, settings: RunSettings, results: ResultsManager) -> int:
    checkpoint = _checkpoint(args, results)
    _, test = _data(settings)
    cfg = settings.surface
    if cfg.sample_index >= len(test):
        raise ConfigInconsistencyError(f"sample {cfg.sample_index} is outside the {len(test)}-sample test set")
    spec = SurfaceSpec(
        center=test.images[cfg.sample_index],
        label=int(test.labels[cfg.sample_index]),
        directions=tuple(cfg.directions),
        resolution=cfg.resolution,
        half_range=None if cfg.half_range is None else cfg.half_range / 255.0,
        loss=cfg.loss,
        seed=settings.train.seed,
    )
    surface = loss_grid(spec, checkpoint.params, settings.attack)
    out = args.out or results.run_dir / "reports" / f"surface_{cfg.sample_index}.csv"
    surface.save(out)
    if args.html is not None:
        write_chart(create_surface_chart(surface, f"Loss surface, sample {cfg.sample_index}"), args.html)
    print(f"✅ {cfg.resolution}x{cfg.resolution} surface written to {out} "
          f"(center {surface.center:.6g}, {surface.clamped_cells} clamped cells)")
    return 0


def cmd_gallery(args, settings: RunSettings, results: ResultsManager) -> int:
    checkpoint = _checkpoint(args, results)
    train, _ = _data(settings)
    index = build_gallery(train, checkpoint.params)
    out = args.out or results.run_dir / "gallery.npz"
    index.save(out)
    print(f"✅ Gallery of {index.size} features written to {out}")
    return 0


def cmd_gradcheck(args, settings: RunSettings, results: ResultsManager) -> int:
    frame = gradient_check_suite(settings, seed=settings.train.seed)
    out = args.out or results.run_dir / "reports" / "gradcheck.csv"
    atomic_write_text(out, frame.to_csv(index=False))
    failed = frame[~frame["passed"]]
    print(f"📊 {len(frame)} gradient checks, worst relative error {frame['max_rel_error'].max():.3e}")
    if len(failed):
        print(f"❌ {len(failed)} checks above tolerance: {', '.join(failed['name'])}")
        return 1
    print("✅ All gradients agree with central differences")
    return 0


def cmd_sweep(args, settings: RunSettings, results: ResultsManager) -> int:
    limit = args.limit or settings.defense.eval_limit
    seed = settings.train.seed
    if args.kind in ("eps", "steps"):
        params = _checkpoint(args, results).params
        _, test = _data(settings)
        if args.kind == "eps":
            frame = epsilon_sweep(params, test, settings.attack, args.values or [2.0, 4.0, 8.0, 16.0],
                                  limit, seed, settings.run.threads)
        else:
            steps = [int(v) for v in args.values] if args.values else [10, 30, 200]
            frame = attack_strength_sweep(params, test, settings.attack, steps, limit, seed, settings.run.threads)
    else:
        train, test = _data(settings)
        clean = _clean_weights(args.clean, results)
        if args.kind == "memory":
            if clean is None:
                raise ConfigInconsistencyError("the memory sweep needs a clean encoder; run train-clean first")
            capacities = [int(v) for v in args.values] if args.values else [0, 256, 1024, 4096]
            frame = memory_size_sweep(settings, train, test, clean, capacities, limit)
        else:
            modes = args.modes or [TrainMode.NATURAL, TrainMode.STANDARD_AT, TrainMode.THAT]
            frame = compare_arms(settings, train, test, clean, modes, args.seeds or [0, 1, 2], limit)
    out = args.out or results.run_dir / "reports" / f"sweep_{args.kind}.csv"
    atomic_write_text(out, frame.to_csv(index=False))
    print(f"📊 {args.kind} sweep: {len(frame)} rows -> {out}")
    return 0


COMMANDS = {
    "train-clean": cmd_train_clean,
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "surface": cmd_surface,
    "gallery": cmd_gallery,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        settings = load_settings(args.config, **_overrides(args))
    except ValidationError as exc:
        print(f"❌ Invalid configuration:\n{exc}", file=sys.stderr)
        return 2
    except (TwoHeadError, OSError) as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return 1

    configure_logging(settings.run.log_level)
    results = ResultsManager.for_settings(settings)
    try:
        return COMMANDS[args.command](args, settings, results)
    except ValidationError as exc:
        print(f"❌ Invalid configuration:\n{exc}", file=sys.stderr)
        return 2
    except (TwoHeadError, OSError) as exc:
        logger.debug("command failed", exc_info=True)
        print(f"❌ {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
