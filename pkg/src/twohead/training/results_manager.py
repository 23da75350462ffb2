"""
Results Manager - Handles storage of run artifacts (checkpoints, metrics, reports)
"""

import logging
from pathlib import Path
from typing import Optional, Union

import pandas as pd

from ..config.settings import RunSettings, dump_config
from ..core.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..core.membank import MemoryBank
from ..core.model import EncoderParams
from ..utils.helpers import atomic_write_text
from .models import RunMetrics

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
CONFIG_FILE = "effective.cfg"


class ResultsManager:
    """Lays out one run directory:

    <output_dir>/<name>/checkpoints/*.ckpt
    <output_dir>/<name>/metrics.csv
    <output_dir>/<name>/reports/*.csv
    """

    def __init__(self, run_dir: Union[str, Path]):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

    @classmethod
    def for_settings(cls, settings: RunSettings) -> "ResultsManager":
        return cls(Path(settings.run.output_dir) / settings.run.name)

    @property
    def checkpoint_dir(self) -> Path:
        return self.run_dir / "checkpoints"

    @property
    def metrics_path(self) -> Path:
        return self.run_dir / METRICS_FILE

    def checkpoint_path(self, tag: str) -> Path:
        return self.checkpoint_dir / f"{tag}.ckpt"

    def save_checkpoint(self, tag: str, params: EncoderParams,
                        bank: Optional[MemoryBank] = None) -> Path:
        path = save_checkpoint(self.checkpoint_path(tag), params, bank)
        logger.debug("checkpoint %s written", path)
        return path

    def load_checkpoint(self, tag: str) -> Checkpoint:
        return load_checkpoint(self.checkpoint_path(tag))

    def write_metrics(self, metrics: RunMetrics) -> Path:
        """Rewrite the metrics table; rows only ever get appended between calls."""
        return atomic_write_text(self.metrics_path, metrics.to_frame().to_csv(index=False))

    def load_metrics(self) -> pd.DataFrame:
        return pd.read_csv(self.metrics_path)

    def save_report(self, name: str, frame: pd.DataFrame) -> Path:
        return atomic_write_text(self.run_dir / "reports" / f"{name}.csv", frame.to_csv(index=False))

    def save_config(self, settings: RunSettings) -> Path:
        return dump_config(settings, self.run_dir / CONFIG_FILE)
