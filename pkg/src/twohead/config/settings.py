"""Run configuration.

One pydantic model per module section, aggregated by ``RunSettings``. Values
come from (highest priority first) explicit overrides, ``THAT_``-prefixed
environment variables, a ``.env`` file, a sectioned ``key = value`` config
file and finally the defaults below.
"""
import configparser
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional, Tuple, Type, Union

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator
from pydantic.fields import FieldInfo
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from ..core.exceptions import ConfigInconsistencyError
from ..utils.helpers import atomic_write_text
from .constants import (
    PIXEL_SCALE,
    Architecture,
    AttackLoss,
    AttackMode,
    CleanEncoderPolicy,
    DataSource,
    DefenseMode,
    DirectionKind,
    NormType,
    TrainMode,
)


def _split_csv(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


IntList = Annotated[List[int], BeforeValidator(_split_csv)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ArchitectureConfig(_Section):
    """Encoder layout shared by the clean and the robust network."""
    arch: Architecture = Architecture.MLP
    input_shape: IntList = Field(default_factory=lambda: [256])
    widths: IntList = Field(default_factory=lambda: [256, 256])
    conv_channels: IntList = Field(default_factory=lambda: [16, 32])
    feat_dim: int = Field(default=128, ge=2)
    proj_hidden: int = Field(default=128, ge=1)
    num_classes: int = Field(default=10, ge=2)

    @field_validator("input_shape", "widths", "conv_channels")
    @classmethod
    def _positive(cls, value: List[int]) -> List[int]:
        if not value or any(v <= 0 for v in value):
            raise ValueError("all dimensions must be positive")
        return value

    @model_validator(mode="after")
    def _conv_shape(self) -> "ArchitectureConfig":
        if self.arch is Architecture.CONV:
            if len(self.input_shape) != 3:
                raise ValueError("conv architecture needs input_shape = channels,height,width")
            tile = 2 ** len(self.conv_channels)
            if self.input_shape[1] % tile or self.input_shape[2] % tile:
                raise ValueError(f"height and width must be divisible by {tile}")
        return self

    @property
    def input_dim(self) -> int:
        dim = 1
        for v in self.input_shape:
            dim *= v
        return dim


class AttackConfig(_Section):
    """PGD/FGSM threat model. ``epsilon`` and ``step_size`` are in /255 units."""
    epsilon: float = Field(default=8.0, gt=0)
    step_size: float = Field(default=2.0, gt=0)
    steps: int = Field(default=10, ge=1)
    norm: NormType = NormType.LINF
    mode: AttackMode = AttackMode.UNTARGETED
    loss: AttackLoss = AttackLoss.NCE
    random_start: Optional[bool] = None
    lo: float = 0.0
    hi: float = 1.0
    chunk_size: int = Field(default=64, ge=1)

    @model_validator(mode="after")
    def _bounds(self) -> "AttackConfig":
        if not self.lo < self.hi:
            raise ValueError("pixel bounds need lo < hi")
        return self

    @property
    def eps(self) -> float:
        return self.epsilon / PIXEL_SCALE

    @property
    def step(self) -> float:
        return self.step_size / PIXEL_SCALE

    @property
    def uses_random_start(self) -> bool:
        if self.random_start is None:
            return self.mode is AttackMode.UNTARGETED
        return self.random_start

    @classmethod
    def in_pixels(cls, eps: float, step: Optional[float] = None, **kwargs) -> "AttackConfig":
        """Build from [0,1]-scale values instead of /255 units."""
        step = eps if step is None else step
        return cls(epsilon=eps * PIXEL_SCALE, step_size=step * PIXEL_SCALE, **kwargs)


class LossConfig(_Section):
    temperature: float = Field(default=0.2, gt=0)
    eta_init: float = Field(default=1.0 / 30.0, gt=0)
    kl_weight: float = Field(default=1.0, ge=0)


class BankConfig(_Section):
    capacity: int = Field(default=4096, ge=1)
    exclude_positive: bool = False

    @field_validator("capacity")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError("bank capacity must be a power of two")
        return value


class TrainConfig(_Section):
    mode: TrainMode = TrainMode.THAT
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=128, ge=1)
    lr: float = Field(default=0.1, gt=0)
    milestones: IntList = Field(default_factory=lambda: [15, 25])
    lr_decay: float = Field(default=0.1, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    replays: int = Field(default=4, ge=1)
    clean_policy: CleanEncoderPolicy = CleanEncoderPolicy.FROZEN
    clean_momentum: float = Field(default=0.999, ge=0, le=1)
    eval_steps: int = Field(default=10, ge=1)
    eval_samples: int = Field(default=256, ge=1)
    checkpoint_every: int = Field(default=1, ge=1)
    seed: int = 0

    @field_validator("milestones")
    @classmethod
    def _increasing(cls, value: List[int]) -> List[int]:
        if any(v < 0 for v in value) or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("milestones must be non-negative and strictly increasing")
        return value


class DefenseConfig(_Section):
    mode: DefenseMode = DefenseMode.SOFTMAX
    k: int = Field(default=50, ge=1)
    eval_limit: Optional[int] = Field(default=None, ge=1)


class SurfaceConfig(_Section):
    directions: Annotated[List[DirectionKind], BeforeValidator(_split_csv)] = Field(
        default_factory=lambda: [DirectionKind.ADVERSARIAL, DirectionKind.RADEMACHER])
    resolution: int = Field(default=21, ge=1)
    half_range: Optional[float] = Field(default=None, gt=0)
    sample_index: int = Field(default=0, ge=0)
    loss: AttackLoss = AttackLoss.NCE

    @field_validator("directions")
    @classmethod
    def _pair(cls, value: List[DirectionKind]) -> List[DirectionKind]:
        if len(value) != 2:
            raise ValueError("exactly two directions are required")
        return value

    @field_validator("resolution")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("resolution must be odd so the center is a grid point")
        return value


class DataConfig(_Section):
    source: DataSource = DataSource.SYNTHETIC
    classes: int = Field(default=10, ge=2)
    dim: int = Field(default=256, ge=1)
    per_class: int = Field(default=100, ge=5)
    noise: float = Field(default=0.2, ge=0)
    radius: float = Field(default=1.0, gt=0)
    seed: int = 0
    train_images: Optional[Path] = None
    train_labels: Optional[Path] = None
    test_images: Optional[Path] = None
    test_labels: Optional[Path] = None

    @model_validator(mode="after")
    def _idx_paths(self) -> "DataConfig":
        if self.source is DataSource.IDX and not (self.train_images and self.train_labels):
            raise ValueError("idx source needs train_images and train_labels")
        return self


class RunConfig(_Section):
    name: str = "desk"
    output_dir: Path = Path("runs")
    threads: int = Field(default=1, ge=1)
    log_level: str = "INFO"
    progress: bool = True


class IniConfigSource(PydanticBaseSettingsSource):
    """Reads the sectioned ``key = value`` run file."""

    def __init__(self, settings_cls: Type[BaseSettings], path: Optional[Union[str, Path]]):
        super().__init__(settings_cls)
        self.path = Path(path) if path is not None else None

    def get_field_value(self, field: FieldInfo, field_name: str) -> Tuple[Any, str, bool]:
        return None, field_name, False

    def __call__(self) -> Dict[str, Any]:
        if self.path is None:
            return {}
        parser = configparser.ConfigParser(interpolation=None)
        if not parser.read(self.path, encoding="utf-8"):
            raise FileNotFoundError(f"config file not found: {self.path}")
        unknown = [s for s in parser.sections() if s not in self.settings_cls.model_fields]
        if unknown:
            raise ConfigInconsistencyError(f"unknown config sections: {', '.join(unknown)}")
        return {section: dict(parser.items(section)) for section in parser.sections()}


class RunSettings(BaseSettings):
    """Effective configuration of one command invocation."""
    model_config = SettingsConfigDict(
        env_prefix="THAT_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    model: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    attack: AttackConfig = Field(default_factory=AttackConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    bank: BankConfig = Field(default_factory=BankConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    defense: DefenseConfig = Field(default_factory=DefenseConfig)
    surface: SurfaceConfig = Field(default_factory=SurfaceConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    run: RunConfig = Field(default_factory=RunConfig)


def load_settings(config_path: Optional[Union[str, Path]] = None, **overrides: Any) -> RunSettings:
    """Resolve every source into a ``RunSettings``.

    ``overrides`` are nested section dicts (``train={"seed": 7}``) and win over
    everything else.
    """

    class _FileBacked(RunSettings):
        @classmethod
        def settings_customise_sources(cls, settings_cls, init_settings, env_settings,
                                       dotenv_settings, file_secret_settings):
            return init_settings, env_settings, dotenv_settings, IniConfigSource(settings_cls, config_path)

    resolved = _FileBacked(**overrides)
    return RunSettings.model_construct(**{name: getattr(resolved, name) for name in RunSettings.model_fields})


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(_render(v) for v in value)
    return str(value)


def dump_config(settings: RunSettings, path: Union[str, Path]) -> Path:
    """Write the effective configuration as a file ``load_settings`` reads back."""
    lines: List[str] = []
    for section, values in settings.model_dump(mode="json").items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {_render(v)}" for key, v in values.items() if v is not None)
        lines.append("")
    return atomic_write_text(path, "\n".join(lines))
