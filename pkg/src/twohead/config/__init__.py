"""Configuration models and constants."""
from .constants import (
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
from .settings import (
    ArchitectureConfig,
    AttackConfig,
    BankConfig,
    DataConfig,
    DefenseConfig,
    LossConfig,
    RunConfig,
    RunSettings,
    SurfaceConfig,
    TrainConfig,
    dump_config,
    load_settings,
)
