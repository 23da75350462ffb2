"""Application constants."""
from enum import Enum
from typing import Dict, List


class TrainMode(Enum):
    NATURAL = "natural"
    NATURAL_CON = "natural_con"          # clean images, CE + contrastive
    STANDARD_AT = "standard_at"
    STANDARD_AT_KL = "standard_at_kl"
    THAT = "that"
    THAT_NO_CL = "that_no_cl"
    THAT_NO_NCE = "that_no_nce"
    FREE_AT = "free_at"
    FREE_THAT = "free_that"


class NormType(Enum):
    LINF = "linf"
    L2 = "l2"


class AttackMode(Enum):
    UNTARGETED = "untargeted"
    TARGETED = "targeted"


class AttackLoss(Enum):
    CE = "ce"              # plain cross-entropy on raw logits
    NCE = "nce"            # normalized cross-entropy (cosine classifier)
    FEATURE = "feature"    # cosine between robust features of x_adv and x


class DefenseMode(Enum):
    SOFTMAX = "softmax"
    KNN = "knn"


class DirectionKind(Enum):
    RADEMACHER = "rademacher"
    ADVERSARIAL = "adversarial"
    ZERO = "zero"


class CleanEncoderPolicy(Enum):
    FROZEN = "frozen"
    MOMENTUM = "momentum"


class DataSource(Enum):
    SYNTHETIC = "synthetic"
    IDX = "idx"


class Architecture(Enum):
    MLP = "mlp"
    CONV = "conv"


FREE_MODES: List[TrainMode] = [TrainMode.FREE_AT, TrainMode.FREE_THAT]
CONTRASTIVE_MODES: List[TrainMode] = [
    TrainMode.NATURAL_CON, TrainMode.THAT, TrainMode.THAT_NO_NCE, TrainMode.FREE_THAT
]
ADVERSARIAL_MODES: List[TrainMode] = [
    TrainMode.STANDARD_AT, TrainMode.STANDARD_AT_KL, TrainMode.THAT,
    TrainMode.THAT_NO_CL, TrainMode.THAT_NO_NCE, TrainMode.FREE_AT, TrainMode.FREE_THAT,
]

# ZeroNorm tolerance per precision
ZERO_NORM_TOL: Dict[str, float] = {"float64": 1e-12, "float32": 1e-8}

CHECKPOINT_MAGIC = b"THAT"
CHECKPOINT_VERSION = 1
IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

KL_PROB_FLOOR = 1e-12
PIXEL_SCALE = 255.0
