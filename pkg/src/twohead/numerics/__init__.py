"""Tensor arithmetic, reverse-mode gradients and seeded randomness."""
from .tensor import (
    GradientTape,
    Primitive,
    Tensor,
    apply,
    as_tensor,
    grad,
    observe_kinks,
    register_primitive,
    registered_primitives,
    value_and_grad,
)
from .primitives import (
    clip_min,
    concat,
    conv2d,
    exp,
    l2_normalize,
    log,
    logsumexp,
    matmul,
    max_pool2d,
    relu,
    stable_softmax,
    zero_norm_tolerance,
)
from .gradcheck import GradCheckReport, ParamCheck, finite_diff_check, primitive_cases
from .rng import RngState

__all__ = [
    "GradientTape", "Primitive", "Tensor", "apply", "as_tensor", "grad", "observe_kinks",
    "register_primitive", "registered_primitives", "value_and_grad",
    "clip_min", "concat", "conv2d", "exp", "l2_normalize", "log", "logsumexp", "matmul",
    "max_pool2d", "relu", "stable_softmax", "zero_norm_tolerance",
    "GradCheckReport", "ParamCheck", "finite_diff_check", "primitive_cases", "RngState",
]
