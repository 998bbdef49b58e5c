from gvgkit.gradkit.check import GradCheckReport, ParamCheck, check_gradients
from gvgkit.gradkit.optim import Adam, cosine_lr
from gvgkit.gradkit.tensor import (
    DomainError,
    ShapeError,
    Tape,
    Tensor,
    abs_,
    add,
    backward,
    bce_with_logits,
    concat,
    constant,
    cosine_matrix,
    cosine_similarity,
    cross_entropy,
    div,
    exp,
    log,
    masked_max_pool,
    matmul,
    max_over_axis,
    maximum,
    mean,
    minimum,
    mul,
    narrow,
    neg,
    reduce_sum,
    relu,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    stack,
    sub,
    tanh,
    tensor,
    transpose,
    zero_grad,
)

__all__ = [
    "Adam", "DomainError", "GradCheckReport", "ParamCheck", "ShapeError",
    "Tape", "Tensor", "abs_", "add", "backward", "bce_with_logits",
    "check_gradients", "concat", "constant", "cosine_lr", "cosine_matrix",
    "cosine_similarity", "cross_entropy", "div", "exp", "log",
    "masked_max_pool", "matmul", "max_over_axis", "maximum", "mean",
    "minimum", "mul", "narrow", "neg", "reduce_sum", "relu", "sigmoid",
    "softmax", "softplus", "sqrt", "stack", "sub", "tanh", "tensor",
    "transpose", "zero_grad",
]
