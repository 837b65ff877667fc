"""Dense tensor arithmetic, stable elementary functions, and differentiation."""

from .functional import (
    PROB_FLOOR,
    cosine,
    cross_entropy,
    logsumexp,
    mse,
    softmax,
    softplus_inverse,
)
from .gradient import Gradient, grad
from .io import load_tensor, save_tensor
from .rng import episode_generator, make_generator, truncated_normal
from .tensor import Tensor, as_tensor, backward, no_grad, parameter, zero_grads

__all__ = [
    "PROB_FLOOR",
    "Gradient",
    "Tensor",
    "as_tensor",
    "backward",
    "cosine",
    "cross_entropy",
    "episode_generator",
    "grad",
    "load_tensor",
    "logsumexp",
    "make_generator",
    "mse",
    "no_grad",
    "parameter",
    "save_tensor",
    "softmax",
    "softplus_inverse",
    "truncated_normal",
    "zero_grads",
]
