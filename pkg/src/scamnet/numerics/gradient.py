"""The differentiation contract: loss function in, per-parameter cotangents out."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import NumericalError
from .tensor import Tensor, backward, zero_grads

Gradient = dict[str, np.ndarray]


def grad(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
) -> Gradient:
    """Reverse-mode derivative of a scalar loss w.r.t. every parameter.

    Returns one cotangent array per parameter, shape-congruent with it;
    parameters the loss does not touch get zeros. A non-finite loss is a
    NumericalError.
    """
    zero_grads(params.values())
    loss = loss_fn(params)
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise NumericalError("loss function must return a scalar Tensor")
    if not loss.is_finite():
        raise NumericalError(f"loss is non-finite: {float(loss.data)!r}")
    backward(loss)
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
