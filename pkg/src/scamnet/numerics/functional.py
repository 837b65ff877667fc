"""Stable elementary functions used by every loss and logit computation.

These are plain ndarray functions (no tape); the differentiable versions
live in ``tensor``. All of them preserve the input dtype so they can run
in float64 when used as test oracles.
"""

from __future__ import annotations

import logging

import numpy as np

from ..errors import ContractViolationError

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def logsumexp(values: np.ndarray) -> float:
    """log(sum(exp(v))) with max-shift stabilization.

    Entries may be -inf (excluded terms); the result is -inf only when
    every entry is -inf. An empty input is a contract violation.
    """
    v = np.asarray(values)
    if v.size == 0:
        raise ContractViolationError("logsumexp of an empty vector")
    m = np.max(v)
    if not np.isfinite(m):
        if m == -np.inf:
            return float(-np.inf)
        raise ContractViolationError("logsumexp input contains +inf or NaN")
    return float(m + np.log(np.sum(np.exp(v - m))))


def softmax(values: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """exp(v/t) normalized to a probability vector; t must be positive."""
    if temperature <= 0.0:
        raise ContractViolationError(f"softmax temperature must be > 0, got {temperature}")
    v = np.asarray(values)
    if v.size == 0:
        raise ContractViolationError("softmax of an empty vector")
    x = v / np.asarray(temperature, dtype=v.dtype)
    m = np.max(x)
    if not np.isfinite(m):
        m = np.asarray(0.0, dtype=v.dtype)
    e = np.exp(x - m)
    return e / e.sum()


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; a zero-norm input yields 0 with a logged warning."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ContractViolationError(f"cosine shape mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        logger.warning("cosine of a zero-norm vector; returning 0.0")
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def cross_entropy(pred: np.ndarray, target: int) -> float:
    """-log(pred[target]) with the probability floored at 1e-12."""
    p = np.asarray(pred)
    if p.ndim != 1:
        raise ContractViolationError("cross_entropy expects a probability vector")
    if not 0 <= int(target) < p.shape[0]:
        raise ContractViolationError(
            f"cross_entropy target {target} out of range for {p.shape[0]} classes"
        )
    return float(-np.log(max(float(p[int(target)]), PROB_FLOOR)))


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean of squared differences over all elements."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ContractViolationError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def softplus_inverse(y: float) -> float:
    """Raw value r with softplus(r) == y, for initializing positive scalars."""
    if y <= 0.0:
        raise ContractViolationError("softplus_inverse requires a positive target")
    return float(np.log(np.expm1(y)))
