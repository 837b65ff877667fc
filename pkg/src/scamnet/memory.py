"""Long-term class memory and the CLS-based global-representation head.

Per class the memory keeps a running prototype: the first visit stores the
episode's class-mean CLS verbatim, every later visit halves the blend
between the stored value and the fresh mean. Prototypes are stored
un-normalized and detached: gradients flow only through the current
episode's contribution, never into history.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classifier import ClassPrediction
from .errors import ContractViolationError
from .numerics import Tensor, as_tensor, functional
from .numerics import tensor as T

METRICS = ("cosine", "euclid", "manhattan")
_EUCLID_EPS = 1e-12


@dataclass
class LongTermMemory:
    """Associative map from class label to its regulated CLS prototype."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    update_counts: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, label: str) -> bool:
        return label in self.entries

    def snapshot(self) -> "LongTermMemory":
        return LongTermMemory(
            entries={k: v.copy() for k, v in self.entries.items()},
            update_counts=dict(self.update_counts),
        )


@dataclass
class RegulatedPrototypes:
    """Per-episode-class prototypes after memory regulation.

    Row n aligns with episode class n; ``sources`` records whether the row
    was stored fresh or blended with an existing prototype.
    """

    c_opt: Tensor
    sources: list[str]


def class_mean_cls(support_cls) -> Tensor:
    """Average the (N, K, D) support CLS stack over shots -> (N, D)."""
    support_cls = as_tensor(support_cls)
    if support_cls.ndim != 3:
        raise ContractViolationError(
            f"expected (N, K, D) support CLS stack, got shape {support_cls.shape}"
        )
    return support_cls.mean(axis=1)


def regulate(
    memory: LongTermMemory, labels: Sequence[str], class_means
) -> tuple[LongTermMemory, RegulatedPrototypes]:
    """Blend episode class means into the memory and return the result.

    First visit: store the mean as-is. Revisit: store (stored + mean) / 2.
    The returned row is always the freshly stored value; stored history is
    constant with respect to differentiation.
    """
    class_means = as_tensor(class_means)
    n = class_means.shape[0]
    if len(labels) != n:
        raise ContractViolationError(
            f"{len(labels)} labels for {n} class-mean rows"
        )
    if len(set(labels)) != len(labels):
        raise ContractViolationError("episode class labels must be distinct")
    rows: list[Tensor] = []
    sources: list[str] = []
    for i, label in enumerate(labels):
        label = str(label)
        fresh = class_means[i : i + 1]
        if label in memory.entries:
            stored = memory.entries[label]
            if stored.shape != (class_means.shape[1],):
                raise ContractViolationError(
                    f"stored prototype for {label!r} has dim {stored.shape}, "
                    f"episode mean has dim {class_means.shape[1]}"
                )
            row = 0.5 * as_tensor(stored[None], dtype=class_means.dtype) + 0.5 * fresh
            sources.append("blended")
        else:
            row = fresh
            sources.append("fresh")
        memory.entries[label] = row.data[0].copy()
        memory.update_counts[label] = memory.update_counts.get(label, 0) + 1
        rows.append(row)
    c_opt = T.concat(rows, axis=0) if len(rows) > 1 else rows[0]
    return memory, RegulatedPrototypes(c_opt=c_opt, sources=sources)


def _metric_logits(c_opt: np.ndarray, query_cls: np.ndarray, metric: str) -> np.ndarray:
    if metric == "cosine":
        norm_c = np.sqrt((c_opt * c_opt).sum(axis=-1))
        norm_q = np.sqrt(query_cls @ query_cls)
        denom = norm_c * norm_q
        sims = c_opt @ query_cls
        return np.where(denom > 0.0, sims / np.where(denom > 0.0, denom, 1.0), 0.0)
    diff = c_opt - query_cls[None, :]
    if metric == "euclid":
        return -np.sqrt((diff * diff).sum(axis=-1))
    if metric == "manhattan":
        return -np.abs(diff).sum(axis=-1)
    raise ContractViolationError(f"unknown metric {metric!r}; choose from {METRICS}")


def cls_prediction(
    c_opt: np.ndarray, query_cls: np.ndarray, metric: str = "cosine"
) -> ClassPrediction:
    """Classify a query CLS vector against the regulated prototypes.

    Cosine uses similarities directly; euclid/manhattan negate distances so
    that larger always means closer.
    """
    c_opt = np.asarray(c_opt.data if isinstance(c_opt, Tensor) else c_opt)
    query_cls = np.asarray(
        query_cls.data if isinstance(query_cls, Tensor) else query_cls
    )
    if c_opt.ndim != 2 or query_cls.ndim != 1 or c_opt.shape[1] != query_cls.shape[0]:
        raise ContractViolationError(
            f"prototype/query shape mismatch: {c_opt.shape} vs {query_cls.shape}"
        )
    logits = _metric_logits(
        c_opt.astype(np.float64), query_cls.astype(np.float64), metric
    )
    return ClassPrediction(probabilities=functional.softmax(logits), logits=logits)


def batched_cls_probabilities(c_opt: Tensor, query_cls: Tensor, metric: str) -> Tensor:
    """Differentiable (B, N) class probabilities for a batch of query CLS."""
    if metric not in METRICS:
        raise ContractViolationError(f"unknown metric {metric!r}; choose from {METRICS}")
    c_opt = as_tensor(c_opt)
    query_cls = as_tensor(query_cls)
    if metric == "cosine":
        sims = T.matmul(
            T.l2_normalize(query_cls, axis=-1),
            T.transpose(T.l2_normalize(c_opt, axis=-1), (1, 0)),
        )
        return T.softmax(sims, axis=-1)
    b, d = query_cls.shape
    n = c_opt.shape[0]
    diff = T.reshape(query_cls, (b, 1, d)) - T.reshape(c_opt, (1, n, d))
    if metric == "euclid":
        dist = ((diff * diff).sum(axis=-1) + _EUCLID_EPS) ** 0.5
    else:
        dist = T.absolute(diff).sum(axis=-1)
    return T.softmax(-dist, axis=-1)
