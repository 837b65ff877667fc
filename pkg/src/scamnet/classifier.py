"""Dense patch-similarity classification head.

Per (support image, query image) pair, an M x M cosine-similarity block;
blocks whose support image is the query itself are masked out; per class,
all unmasked entries of all shots are pooled with a temperature-scaled
log-sum-exp and the pooled logits go through a softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .encoder import EncodedImage
from .errors import ContractViolationError
from .numerics import Tensor, functional
from .numerics import tensor as T


@dataclass
class SimilarityBlock:
    """Patch-pair cosine similarities between one support image and the query."""

    values: np.ndarray
    class_index: int
    shot_index: int
    support_id: int
    query_id: int
    masked: bool = False


@dataclass
class ClassPrediction:
    """Per-class probabilities and the pooled logits they came from."""

    probabilities: np.ndarray
    logits: np.ndarray

    @property
    def n_classes(self) -> int:
        return int(np.asarray(self.probabilities).shape[-1])


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norm = np.sqrt((m * m).sum(axis=-1, keepdims=True))
    return np.where(norm > 0.0, m / np.where(norm > 0.0, norm, 1.0), 0.0)


def similarity_matrix(
    support: Sequence[Sequence[EncodedImage]], query: EncodedImage
) -> list[SimilarityBlock]:
    """All pairwise patch cosine blocks between support images and a query.

    ``support`` is grouped by class: N sequences of K images. Entry (i, j)
    of block (n, k) is the cosine similarity between support patch i and
    query patch j.
    """
    q = _normalize_rows(_as_array(query.patches))
    blocks: list[SimilarityBlock] = []
    for class_index, shots in enumerate(support):
        for shot_index, image in enumerate(shots):
            s = _as_array(image.patches)
            if s.shape[-1] != q.shape[-1]:
                raise ContractViolationError(
                    f"embedding dim mismatch: support {s.shape} vs query {q.shape}"
                )
            if s.shape[0] != q.shape[0]:
                raise ContractViolationError(
                    f"patch count mismatch: support {s.shape[0]} vs query {q.shape[0]}"
                )
            blocks.append(
                SimilarityBlock(
                    values=_normalize_rows(s) @ q.T,
                    class_index=class_index,
                    shot_index=shot_index,
                    support_id=image.image_id,
                    query_id=query.image_id,
                )
            )
    return blocks


def apply_mask(
    blocks: Sequence[SimilarityBlock], query_id: int
) -> list[SimilarityBlock]:
    """Flag every block whose support image is the query image itself."""
    return [
        replace(b, masked=True) if b.support_id == query_id else replace(b)
        for b in blocks
    ]


def class_logits(blocks: Sequence[SimilarityBlock], tau: float) -> ClassPrediction:
    """Pool similarity entries per class with LSE at temperature tau.

    Masked blocks enter as -inf before exponentiation, so they contribute
    exp(.) = 0; a class whose entries are all masked gets logit -inf. If
    every class is fully masked there is nothing to predict and the call
    is a contract violation.
    """
    tau = float(tau)
    if tau <= 0.0:
        raise ContractViolationError(f"temperature must be positive, got {tau}")
    if not blocks:
        raise ContractViolationError("class_logits needs at least one block")
    n_classes = max(b.class_index for b in blocks) + 1
    per_class: list[list[np.ndarray]] = [[] for _ in range(n_classes)]
    for b in blocks:
        vals = np.asarray(b.values, dtype=np.float64).ravel() / tau
        if b.masked:
            vals = np.full_like(vals, -np.inf)
        per_class[b.class_index].append(vals)
    logits = np.empty(n_classes, dtype=np.float64)
    for n, chunks in enumerate(per_class):
        if not chunks:
            raise ContractViolationError(f"class {n} has no similarity blocks")
        logits[n] = functional.logsumexp(np.concatenate(chunks))
    if not np.isfinite(logits).any():
        raise ContractViolationError("all classes fully masked; no signal left")
    probs = functional.softmax(logits)
    return ClassPrediction(probabilities=probs, logits=logits)


def batched_class_probabilities(
    support_patches: Tensor,
    query_patches: Tensor,
    tau: Tensor,
    block_mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Differentiable batched version of the similarity pipeline.

    support_patches: (N, K, M, D); query_patches: (B, M, D); tau: positive
    scalar. ``block_mask`` (B, N, K), True = excluded block. Returns
    probabilities and pooled logits, both (B, N).
    """
    n, k, m, d = support_patches.shape
    b = query_patches.shape[0]
    s_norm = T.l2_normalize(support_patches, axis=-1)
    q_norm = T.l2_normalize(query_patches, axis=-1)
    flat_s = T.reshape(s_norm, (n * k * m, d))
    flat_q = T.reshape(q_norm, (b * m, d))
    sims = T.matmul(flat_s, T.transpose(flat_q, (1, 0)))
    sims = T.reshape(sims, (n, k, m, b, m))
    sims = T.transpose(sims, (3, 0, 1, 2, 4))
    entries = T.reshape(sims / tau, (b, n, k * m * m))

    mask = None
    if block_mask is not None:
        mask = np.broadcast_to(
            np.asarray(block_mask, dtype=bool)[:, :, :, None, None], (b, n, k, m, m)
        ).reshape(b, n, k * m * m)
    logits = T.logsumexp(entries, axis=-1, mask=mask)
    if not np.isfinite(logits.data).any(axis=-1).all():
        raise ContractViolationError("a query has every class fully masked")
    probs = T.softmax(logits, axis=-1)
    return probs, logits
