"""Fast/slow dual-network protocol: consistency loss, composite loss,
plain-SGD step on the fast (hippocampus) model, EMA consolidation into
the slow (neocortex) model, and neocortex-only inference.

The neocortex is never gradient-updated; its predictions enter the
consistency loss as constants, and its parameters move only through the
exponential moving average.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .classifier import ClassPrediction, batched_class_probabilities
from .encoder import EncoderConfig, ModelState, encode_batch, init_state
from .episodic import Episode
from .errors import ConfigError, ContractViolationError, NumericalError
from .numerics import PROB_FLOOR, Tensor, as_tensor, no_grad, parameter
from .numerics import tensor as T

CONSISTENCY_KINDS = ("mse", "kl")
CLS_WEIGHT_KEY = "cls_weight_raw"


@dataclass
class DualState:
    """Both parameter sets plus the training scalars.

    ``cls_weight_raw`` is the learnable CLS-loss weight (effective weight
    is its clamp at zero); it belongs to the training state, not to either
    encoder, so it is not consolidated.
    """

    hippocampus: ModelState
    neocortex: ModelState
    ema_decay: float
    learning_rate: float
    cls_weight_raw: Tensor
    step_count: int = 0
    dual_net: bool = True

    def cls_weight(self) -> float:
        return max(float(self.cls_weight_raw.data), 0.0)

    def inference_model(self) -> ModelState:
        return self.neocortex if self.dual_net else self.hippocampus

    def trainable_params(self) -> dict[str, Tensor]:
        return {**self.hippocampus.params, CLS_WEIGHT_KEY: self.cls_weight_raw}


@dataclass
class LossBundle:
    """The three loss terms, the effective CLS weight, and their total."""

    l_ce: Tensor
    l_cons: Tensor
    l_cls: Tensor
    cls_weight: Tensor
    total: Tensor


def init_dual_state(
    config: EncoderConfig,
    tau_init: float = 1.0,
    cls_weight_init: float = 0.2,
    ema_decay: float = 0.99,
    learning_rate: float = 2e-4,
    dual_net: bool = True,
) -> DualState:
    """Fresh dual state with the neocortex an exact copy of the hippocampus."""
    if not 0.0 <= ema_decay <= 1.0:
        raise ConfigError(f"ema_decay must be in [0, 1], got {ema_decay}")
    # learning_rate == 0 is a legitimate degenerate case: the whole loop
    # must then be a parameter no-op.
    if learning_rate < 0.0:
        raise ConfigError(f"learning_rate must be >= 0, got {learning_rate}")
    hippo = init_state(config, tau_init=tau_init)
    return DualState(
        hippocampus=hippo,
        neocortex=hippo.copy(requires_grad=False),
        ema_decay=ema_decay,
        learning_rate=learning_rate,
        cls_weight_raw=parameter(np.asarray(cls_weight_init, dtype=np.float32)),
        dual_net=dual_net,
    )


def _prob_matrix(batch) -> Tensor:
    """Coerce a prediction batch (Tensor, array, or ClassPredictions) to (B, N)."""
    if isinstance(batch, Tensor):
        t = batch
    elif isinstance(batch, np.ndarray):
        t = as_tensor(batch)
    elif isinstance(batch, Sequence) and batch and isinstance(batch[0], ClassPrediction):
        t = as_tensor(np.stack([np.asarray(p.probabilities) for p in batch]))
    else:
        raise ContractViolationError(
            "expected a (B, N) matrix or a sequence of ClassPrediction"
        )
    if t.ndim != 2:
        raise ContractViolationError(f"prediction batch must be 2-D, got {t.shape}")
    return t


def consistency_loss(y_h, y_n, kind: str = "mse") -> Tensor:
    """Disagreement between fast and slow predictions, averaged over queries.

    mse: mean over queries of the mean squared probability difference.
    kl: mean over queries of KL(y_n || y_h), probabilities floored at 1e-12.
    The slow-model side is treated as a constant either way.
    """
    if kind not in CONSISTENCY_KINDS:
        raise ContractViolationError(
            f"unknown consistency kind {kind!r}; choose from {CONSISTENCY_KINDS}"
        )
    ph = _prob_matrix(y_h)
    pn = _prob_matrix(y_n).detach()
    if ph.shape != pn.shape:
        raise ContractViolationError(
            f"prediction batch shapes differ: {ph.shape} vs {pn.shape}"
        )
    if kind == "mse":
        diff = ph - pn
        return (diff * diff).mean()
    log_ph = T.log(T.clamp_min(ph, PROB_FLOOR))
    log_pn = np.log(np.maximum(pn.data, PROB_FLOOR))
    per_query = (pn * (as_tensor(log_pn, dtype=ph.dtype) - log_ph)).sum(axis=-1)
    return per_query.mean()


def total_loss(l_ce, l_cons, l_cls, cls_weight_raw) -> LossBundle:
    """total = l_ce + l_cons + max(cls_weight_raw, 0) * l_cls.

    The raw weight receives gradient through the product (zero once
    clamped). Any non-finite term is rejected by name.
    """
    terms = {"l_ce": as_tensor(l_ce), "l_cons": as_tensor(l_cons), "l_cls": as_tensor(l_cls)}
    for name, t in terms.items():
        if not t.is_finite():
            raise NumericalError(f"{name} is non-finite: {float(t.data)!r}")
    w = T.clamp_min(as_tensor(cls_weight_raw), 0.0)
    total = terms["l_ce"] + terms["l_cons"] + w * terms["l_cls"]
    if not total.is_finite():
        raise NumericalError("total loss is non-finite")
    return LossBundle(
        l_ce=terms["l_ce"],
        l_cons=terms["l_cons"],
        l_cls=terms["l_cls"],
        cls_weight=w,
        total=total,
    )


def hippocampus_step(state: DualState, gradient: Mapping[str, np.ndarray]) -> DualState:
    """Plain SGD on every fast-model parameter and the learnable scalars.

    The whole gradient is checked for finiteness before anything is
    touched; a bad gradient rejects the step with the state unchanged.
    The neocortex is never modified here.
    """
    params = state.trainable_params()
    for name, g in gradient.items():
        if name not in params:
            raise ContractViolationError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params[name].shape:
            raise ContractViolationError(
                f"gradient shape {np.shape(g)} does not match parameter "
                f"{name!r} shape {params[name].shape}"
            )
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    eta = state.learning_rate
    for name, g in gradient.items():
        p = params[name]
        p.data = (p.data - eta * np.asarray(g, dtype=p.dtype)).astype(
            p.dtype, copy=False
        )
    state.step_count += 1
    return state


def neocortex_update(state: DualState) -> DualState:
    """Elementwise EMA: slow = decay * slow + (1 - decay) * fast.

    The blend is computed in float64 and rounded once, so equal parameter
    sets stay bit-identical and the geometric contraction law holds to
    float32 rounding.
    """
    alpha = state.ema_decay
    for name, slow in state.neocortex.params.items():
        fast = state.hippocampus.params[name]
        blended = alpha * slow.data.astype(np.float64) + (1.0 - alpha) * fast.data.astype(
            np.float64
        )
        slow.data = blended.astype(slow.dtype)
    return state


def forward_episode_probs(
    model: ModelState, episode: Episode
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Patch-similarity class probabilities for every query of an episode.

    Returns (probabilities (B, N), pooled logits (B, N), support CLS
    (N, K, D), query CLS (B, D)). Differentiable when the model's
    parameters require gradient.
    """
    n, k = episode.n_way, episode.k_shot
    sup_cls, sup_patches = encode_batch(episode.support_images, model)
    qry_cls, qry_patches = encode_batch(episode.query_images, model)
    m, d = sup_patches.shape[1], sup_patches.shape[2]
    sup_patches = T.reshape(sup_patches, (n, k, m, d))
    block_mask = (
        episode.support_ids[None, :] == episode.query_ids[:, None]
    ).reshape(episode.query_ids.shape[0], n, k)
    probs, logits = batched_class_probabilities(
        sup_patches,
        qry_patches,
        model.temperature(),
        block_mask if block_mask.any() else None,
    )
    return probs, logits, T.reshape(sup_cls, (n, k, d)), qry_cls


def infer(state: DualState, episode: Episode) -> list[ClassPrediction]:
    """Slow-model-only evaluation of an episode; no memory, no mutation."""
    model = state.inference_model()
    with no_grad():
        probs, logits, _, _ = forward_episode_probs(model, episode)
    p, lg = probs.data, logits.data
    return [
        ClassPrediction(probabilities=p[i].copy(), logits=lg[i].copy())
        for i in range(p.shape[0])
    ]


def batch_cross_entropy(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean -log p[target] over a (B, N) probability matrix, floored at 1e-12."""
    picked = T.gather_rows(probs, np.asarray(targets))
    return -(T.log(T.clamp_min(picked, PROB_FLOOR)).mean())


def accuracy(probs: np.ndarray | Tensor, targets: np.ndarray) -> float:
    """Fraction of rows whose argmax matches the target."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return float((p.argmax(axis=-1) == np.asarray(targets)).mean())
