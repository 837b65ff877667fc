"""Training loop, evaluation with confidence intervals, ablation switches,
and the CLS-token export.

One training step: sample an episode, forward both models, consistency
loss, memory regulation, CLS prediction loss, composite loss, SGD step on
the fast model, EMA consolidation into the slow model. Metrics stream to
an append-only CSV (deterministic columns); per-step wall time goes to a
separate timing log so the metrics file is bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .checkpoint import save_checkpoint
from .consolidation import (
    CLS_WEIGHT_KEY,
    CONSISTENCY_KINDS,
    DualState,
    LossBundle,
    accuracy,
    batch_cross_entropy,
    consistency_loss,
    forward_episode_probs,
    hippocampus_step,
    infer,
    init_dual_state,
    neocortex_update,
    total_loss,
)
from .encoder import EncoderConfig, ModelState
from .episodic import Dataset, Episode, sample_episode
from .errors import ConfigError, NumericalError
from .memory import (
    METRICS,
    LongTermMemory,
    batched_cls_probabilities,
    class_mean_cls,
    regulate,
)
from .numerics import Tensor, as_tensor, backward, no_grad, zero_grads
from .numerics.rng import (
    STREAM_DUMP,
    STREAM_EVAL_EPISODES,
    STREAM_TRAIN_EPISODES,
    episode_generator,
    make_generator,
)

METRICS_FILE = "metrics.csv"
TIMING_FILE = "timing.csv"
CHECKPOINT_DIR = "checkpoint"
METRIC_COLUMNS = (
    "step",
    "l_ce",
    "l_cons",
    "l_cls",
    "total",
    "acc_h",
    "acc_n",
    "cls_weight",
    "tau",
)


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs; defaults follow the protocol."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    n_way: int = 5
    k_shot: int = 1
    q_queries: int = 15
    steps: int = 1000
    learning_rate: float = 0.0002
    ema_decay: float = 0.99
    cls_weight_init: float = 0.2
    tau_init: float = 1.0
    consistency: str = "mse"
    cls_metric: str = "cosine"
    dual_net: bool = True
    cls_head: bool = True
    memory_regulation: bool = True
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.consistency not in CONSISTENCY_KINDS:
            raise ConfigError(
                f"consistency must be one of {CONSISTENCY_KINDS}, got {self.consistency!r}"
            )
        if self.cls_metric not in METRICS:
            raise ConfigError(
                f"cls_metric must be one of {METRICS}, got {self.cls_metric!r}"
            )
        if self.memory_regulation and not self.cls_head:
            raise ConfigError("memory_regulation requires cls_head")
        if self.n_way < 2 or self.k_shot < 1 or self.q_queries < 1:
            raise ConfigError("need n_way >= 2, k_shot >= 1, q_queries >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.learning_rate < 0.0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError("ema_decay must be in [0, 1]")
        if self.tau_init <= 0.0:
            raise ConfigError("tau_init must be > 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if "encoder" in raw:
            enc = raw["encoder"]
            if not isinstance(enc, dict):
                raise ConfigError("encoder must be an object")
            enc_known = set(EncoderConfig.__dataclass_fields__)
            enc_unknown = set(enc) - enc_known
            if enc_unknown:
                raise ConfigError(f"unknown encoder config keys: {sorted(enc_unknown)}")
            raw["encoder"] = EncoderConfig(**enc)
        return cls(**raw)

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in self.__dataclass_fields__}
        d["encoder"] = self.encoder.to_dict()
        return d


@dataclass
class EpisodeMetrics:
    """Per-step observability record."""

    step: int
    l_ce: float
    l_cons: float
    l_cls: float
    total: float
    acc_h: float
    acc_n: float
    cls_weight: float
    tau: float
    wall_ms: float

    def csv_row(self) -> str:
        return ",".join(
            [str(self.step)]
            + [repr(getattr(self, name)) for name in METRIC_COLUMNS[1:]]
        )


@dataclass
class EvalReport:
    """Mean accuracy over episodes with a 95% confidence half-width."""

    episodes: int
    mean_accuracy: float
    ci95: float
    per_episode: np.ndarray

    @classmethod
    def from_accuracies(cls, accuracies) -> "EvalReport":
        accs = np.asarray(accuracies, dtype=np.float64)
        if accs.size == 0:
            raise ConfigError("cannot build a report from zero episodes")
        sigma = float(accs.std(ddof=0))  # population convention
        return cls(
            episodes=int(accs.size),
            mean_accuracy=float(accs.mean()),
            ci95=float(1.96 * sigma / np.sqrt(accs.size)),
            per_episode=accs,
        )

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
        }


@dataclass
class StepInfo:
    """Intermediate values of one episode loss evaluation."""

    probs: np.ndarray
    acc: float
    tau: float
    class_means: np.ndarray | None = None
    c_opt: np.ndarray | None = None
    prototype_sources: list[str] | None = None


def episode_loss(
    params: Mapping[str, Tensor],
    config: EncoderConfig,
    episode: Episode,
    neo_probs: np.ndarray | None,
    memory: LongTermMemory | None,
    consistency: str = "mse",
    cls_metric: str = "cosine",
    cls_head: bool = True,
    memory_regulation: bool = True,
) -> tuple[LossBundle, StepInfo]:
    """Composite episode loss as a function of the trainable parameters.

    ``params`` holds the fast model's parameters plus the raw CLS weight.
    ``neo_probs`` is the slow model's (B, N) prediction, already a
    constant; None selects the single-network objective (no consistency
    term). With regulation on, ``memory`` is updated in place exactly
    once.
    """
    model = ModelState(
        config, {k: v for k, v in params.items() if k != CLS_WEIGHT_KEY}
    )
    probs, _, sup_cls, qry_cls = forward_episode_probs(model, episode)
    dtype = probs.dtype
    l_ce = batch_cross_entropy(probs, episode.query_labels)
    if neo_probs is not None:
        l_cons = consistency_loss(probs, np.asarray(neo_probs), kind=consistency)
    else:
        l_cons = as_tensor(np.asarray(0.0, dtype=dtype))

    info = StepInfo(
        probs=probs.data.copy(),
        acc=accuracy(probs, episode.query_labels),
        tau=float(model.temperature().data),
    )
    if cls_head:
        class_means = class_mean_cls(sup_cls)
        if memory_regulation:
            if memory is None:
                raise ConfigError("memory_regulation needs a LongTermMemory")
            _, regulated = regulate(memory, episode.class_labels, class_means)
            c_opt = regulated.c_opt
            info.prototype_sources = regulated.sources
        else:
            c_opt = class_means
            info.prototype_sources = ["fresh"] * episode.n_way
        cls_probs = batched_cls_probabilities(c_opt, qry_cls, cls_metric)
        l_cls = batch_cross_entropy(cls_probs, episode.query_labels)
        info.class_means = class_means.data.copy()
        info.c_opt = c_opt.data.copy()
    else:
        l_cls = as_tensor(np.asarray(0.0, dtype=dtype))

    bundle = total_loss(l_ce, l_cons, l_cls, params[CLS_WEIGHT_KEY])
    return bundle, info


@dataclass
class TrainResult:
    state: DualState
    memory: LongTermMemory
    metrics: list[EpisodeMetrics]
    metrics_digest: str


def _metrics_csv_lines(metrics: list[EpisodeMetrics]) -> list[str]:
    return [",".join(METRIC_COLUMNS)] + [m.csv_row() for m in metrics]


def train(config: TrainConfig, dataset: Dataset) -> TrainResult:
    """Run the consolidation training loop on the given (train) split.

    Writes metrics.csv, timing.csv, and a final checkpoint under
    ``config.out_dir`` when set. A non-finite loss or gradient halts the
    run after checkpointing the last good state.
    """
    state = init_dual_state(
        config.encoder,
        tau_init=config.tau_init,
        cls_weight_init=config.cls_weight_init,
        ema_decay=config.ema_decay,
        learning_rate=config.learning_rate,
        dual_net=config.dual_net,
    )
    memory = LongTermMemory()
    metrics: list[EpisodeMetrics] = []
    out_dir = Path(config.out_dir) if config.out_dir else None
    metrics_fh = timing_fh = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / METRICS_FILE, "w")
        metrics_fh.write(",".join(METRIC_COLUMNS) + "\n")
        timing_fh = open(out_dir / TIMING_FILE, "w")
        timing_fh.write("step,wall_ms\n")

    rng = make_generator(config.seed, STREAM_TRAIN_EPISODES)
    try:
        for step in range(config.steps):
            started = time.perf_counter()
            episode = sample_episode(
                dataset, config.n_way, config.k_shot, config.q_queries, rng
            )
            acc_n = None
            neo_probs = None
            if config.dual_net:
                with no_grad():
                    neo_out, _, _, _ = forward_episode_probs(state.neocortex, episode)
                neo_probs = neo_out.data
                acc_n = accuracy(neo_probs, episode.query_labels)

            params = state.trainable_params()
            zero_grads(params.values())
            try:
                bundle, info = episode_loss(
                    params,
                    config.encoder,
                    episode,
                    neo_probs,
                    memory,
                    consistency=config.consistency,
                    cls_metric=config.cls_metric,
                    cls_head=config.cls_head,
                    memory_regulation=config.memory_regulation,
                )
                backward(bundle.total)
                gradient = {
                    name: (
                        p.grad if p.grad is not None else np.zeros_like(p.data)
                    )
                    for name, p in params.items()
                }
                state = hippocampus_step(state, gradient)
            except NumericalError:
                if out_dir:
                    save_checkpoint(state, memory, out_dir / "checkpoint_last_good")
                raise
            if config.dual_net:
                neocortex_update(state)

            wall_ms = (time.perf_counter() - started) * 1000.0
            row = EpisodeMetrics(
                step=step,
                l_ce=float(bundle.l_ce.data),
                l_cons=float(bundle.l_cons.data),
                l_cls=float(bundle.l_cls.data),
                total=float(bundle.total.data),
                acc_h=info.acc,
                acc_n=info.acc if acc_n is None else acc_n,
                cls_weight=float(bundle.cls_weight.data),
                tau=info.tau,
                wall_ms=wall_ms,
            )
            metrics.append(row)
            if metrics_fh:
                metrics_fh.write(row.csv_row() + "\n")
                metrics_fh.flush()
                timing_fh.write(f"{step},{row.wall_ms!r}\n")
                timing_fh.flush()
    finally:
        if metrics_fh:
            metrics_fh.close()
            timing_fh.close()

    digest = hashlib.sha256(
        "\n".join(_metrics_csv_lines(metrics)).encode()
    ).hexdigest()
    if out_dir:
        save_checkpoint(state, memory, out_dir / CHECKPOINT_DIR)
        with open(out_dir / "train_config.json", "w") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
    return TrainResult(
        state=state, memory=memory, metrics=metrics, metrics_digest=digest
    )


def evaluate(
    state: DualState,
    dataset: Dataset,
    n_way: int = 5,
    k_shot: int = 1,
    q_queries: int = 15,
    episodes: int = 2500,
    seed: int = 0,
) -> EvalReport:
    """Slow-model-only evaluation over independently seeded episodes.

    Episode i draws from its own counter-based stream, so results are
    reproducible and independent of evaluation order or parallelism.
    """
    accs = np.empty(episodes, dtype=np.float64)
    for i in range(episodes):
        rng = episode_generator(seed, STREAM_EVAL_EPISODES, i)
        episode = sample_episode(dataset, n_way, k_shot, q_queries, rng)
        preds = infer(state, episode)
        probs = np.stack([p.probabilities for p in preds])
        accs[i] = accuracy(probs, episode.query_labels)
    return EvalReport.from_accuracies(accs)


def dump_cls(
    state: DualState,
    dataset: Dataset,
    episodes: int,
    seed: int,
    out,
    n_way: int = 5,
    k_shot: int = 1,
) -> Path:
    """Write raw and regulated support-CLS rows for external plotting.

    Uses the inference model with a fresh memory and no parameter updates:
    per episode, one `raw` and one `regulated` row per class
    (episode, class, kind, then the D vector components).
    """
    model = state.inference_model()
    memory = LongTermMemory()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    d = model.config.embed_dim
    header = "episode,class,kind," + ",".join(f"c{i}" for i in range(d))
    with open(out, "w") as fh:
        fh.write(header + "\n")
        for e in range(episodes):
            rng = episode_generator(seed, STREAM_DUMP, e)
            episode = sample_episode(dataset, n_way, k_shot, 1, rng)
            with no_grad():
                _, _, sup_cls, _ = forward_episode_probs(model, episode)
                class_means = class_mean_cls(sup_cls)
                _, regulated = regulate(memory, episode.class_labels, class_means)
            raw = class_means.data
            reg = regulated.c_opt.data
            for n, label in enumerate(episode.class_labels):
                for kind, mat in (("raw", raw), ("regulated", reg)):
                    values = ",".join(repr(float(v)) for v in mat[n])
                    fh.write(f"{e},{label},{kind},{values}\n")
    return out
