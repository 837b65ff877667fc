"""scikit-learn style facade over the training harness.

``fit`` meta-trains on a dataset's train split; ``predict`` classifies
query images against a caller-supplied support set; ``score`` runs the
episodic evaluation protocol. Hyperparameters follow the sklearn
convention (stored verbatim, introspectable via ``get_params``).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .consolidation import infer
from .encoder import EncoderConfig
from .episodic import Episode
from .errors import ConfigError
from .harness import EvalReport, TrainConfig, dump_cls, evaluate, train
from .validation import as_split, check_image_batch, check_labels


class ScamNetClassifier(BaseEstimator):
    """Few-shot classifier with EMA consolidation and a regulated CLS memory.

    Parameters mirror TrainConfig plus the encoder geometry. ``fit``
    expects a dataset (directory path, DatasetStore, or train-split
    Dataset); prediction needs a support set because classes are defined
    per episode, not globally.
    """

    def __init__(
        self,
        n_way: int = 5,
        k_shot: int = 1,
        q_queries: int = 15,
        steps: int = 1000,
        learning_rate: float = 0.0002,
        ema_decay: float = 0.99,
        cls_weight_init: float = 0.2,
        tau_init: float = 1.0,
        consistency: str = "mse",
        cls_metric: str = "cosine",
        dual_net: bool = True,
        cls_head: bool = True,
        memory_regulation: bool = True,
        image_height: int = 32,
        image_width: int = 32,
        channels: int = 3,
        patch_size: int = 8,
        embed_dim: int = 64,
        depth: int = 2,
        heads: int = 4,
        seed: int = 0,
        out_dir: str | None = None,
    ):
        self.n_way = n_way
        self.k_shot = k_shot
        self.q_queries = q_queries
        self.steps = steps
        self.learning_rate = learning_rate
        self.ema_decay = ema_decay
        self.cls_weight_init = cls_weight_init
        self.tau_init = tau_init
        self.consistency = consistency
        self.cls_metric = cls_metric
        self.dual_net = dual_net
        self.cls_head = cls_head
        self.memory_regulation = memory_regulation
        self.image_height = image_height
        self.image_width = image_width
        self.channels = channels
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.depth = depth
        self.heads = heads
        self.seed = seed
        self.out_dir = out_dir

    # -- configuration ---------------------------------------------------

    def build_config(self) -> TrainConfig:
        encoder = EncoderConfig(
            image_height=self.image_height,
            image_width=self.image_width,
            channels=self.channels,
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depth=self.depth,
            heads=self.heads,
            seed=self.seed,
        )
        return TrainConfig(
            encoder=encoder,
            n_way=self.n_way,
            k_shot=self.k_shot,
            q_queries=self.q_queries,
            steps=self.steps,
            learning_rate=self.learning_rate,
            ema_decay=self.ema_decay,
            cls_weight_init=self.cls_weight_init,
            tau_init=self.tau_init,
            consistency=self.consistency,
            cls_metric=self.cls_metric,
            dual_net=self.dual_net,
            cls_head=self.cls_head,
            memory_regulation=self.memory_regulation,
            seed=self.seed,
            out_dir=self.out_dir,
        )

    # -- estimator API -----------------------------------------------------

    def fit(self, X, y=None) -> "ScamNetClassifier":
        """Meta-train on the train split of ``X`` (dataset or path)."""
        dataset = as_split(X, "train")
        result = train(self.build_config(), dataset)
        self.state_ = result.state
        self.memory_ = result.memory
        self.metrics_ = result.metrics
        self.metrics_digest_ = result.metrics_digest
        return self

    def _episode_from_arrays(self, query_images, support_images, support_labels):
        h, w, c = self.image_height, self.image_width, self.channels
        sup = check_image_batch(support_images, h, w, c, name="support_images")
        qry = check_image_batch(query_images, h, w, c, name="query_images")
        labels = check_labels(support_labels, sup.shape[0], name="support_labels")
        classes, counts = np.unique(labels, return_counts=True)
        if len(set(counts)) != 1:
            raise ConfigError("every support class needs the same number of shots")
        k = int(counts[0])
        order = np.argsort(labels, kind="stable")
        episode = Episode(
            support_images=sup[order],
            support_labels=np.repeat(np.arange(len(classes)), k),
            support_ids=np.arange(sup.shape[0], dtype=np.uint64),
            query_images=qry,
            query_labels=np.zeros(qry.shape[0], dtype=np.int64),
            query_ids=np.arange(
                sup.shape[0], sup.shape[0] + qry.shape[0], dtype=np.uint64
            ),
            class_labels=[str(cl) for cl in classes],
        )
        return episode, classes

    def predict_proba(self, X, support_images, support_labels) -> np.ndarray:
        """(n_queries, n_classes) probabilities; columns follow sorted
        support labels (also exposed as the second value of
        ``predict_with_classes``)."""
        check_is_fitted(self, "state_")
        episode, _ = self._episode_from_arrays(X, support_images, support_labels)
        preds = infer(self.state_, episode)
        return np.stack([p.probabilities for p in preds])

    def predict_with_classes(self, X, support_images, support_labels):
        check_is_fitted(self, "state_")
        episode, classes = self._episode_from_arrays(X, support_images, support_labels)
        preds = infer(self.state_, episode)
        proba = np.stack([p.probabilities for p in preds])
        return classes[np.argmax(proba, axis=1)], classes

    def predict(self, X, support_images, support_labels) -> np.ndarray:
        """Predicted support-set labels for the query images ``X``."""
        labels, _ = self.predict_with_classes(X, support_images, support_labels)
        return labels

    def evaluate(
        self, X, episodes: int = 500, seed: int | None = None
    ) -> EvalReport:
        """Episodic evaluation on the test split of ``X``."""
        check_is_fitted(self, "state_")
        dataset = as_split(X, "test")
        return evaluate(
            self.state_,
            dataset,
            n_way=self.n_way,
            k_shot=self.k_shot,
            q_queries=self.q_queries,
            episodes=episodes,
            seed=self.seed if seed is None else seed,
        )

    def score(self, X, y=None) -> float:
        """Mean episodic accuracy on the test split of ``X`` (200 episodes)."""
        return self.evaluate(X, episodes=200).mean_accuracy

    def dump_cls_tokens(self, X, out, episodes: int = 100, seed: int | None = None):
        """Export raw/regulated support CLS rows for the train split of ``X``."""
        check_is_fitted(self, "state_")
        dataset = as_split(X, "train")
        return dump_cls(
            self.state_,
            dataset,
            episodes=episodes,
            seed=self.seed if seed is None else seed,
            out=out,
            n_way=self.n_way,
            k_shot=self.k_shot,
        )
