"""SCAM-Net: a fast/slow dual-network few-shot classifier with EMA
consolidation, a dense patch-similarity head, and an adaptively regulated
long-term CLS memory."""

from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import (
    ClassPrediction,
    SimilarityBlock,
    apply_mask,
    class_logits,
    similarity_matrix,
)
from .consolidation import (
    DualState,
    LossBundle,
    consistency_loss,
    hippocampus_step,
    infer,
    init_dual_state,
    neocortex_update,
    total_loss,
)
from .encoder import EncodedImage, EncoderConfig, ModelState, encode, init_state, patchify
from .episodic import (
    Dataset,
    DatasetStore,
    Episode,
    SynthConfig,
    load_dataset,
    sample_episode,
    save_dataset,
    synth_generate,
)
from .estimator import ScamNetClassifier
from .harness import (
    EpisodeMetrics,
    EvalReport,
    TrainConfig,
    TrainResult,
    dump_cls,
    evaluate,
    train,
)
from .memory import (
    LongTermMemory,
    RegulatedPrototypes,
    class_mean_cls,
    cls_prediction,
    regulate,
)

__version__ = "0.1.0"

__all__ = [
    "ClassPrediction",
    "Dataset",
    "DatasetStore",
    "DualState",
    "EncodedImage",
    "EncoderConfig",
    "Episode",
    "EpisodeMetrics",
    "EvalReport",
    "LongTermMemory",
    "LossBundle",
    "ModelState",
    "RegulatedPrototypes",
    "ScamNetClassifier",
    "SimilarityBlock",
    "SynthConfig",
    "TrainConfig",
    "TrainResult",
    "apply_mask",
    "class_logits",
    "class_mean_cls",
    "cls_prediction",
    "consistency_loss",
    "dump_cls",
    "encode",
    "evaluate",
    "hippocampus_step",
    "infer",
    "init_dual_state",
    "init_state",
    "load_checkpoint",
    "load_dataset",
    "neocortex_update",
    "patchify",
    "regulate",
    "sample_episode",
    "save_checkpoint",
    "save_dataset",
    "similarity_matrix",
    "synth_generate",
    "total_loss",
    "train",
]
