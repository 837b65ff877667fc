"""Episode construction and datasets: N-way K-shot sampling, the synthetic
drift-and-clutter generator, and directory save/load.

A dataset directory holds a JSON manifest plus one binary tensor file per
class; splits carry disjoint class label sets (enforced at load time).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .numerics import load_tensor, make_generator, save_tensor
from .numerics.rng import STREAM_SYNTH

TRAIN_FRACTION = 0.8
CLUTTER_POOL_SIZE = 32
SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.json"


def image_uid(split: str, class_index: int, image_index: int) -> int:
    """Stable 64-bit image id; identical across runs and platforms."""
    digest = hashlib.blake2b(
        f"{split}:{class_index}:{image_index}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


@dataclass
class Dataset:
    """One split: class labels and an image stack per class."""

    split: str
    labels: list[str]
    images: dict[str, np.ndarray]

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"unknown split tag {self.split!r}")
        for label in self.labels:
            stack = self.images[label]
            if stack.ndim != 4:
                raise DataError(
                    f"class {label!r} images must be (n, H, W, C), got {stack.shape}"
                )

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def image_shape(self) -> tuple[int, int, int]:
        first = self.images[self.labels[0]]
        return first.shape[1:]


@dataclass
class DatasetStore:
    """All splits of one dataset directory; class sets must be disjoint."""

    splits: dict[str, Dataset] = field(default_factory=dict)

    def __post_init__(self):
        seen: dict[str, str] = {}
        for split, ds in self.splits.items():
            for label in ds.labels:
                if label in seen:
                    raise DataError(
                        f"class {label!r} appears in both {seen[label]!r} and "
                        f"{split!r} splits; splits must be disjoint"
                    )
                seen[label] = split

    def __getitem__(self, split: str) -> Dataset:
        if split not in self.splits:
            raise DataError(f"dataset has no {split!r} split")
        return self.splits[split]


@dataclass
class Episode:
    """One N-way K-shot task with Q queries per class, class-major order."""

    support_images: np.ndarray
    support_labels: np.ndarray
    support_ids: np.ndarray
    query_images: np.ndarray
    query_labels: np.ndarray
    query_ids: np.ndarray
    class_labels: list[str]

    @property
    def n_way(self) -> int:
        return len(self.class_labels)

    @property
    def k_shot(self) -> int:
        return self.support_images.shape[0] // self.n_way

    @property
    def q_queries(self) -> int:
        return self.query_images.shape[0] // self.n_way


def sample_episode(
    dataset: Dataset, n_way: int, k_shot: int, q_queries: int, rng: np.random.Generator
) -> Episode:
    """Uniformly sample classes then K+Q images per class, all without
    replacement; the first K go to support, the rest to query."""
    if n_way < 2:
        raise DataError(f"n_way must be >= 2, got {n_way}")
    if k_shot < 1 or q_queries < 1:
        raise DataError("k_shot and q_queries must be >= 1")
    if dataset.n_classes < n_way:
        raise DataError(
            f"{dataset.split} split has {dataset.n_classes} classes, "
            f"need {n_way} for an episode"
        )
    need = k_shot + q_queries
    class_picks = rng.choice(dataset.n_classes, size=n_way, replace=False)
    sup_img, sup_lab, sup_id = [], [], []
    qry_img, qry_lab, qry_id = [], [], []
    class_labels = []
    for episode_class, class_index in enumerate(class_picks):
        label = dataset.labels[int(class_index)]
        stack = dataset.images[label]
        if stack.shape[0] < need:
            raise DataError(
                f"class {label!r} has {stack.shape[0]} images, "
                f"need {need} (K={k_shot} + Q={q_queries})"
            )
        picks = rng.choice(stack.shape[0], size=need, replace=False)
        class_labels.append(label)
        for j in picks[:k_shot]:
            sup_img.append(stack[int(j)])
            sup_lab.append(episode_class)
            sup_id.append(image_uid(dataset.split, int(class_index), int(j)))
        for j in picks[k_shot:]:
            qry_img.append(stack[int(j)])
            qry_lab.append(episode_class)
            qry_id.append(image_uid(dataset.split, int(class_index), int(j)))
    return Episode(
        support_images=np.stack(sup_img),
        support_labels=np.asarray(sup_lab, dtype=np.int64),
        support_ids=np.asarray(sup_id, dtype=np.uint64),
        query_images=np.stack(qry_img),
        query_labels=np.asarray(qry_lab, dtype=np.int64),
        query_ids=np.asarray(qry_id, dtype=np.uint64),
        class_labels=class_labels,
    )


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic drift-and-clutter dataset knobs."""

    n_classes: int = 25
    images_per_class: int = 20
    height: int = 32
    width: int = 32
    channels: int = 3
    patch_size: int = 8
    sigma_within: float = 0.5
    clutter_ratio: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes (one per split)")
        if self.images_per_class < 1:
            raise ConfigError("images_per_class must be >= 1")
        p = self.patch_size
        if p <= 0 or self.height % p or self.width % p:
            raise ConfigError(
                f"image {self.height}x{self.width} not divisible by patch {p}"
            )
        if not 0.0 <= self.clutter_ratio <= 1.0:
            raise ConfigError("clutter_ratio must be in [0, 1]")
        if self.sigma_within < 0.0:
            raise ConfigError("sigma_within must be >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def synth_generate(config: SynthConfig) -> DatasetStore:
    """Generate class prototypes plus drifted, cluttered instances.

    Each class has a Gaussian patch-grid prototype; every image is the
    prototype plus per-pixel N(0, sigma^2) noise, with ceil(rho * M)
    random patch positions overwritten by patches from a shared
    class-agnostic clutter pool. The first 80% of classes form the train
    split, the rest the test split. Deterministic per seed.
    """
    gen = make_generator(config.seed, STREAM_SYNTH)
    p = config.patch_size
    gh, gw = config.height // p, config.width // p
    m = gh * gw
    n_clutter = math.ceil(config.clutter_ratio * m)
    pool = gen.standard_normal((CLUTTER_POOL_SIZE, p, p, config.channels)).astype(
        np.float32
    )

    n_train = max(1, int(TRAIN_FRACTION * config.n_classes))
    if n_train == config.n_classes:
        n_train = config.n_classes - 1

    per_class: list[np.ndarray] = []
    for _ in range(config.n_classes):
        proto = gen.standard_normal(
            (config.height, config.width, config.channels)
        ).astype(np.float32)
        stack = np.empty(
            (config.images_per_class, config.height, config.width, config.channels),
            dtype=np.float32,
        )
        for i in range(config.images_per_class):
            img = proto + config.sigma_within * gen.standard_normal(
                proto.shape
            ).astype(np.float32)
            if n_clutter:
                positions = gen.choice(m, size=n_clutter, replace=False)
                picks = gen.integers(0, CLUTTER_POOL_SIZE, size=n_clutter)
                for pos, pick in zip(positions, picks):
                    r, c = divmod(int(pos), gw)
                    img[r * p : (r + 1) * p, c * p : (c + 1) * p, :] = pool[int(pick)]
            stack[i] = img
        per_class.append(stack)

    def build(split: str, indices: range) -> Dataset:
        labels = [f"class_{i:03d}" for i in indices]
        return Dataset(
            split=split,
            labels=labels,
            images={f"class_{i:03d}": per_class[i] for i in indices},
        )

    return DatasetStore(
        splits={
            "train": build("train", range(n_train)),
            "test": build("test", range(n_train, config.n_classes)),
        }
    )


def save_dataset(store: DatasetStore, path) -> None:
    """Write manifest.json plus one tensor file per class."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "images").mkdir(exist_ok=True)
    h, w, c = next(iter(store.splits.values())).image_shape()
    manifest: dict = {
        "version": 1,
        "height": int(h),
        "width": int(w),
        "channels": int(c),
        "splits": {},
    }
    for split, ds in store.splits.items():
        entry: dict = {}
        for label in ds.labels:
            rel = f"images/{split}_{label}.bin"
            save_tensor(path / rel, ds.images[label].astype(np.float32))
            entry[label] = {"file": rel, "count": int(ds.images[label].shape[0])}
        manifest["splits"][split] = entry
    with open(path / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_dataset(path) -> DatasetStore:
    """Load and validate a dataset directory; defects name the file."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {manifest_path}: {exc}") from exc
    for key in ("height", "width", "channels", "splits"):
        if key not in manifest:
            raise DataError(f"manifest {manifest_path} missing key {key!r}")
    shape = (manifest["height"], manifest["width"], manifest["channels"])
    splits: dict[str, Dataset] = {}
    for split, classes in manifest["splits"].items():
        if split not in SPLITS:
            raise DataError(f"manifest {manifest_path}: unknown split {split!r}")
        labels = sorted(classes)
        images: dict[str, np.ndarray] = {}
        for label in labels:
            file_path = path / classes[label]["file"]
            stack = load_tensor(file_path)
            if stack.ndim != 4 or stack.shape[1:] != shape:
                raise DataError(
                    f"{file_path}: image stack shape {stack.shape} does not "
                    f"match manifest (n, {shape[0]}, {shape[1]}, {shape[2]})"
                )
            if stack.shape[0] != classes[label]["count"]:
                raise DataError(
                    f"{file_path}: {stack.shape[0]} images, manifest says "
                    f"{classes[label]['count']}"
                )
            if not np.isfinite(stack).all():
                raise DataError(f"{file_path}: image stack contains non-finite values")
            images[label] = stack
        splits[split] = Dataset(split=split, labels=labels, images=images)
    return DatasetStore(splits=splits)
