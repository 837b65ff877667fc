"""Checkpoint directories: both parameter sets, training scalars, and the
long-term memory, all in the binary tensor format plus a JSON manifest.
Round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .consolidation import DualState
from .encoder import EncoderConfig, ModelState
from .errors import DataError
from .memory import LongTermMemory
from .numerics import Tensor, load_tensor, save_tensor

MANIFEST_NAME = "checkpoint.json"
CHECKPOINT_VERSION = 1


def save_checkpoint(state: DualState, memory: LongTermMemory, path) -> None:
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    param_names = sorted(state.hippocampus.params)
    for i, name in enumerate(param_names):
        save_tensor(
            path / "tensors" / f"h_{i:04d}.bin", state.hippocampus.params[name].data
        )
        save_tensor(
            path / "tensors" / f"n_{i:04d}.bin", state.neocortex.params[name].data
        )
    memory_manifest = {}
    for i, label in enumerate(sorted(memory.entries)):
        rel = f"tensors/mem_{i:04d}.bin"
        save_tensor(path / rel, memory.entries[label].astype(np.float32))
        memory_manifest[label] = {
            "file": rel,
            "count": int(memory.update_counts.get(label, 0)),
        }
    manifest = {
        "version": CHECKPOINT_VERSION,
        "encoder": state.hippocampus.config.to_dict(),
        "ema_decay": float(state.ema_decay),
        "learning_rate": float(state.learning_rate),
        "cls_weight_raw": float(state.cls_weight_raw.data),
        "step_count": int(state.step_count),
        "dual_net": bool(state.dual_net),
        "params": {name: i for i, name in enumerate(param_names)},
        "memory": memory_manifest,
    }
    with open(path / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(path) -> tuple[DualState, LongTermMemory]:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no checkpoint manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed checkpoint manifest {manifest_path}: {exc}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataError(
            f"unsupported checkpoint version {manifest.get('version')!r} "
            f"in {manifest_path}"
        )
    config = EncoderConfig(**manifest["encoder"])

    def load_params(prefix: str, requires_grad: bool) -> ModelState:
        params: dict[str, Tensor] = {}
        for name, index in manifest["params"].items():
            arr = load_tensor(path / "tensors" / f"{prefix}_{index:04d}.bin")
            params[name] = Tensor(arr, requires_grad=requires_grad)
        return ModelState(config, params)

    hippo = load_params("h", requires_grad=True)
    neo = load_params("n", requires_grad=False)
    memory = LongTermMemory()
    for label, entry in manifest["memory"].items():
        memory.entries[label] = load_tensor(path / entry["file"])
        memory.update_counts[label] = int(entry["count"])
    state = DualState(
        hippocampus=hippo,
        neocortex=neo,
        ema_decay=float(manifest["ema_decay"]),
        learning_rate=float(manifest["learning_rate"]),
        cls_weight_raw=Tensor(
            np.asarray(manifest["cls_weight_raw"], dtype=np.float32),
            requires_grad=True,
        ),
        step_count=int(manifest["step_count"]),
        dual_net=bool(manifest["dual_net"]),
    )
    return state, memory
