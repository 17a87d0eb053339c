"""Checkpoint container: binary parameter store plus a JSON manifest."""

from __future__ import annotations

import hashlib
import json
import warnings
from pathlib import Path
from typing import Optional

import torch

from .heads import ClueFusionModel, ModelDims


class CheckpointError(RuntimeError):
    pass


def architecture_hash(dims: ModelDims, share_compare: bool) -> str:
    payload = json.dumps(
        {"dims": dims.to_dict(), "share_compare": share_compare}, sort_keys=True
    ).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".manifest.json")


def save_checkpoint(
    model: ClueFusionModel,
    path,
    task: str,
    seed: int,
    epoch: int,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    manifest = {
        "config_hash": architecture_hash(model.dims, model.share_compare),
        "dims": model.dims.to_dict(),
        "share_compare": model.share_compare,
        "task": task,
        "seed": seed,
        "epoch": epoch,
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True), "utf-8")
    return path


def read_manifest(path) -> dict:
    mpath = manifest_path(path)
    if not mpath.exists():
        raise CheckpointError(f"checkpoint manifest missing: {mpath}")
    return json.loads(mpath.read_text("utf-8"))


def load_checkpoint(
    path,
    model: ClueFusionModel,
    task: Optional[str] = None,
    warm_start: bool = False,
) -> dict:
    """Restore parameters into ``model``, returning the manifest.

    The manifest's architecture hash must match the model. When the stored
    task differs from the requested one, loading proceeds only with
    ``warm_start``: the shared backbone is restored while the target task's
    own head keeps its fresh initialization, and a warning is emitted.
    """
    path = Path(path)
    manifest = read_manifest(path)
    expected = architecture_hash(model.dims, model.share_compare)
    if manifest["config_hash"] != expected:
        raise CheckpointError(
            "checkpoint incompatible with configuration: "
            f"stored dims {manifest.get('dims')}, model dims {model.dims.to_dict()}"
        )
    state = torch.load(path, weights_only=True)
    stored_task = manifest.get("task")
    if task is not None and stored_task != task and stored_task != "both":
        if not warm_start:
            raise CheckpointError(
                f"checkpoint was trained for task {stored_task!r}, requested {task!r}; "
                "pass warm_start to restore the shared backbone only"
            )
        fresh_head = "attribute_head." if task == "attribute" else "detect_head."
        state = {key: value for key, value in state.items() if not key.startswith(fresh_head)}
        missing, unexpected = model.load_state_dict(state, strict=False)
        if unexpected:
            raise CheckpointError(f"unexpected parameters in checkpoint: {unexpected}")
        if any(not key.startswith(fresh_head) for key in missing):
            raise CheckpointError(f"checkpoint is missing backbone parameters: {missing}")
        warnings.warn(
            f"warm start from {stored_task!r} checkpoint: {fresh_head.rstrip('.')} "
            "freshly initialized",
            stacklevel=2,
        )
    else:
        model.load_state_dict(state)
    return manifest
