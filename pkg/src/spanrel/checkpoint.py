"""Checkpoints as flat named-tensor archives (``.npz``) with a JSON manifest."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch

from .config import from_ini, to_ini
from .encoder import ToySegmenter

MANIFEST_KEY = "__manifest__"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_archive(path, tensors: Dict[str, torch.Tensor], manifest: dict) -> None:
    arrays = {name: t.detach().cpu().numpy() for name, t in tensors.items()}
    if MANIFEST_KEY in arrays:
        raise CheckpointError(f"tensor name {MANIFEST_KEY!r} is reserved")
    arrays[MANIFEST_KEY] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_archive(path) -> Tuple[Dict[str, torch.Tensor], dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            manifest = json.loads(data[MANIFEST_KEY].tobytes().decode("utf-8"))
            tensors = {k: torch.from_numpy(data[k].copy()) for k in data.files if k != MANIFEST_KEY}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"could not read checkpoint {path}: {exc}") from exc
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    return tensors, manifest


def save_model(model, path, entity_labels: Sequence[str] = (), relation_labels: Sequence[str] = (),
               extra: Optional[dict] = None) -> None:
    encoder_manifest = model.encoder.manifest()
    manifest = {
        "format": FORMAT_VERSION,
        "hidden_size": encoder_manifest["hidden_size"],
        "num_layers": encoder_manifest["num_layers"],
        "aggregation": model.config.encoder.aggregation,
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
        "encoder": encoder_manifest,
        "config": to_ini(model.config),
        "entity_labels": list(entity_labels),
        "relation_labels": list(relation_labels),
        "extra": extra or {},
    }
    save_archive(path, dict(model.state_dict()), manifest)


def load_model(path):
    """Rebuild a model from a checkpoint; returns ``(model, manifest)``."""
    from .model import JointExtractor, build_backend

    if not Path(path).is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    tensors, manifest = load_archive(path)
    config = from_ini(manifest["config"])
    enc = manifest["encoder"]
    segmenter = ToySegmenter.from_state(enc["segmenter"]) if enc["backend"] == "toy" else None
    model = JointExtractor(config, build_backend(config, segmenter))
    model.to(getattr(torch, manifest["dtype"]))
    try:
        model.load_state_dict(tensors)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint tensors do not match the model: {exc}") from exc
    model.eval()
    return model, manifest
