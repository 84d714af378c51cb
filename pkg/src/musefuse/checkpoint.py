"""Named-tensor archives (``.npz``): name -> float32 array, plus a JSON meta entry."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from musefuse.config import DEFAULTS
from musefuse.errors import InvalidInput

META_KEY = "__meta__"


def save_archive(path, tensors: dict, meta: dict | None = None):
    arrays = {}
    for name, value in tensors.items():
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arrays[name] = np.ascontiguousarray(value, dtype=np.float32)
    arrays[META_KEY] = np.array(json.dumps(meta or {}, sort_keys=True))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_archive(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"checkpoint {path} not found")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z[META_KEY])) if META_KEY in z.files else {}
        tensors = {k: z[k] for k in z.files if k != META_KEY}
    return tensors, meta


def save_checkpoint(model, path, stage: int | None, config: dict):
    meta = {"stage": stage, "config": config, "lora": list(model.lora) if model.lora else None}
    save_archive(path, model.state_dict(), meta)


def load_checkpoint(path):
    """Rebuild a :class:`MusicModel` from an archive; returns ``(model, meta)``."""
    from musefuse.model import ModelConfig, MusicModel

    tensors, meta = load_archive(path)
    config = {**DEFAULTS, **meta.get("config", {})}
    model = MusicModel(ModelConfig.from_flat(config))
    if meta.get("lora"):
        model.apply_lora(*meta["lora"])
    state = model.state_dict()
    missing = set(state) - set(tensors)
    if missing:
        raise InvalidInput(f"checkpoint {path} lacks {sorted(missing)[:3]}...")
    model.load_state_dict({k: torch.from_numpy(tensors[k]) for k in state})
    return model, meta
