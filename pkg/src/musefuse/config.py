"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment.  Unknown keys are rejected.
Values are coerced to the type of the built-in default.
"""

from __future__ import annotations

import os
from pathlib import Path

from musefuse.errors import InvalidInput

DEFAULTS: dict = {
    # language model
    "n_layers": 6,
    "block_len": 2,
    "d_model": 32,
    "n_heads": 2,
    "vocab_size": 258,
    "n_audio_tokens": 8,
    "max_seq_len": 1024,
    "seed": 0,
    # encoders (toy scale unless scale = full)
    "scale": "toy",
    "music_seq_len": 8,
    "music_feat_dim": 16,
    "image_seq_len": 5,
    "image_feat_dim": 16,
    "video_seq_len": 9,
    "video_feat_dim": 16,
    # adapters
    "adapter_variant": "full",
    "conv_kernel": 3,
    "conv_stride": 2,
    # output projection
    "target": "toy",
    "toy_cond_dim": 4,
    # training
    "lr": 1e-4,
    "batch_size": 8,
    "lora_rank": 8,
    "lora_alpha": 16.0,
    "penalty_weight": 1.0,
    "grad_clip": 1.0,
    "epochs_stage1": 5,
    "epochs_stage2": 5,
    "epochs_stage3": 2,
    "max_steps": 0,  # 0 = run all epochs
    # generation
    "temperature": 0.6,
    "top_p": 0.8,
    "max_len": 512,
    "sample_rate": 16000,
    "duration_s": 4.0,
}

SEED_ENV = "MUMU_SEED"


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise InvalidInput(f"bad value for {key}: {raw!r}") from exc
    return raw.strip()


def parse_config(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise InvalidInput(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def resolve(file_values: dict | None = None, flags: dict | None = None) -> dict:
    """Merge defaults, config file and CLI flags (flags win).

    ``MUMU_SEED`` replaces the built-in default seed; a seed from the config
    file or a flag still takes precedence over it.
    """
    cfg = dict(DEFAULTS)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        cfg["seed"] = _coerce("seed", env_seed)
    cfg.update(file_values or {})
    cfg.update({k: v for k, v in (flags or {}).items() if v is not None})
    return cfg
