"""Assembled model: stand-in encoders, adapters, fusion LM, output projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from musefuse.adapters import AdapterConfig, build_adapters
from musefuse.encoders import MODALITIES, EncoderConfig, RawModalityInput, encode
from musefuse.errors import InvalidInput
from musefuse.fusion import ByteTokenizer, FusionConfig, FusionLM
from musefuse.lora import has_lora, inject_lora
from musefuse.projection import OutputProjection, ProjectionConfig


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    adapter: AdapterConfig
    fusion: FusionConfig
    projection: ProjectionConfig
    target: str = "toy"

    @classmethod
    def from_flat(cls, c: dict) -> "ModelConfig":
        seed = c["seed"]
        encoder = EncoderConfig(
            scale=c["scale"],
            toy_seq_len={k: c[f"{k}_seq_len"] for k in MODALITIES},
            toy_feat_dim={k: c[f"{k}_feat_dim"] for k in MODALITIES},
            seed=seed,
        )
        adapter = AdapterConfig(
            d_model=c["d_model"], conv_kernel=c["conv_kernel"], conv_stride=c["conv_stride"],
            variant=c["adapter_variant"], seed=seed,
        )
        fusion = FusionConfig(
            n_layers=c["n_layers"], block_len=c["block_len"], d_model=c["d_model"],
            n_heads=c["n_heads"], vocab_size=c["vocab_size"], n_audio_tokens=c["n_audio_tokens"],
            max_seq_len=c["max_seq_len"], max_target_len=c["max_len"], seed=seed,
        )
        projection = ProjectionConfig(
            d_model=c["d_model"], n_audio_tokens=c["n_audio_tokens"],
            targets=(c["target"],), toy_dim=c["toy_cond_dim"], seed=seed,
        )
        return cls(encoder, adapter, fusion, projection, c["target"])


class MusicModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        feat_dims = {k: cfg.encoder.shape(k)[1] for k in MODALITIES}
        self.adapters = build_adapters(feat_dims, cfg.adapter)
        self.lm = FusionLM(cfg.fusion)
        self.output_projection = OutputProjection(cfg.projection)
        self.tokenizer = ByteTokenizer.for_config(cfg.fusion)
        self.lora = None  # (rank, alpha) once applied

    def apply_lora(self, rank: int, alpha: float) -> int:
        if has_lora(self.lm):
            return 0
        added = inject_lora(self.lm, rank, alpha, seed=self.cfg.fusion.seed)
        self.lora = (rank, alpha)
        return added

    def encode_media(self, raw: RawModalityInput) -> np.ndarray:
        return encode(raw, self.cfg.encoder).data

    def adapt(self, embeddings: dict) -> dict:
        """``{modality: (B, L, F) or (L, F)}`` -> ``{modality: (B, d) or (d,)}``."""
        dtype = self.lm.tok_emb.weight.dtype
        out = {}
        for kind, emb in embeddings.items():
            if kind not in self.adapters:
                raise InvalidInput(f"unknown modality key {kind!r}")
            out[kind] = self.adapters[kind](torch.as_tensor(emb, dtype=dtype))
        return out

    def forward(self, ids, embeddings=None, masks=None, trace=None):
        feats = self.adapt(embeddings or {})
        return self.lm(ids, feats, masks, trace=trace)

    def project_audio(self, final_hidden: torch.Tensor, positions, target: str | None = None):
        """Project the rows of ``final_hidden`` (T, d) at ``positions``."""
        rows = final_hidden[torch.as_tensor(positions)]
        return self.output_projection(rows, target or self.cfg.target)
