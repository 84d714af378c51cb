"""Understanding adapters: encoder embedding sequence -> one d_model vector.

Temporal modalities (music, video) run

    conv1d -> GRU -> single-head attention -> mean-pool -> dense -> projection

while images skip the recurrence and attention:

    conv1d -> mean-pool -> dense -> projection

The ``variant`` switch removes components for ablations.  Every adapter owns
the same parameter layout for its variant, so the image adapter still carries
(untouched) recurrence and attention weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from musefuse.encoders import MODALITIES, ModalityEmbedding
from musefuse.errors import InvalidInput

TEMPORAL = ("music", "video")

VARIANTS = ("projection_only", "dense", "rnn", "attn_rnn", "full")

# components active per variant; the projection is always present
_COMPONENTS = {
    "projection_only": frozenset(),
    "dense": frozenset({"dense"}),
    "rnn": frozenset({"conv", "rnn"}),
    "attn_rnn": frozenset({"conv", "rnn", "attn"}),
    "full": frozenset({"conv", "rnn", "attn", "dense"}),
}


@dataclass(frozen=True)
class AdapterConfig:
    d_model: int = 32
    conv_kernel: int = 3
    conv_stride: int = 2
    rnn_hidden: int | None = None  # defaults to the encoder feature dim
    dense_hidden: int | None = None  # defaults to 2 * d_model
    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.d_model < 1:
            raise InvalidInput("d_model must be >= 1")
        if self.variant not in VARIANTS:
            raise InvalidInput(f"unknown adapter variant {self.variant!r}")
        if self.conv_kernel < 1 or self.conv_stride < 1:
            raise InvalidInput("conv kernel and stride must be >= 1")

    @property
    def components(self) -> frozenset:
        return _COMPONENTS[self.variant]


@dataclass
class AdapterOutput:
    kind: str
    vector: torch.Tensor


def attention_weights(a_rnn: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor) -> torch.Tensor:
    """Row-stochastic ``softmax(Q K^T / sqrt(d))`` with ``Q = A W_q`` and ``K = A W_k``.

    ``a_rnn`` is ``(L, d)`` or batched ``(B, L, d)``.
    """
    if a_rnn.dim() not in (2, 3):
        raise InvalidInput(f"expected (L, d) or (B, L, d) states, got {tuple(a_rnn.shape)}")
    d = a_rnn.shape[-1]
    if w_q.shape != (d, d) or w_k.shape != (d, d):
        raise InvalidInput(
            f"attention weights must be ({d}, {d}), got {tuple(w_q.shape)} and {tuple(w_k.shape)}"
        )
    if a_rnn.shape[-2] < 1:
        raise InvalidInput("attention needs at least one time step")
    q = a_rnn @ w_q
    k = a_rnn @ w_k
    return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d), dim=-1)


def _uniform_(t: torch.Tensor, fan_in: int, gen: torch.Generator):
    bound = math.sqrt(3.0 / fan_in)
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)


class UnderstandingAdapter(nn.Module):
    def __init__(self, kind: str, feat_dim: int, cfg: AdapterConfig):
        super().__init__()
        if kind not in MODALITIES:
            raise InvalidInput(f"unknown modality {kind!r}")
        self.kind = kind
        self.cfg = cfg
        self.feat_dim = feat_dim
        comps = cfg.components
        self.components = comps
        hidden = cfg.rnn_hidden or feat_dim
        dense_hidden = cfg.dense_hidden or 2 * cfg.d_model

        width = feat_dim
        if "conv" in comps:
            self.conv = nn.Conv1d(
                feat_dim, feat_dim, cfg.conv_kernel, stride=cfg.conv_stride,
                padding=cfg.conv_kernel // 2,
            )
        if "rnn" in comps:
            self.rnn = nn.GRU(feat_dim, hidden, batch_first=True)
            if self.temporal:
                width = hidden
        if "attn" in comps:
            self.w_q = nn.Parameter(torch.empty(hidden, hidden))
            self.w_k = nn.Parameter(torch.empty(hidden, hidden))
            self.w_v = nn.Parameter(torch.empty(hidden, hidden))
        if "dense" in comps:
            self.dense = nn.Sequential(
                nn.Linear(width, dense_hidden), nn.GELU(), nn.Linear(dense_hidden, width)
            )
        self.proj = nn.Linear(width, cfg.d_model)
        self.reset_parameters()

    @property
    def temporal(self) -> bool:
        return self.kind in TEMPORAL

    def reset_parameters(self):
        gen = torch.Generator().manual_seed(self.cfg.seed * 1009 + MODALITIES.index(self.kind))
        for name, p in self.named_parameters():
            if "bias" in name:
                nn.init.zeros_(p)
            elif p.dim() == 3:  # conv (out, in, k)
                _uniform_(p, p.shape[1] * p.shape[2], gen)
            else:
                _uniform_(p, p.shape[-1], gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.dim() != 3 or x.shape[-1] != self.feat_dim:
            raise InvalidInput(
                f"{self.kind} adapter expects (..., L, {self.feat_dim}), got {tuple(x.shape)}"
            )
        h = x
        if "conv" in self.components:
            h = self.conv(h.transpose(1, 2)).transpose(1, 2)
        if self.temporal and "rnn" in self.components:
            h, _ = self.rnn(h)
            if "attn" in self.components:
                scores = attention_weights(h, self.w_q, self.w_k)
                h = scores @ (h @ self.w_v)
        h = h.mean(dim=1)
        if "dense" in self.components:
            h = self.dense(h)
        out = self.proj(h)
        return out.squeeze(0) if squeeze else out


def _as_tensor(emb: ModalityEmbedding, adapter: UnderstandingAdapter) -> torch.Tensor:
    dtype = next(adapter.parameters()).dtype
    return torch.as_tensor(emb.data, dtype=dtype)


def adapt_temporal(emb: ModalityEmbedding, adapter: UnderstandingAdapter) -> AdapterOutput:
    if emb.kind not in TEMPORAL or adapter.kind != emb.kind:
        raise InvalidInput(f"temporal adapter cannot take {emb.kind} embedding")
    return AdapterOutput(emb.kind, adapter(_as_tensor(emb, adapter)))


def adapt_static(emb: ModalityEmbedding, adapter: UnderstandingAdapter) -> AdapterOutput:
    if emb.kind != "image" or adapter.kind != "image":
        raise InvalidInput(f"static adapter cannot take {emb.kind} embedding")
    return AdapterOutput(emb.kind, adapter(_as_tensor(emb, adapter)))


def adapt(emb: ModalityEmbedding, adapter: UnderstandingAdapter) -> AdapterOutput:
    if emb.kind in TEMPORAL:
        return adapt_temporal(emb, adapter)
    return adapt_static(emb, adapter)


def build_adapters(feat_dims: dict, cfg: AdapterConfig) -> nn.ModuleDict:
    return nn.ModuleDict({k: UnderstandingAdapter(k, feat_dims[k], cfg) for k in MODALITIES})
