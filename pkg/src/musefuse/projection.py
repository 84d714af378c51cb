"""Output projection from audio-token hidden states to decoder conditioning.

A single-layer, single-head transformer block mixes the K audio-token rows,
then a per-target head reshapes them: a learned ``(rows, K)`` mixing matrix
followed by a linear map to ``cols``.  The factored head keeps the MusicGen
``(512, 768)`` target tractable without a dense ``K*d -> 512*768`` matrix.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from musefuse.errors import InvalidInput

TARGET_SHAPES = {"audioldm2": (1, 512), "musicgen": (512, 768)}
TARGETS = ("audioldm2", "musicgen", "toy")


@dataclass(frozen=True)
class ProjectionConfig:
    d_model: int = 32
    n_audio_tokens: int = 8
    width: int | None = None
    targets: tuple = ("toy",)
    toy_dim: int = 4
    seed: int = 0

    def __post_init__(self):
        for t in self.targets:
            if t not in TARGETS:
                raise InvalidInput(f"unknown decoder target {t!r}")
        if self.toy_dim < 1:
            raise InvalidInput("toy_dim must be >= 1")

    @property
    def inner_width(self) -> int:
        return self.width or min(self.d_model, 512)

    def shape(self, target: str) -> tuple[int, int]:
        if target == "toy":
            return (1, self.toy_dim)
        return TARGET_SHAPES[target]


@dataclass
class ConditioningEmbedding:
    target: str
    data: torch.Tensor


class _Head(nn.Module):
    def __init__(self, k: int, width: int, rows: int, cols: int):
        super().__init__()
        self.row_mix = nn.Parameter(torch.empty(rows, k))
        self.out = nn.Linear(width, cols)

    def forward(self, x):
        return self.out(self.row_mix @ x)


class OutputProjection(nn.Module):
    def __init__(self, cfg: ProjectionConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.inner_width
        self.in_proj = nn.Linear(cfg.d_model, w)
        self.ln1 = nn.LayerNorm(w)
        self.q = nn.Linear(w, w, bias=False)
        self.k = nn.Linear(w, w, bias=False)
        self.v = nn.Linear(w, w, bias=False)
        self.ln2 = nn.LayerNorm(w)
        self.mlp = nn.Sequential(nn.Linear(w, 2 * w), nn.GELU(), nn.Linear(2 * w, w))
        self.heads = nn.ModuleDict(
            {t: _Head(cfg.n_audio_tokens, w, *cfg.shape(t)) for t in cfg.targets}
        )
        gen = torch.Generator().manual_seed(cfg.seed + 7919)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                elif name.startswith("ln"):
                    p.fill_(1.0)
                else:
                    bound = math.sqrt(3.0 / p.shape[-1])
                    p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)

    def forward(self, hidden: torch.Tensor, target: str) -> torch.Tensor:
        k = self.cfg.n_audio_tokens
        if hidden.dim() not in (2, 3) or hidden.shape[-2] != k or hidden.shape[-1] != self.cfg.d_model:
            raise InvalidInput(
                f"expected ({k}, {self.cfg.d_model}) audio-token states, got {tuple(hidden.shape)}"
            )
        if target not in self.heads:
            raise InvalidInput(f"projection has no head for target {target!r}")
        x = self.in_proj(hidden)
        y = self.ln1(x)
        att = torch.softmax(self.q(y) @ self.k(y).transpose(-1, -2) / math.sqrt(y.shape[-1]), dim=-1)
        x = x + att @ self.v(y)
        x = x + self.mlp(self.ln2(x))
        return self.heads[target](x)


def project(hidden: torch.Tensor, target: str, proj: OutputProjection) -> ConditioningEmbedding:
    return ConditioningEmbedding(target, proj(hidden, target))


def _cond_digest(cond: ConditioningEmbedding, seed: int) -> bytes:
    data = cond.data.detach().cpu().numpy() if isinstance(cond.data, torch.Tensor) else np.asarray(cond.data)
    # quantize so float noise below 1e-4 maps to the same audio
    q = np.round(data.astype(np.float64) * 1e4).astype(np.int64)
    h = hashlib.sha256()
    h.update(cond.target.encode())
    h.update(str(q.shape).encode())
    h.update(q.tobytes())
    h.update(int(seed).to_bytes(8, "little", signed=True))
    return h.digest()


def decode_stub(
    cond: ConditioningEmbedding, duration_s: float, seed: int = 0, sample_rate: int = 16000
) -> np.ndarray:
    """Deterministic four-partial sinusoid mixture keyed by a hash of ``cond``.

    The first partial always has the largest amplitude, so the dominant
    spectral peak is a function of the conditioning embedding.
    """
    if duration_s <= 0:
        raise InvalidInput("duration must be positive")
    rng = np.random.default_rng(np.frombuffer(_cond_digest(cond, seed), dtype=np.uint32))
    freqs = rng.uniform(110.0, 1760.0, size=4)
    phases = rng.uniform(0.0, 2 * np.pi, size=4)
    amps = np.array([0.4, 0.2, 0.12, 0.08])
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    wave = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(axis=0)
    return wave.astype(np.float32)
