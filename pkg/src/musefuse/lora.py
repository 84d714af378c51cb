from __future__ import annotations

import math

import torch
from torch import nn


class LoRALinear(nn.Module):
    """Frozen ``nn.Linear`` plus a low-rank update ``(alpha / r) * B @ A``.

    ``B`` starts at zero, so the wrapped layer is unchanged until trained.
    """

    def __init__(self, base: nn.Linear, r: int = 8, alpha: float = 16.0, generator=None):
        super().__init__()
        if r < 1:
            raise ValueError("LoRA rank must be >= 1")
        self.base = base
        self.r = r
        self.alpha = alpha
        self.scaling = alpha / r
        dtype = base.weight.dtype
        self.lora_A = nn.Parameter(torch.empty(r, base.in_features, dtype=dtype))
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, r, dtype=dtype))
        bound = 1.0 / math.sqrt(base.in_features)
        with torch.no_grad():
            self.lora_A.copy_(
                torch.rand(self.lora_A.shape, generator=generator, dtype=torch.float64) * 2 * bound - bound
            )
        for p in self.base.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        return self.base(x) + (x @ self.lora_A.T @ self.lora_B.T) * self.scaling


def inject_lora(lm: nn.Module, r: int, alpha: float, seed: int = 0, targets=("q", "v")) -> int:
    """Wrap attention ``targets`` of every layer in place; returns the added parameter count."""
    gen = torch.Generator().manual_seed(seed + 104729)
    added = 0
    for layer in lm.layers:
        attn = layer.attn
        for name in targets:
            base = getattr(attn, name)
            if isinstance(base, LoRALinear):
                continue
            wrapped = LoRALinear(base, r, alpha, generator=gen)
            setattr(attn, name, wrapped)
            added += wrapped.lora_A.numel() + wrapped.lora_B.numel()
    return added


def has_lora(module: nn.Module) -> bool:
    return any(isinstance(m, LoRALinear) for m in module.modules())
