"""Decoder-only LM with block-wise modality injection and audio tokens.

The last ``3 * block_len`` layers form three injection blocks, fed in the
order video, image, music.  Before every layer of block ``i`` the hidden
state receives ``gate_i * (A_modality + P_query_i)`` broadcast over positions,
or ``gate_i * P_query_i`` when that modality is absent.  Gates start at zero,
so a fresh model behaves exactly like the plain LM.

The vocabulary is a base vocabulary of ``vocab_size`` ids followed by
``n_audio_tokens`` reserved ids ``[AUD_0] .. [AUD_{K-1}]``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from musefuse.errors import InvalidInput

INJECTION_ORDER = ("video", "image", "music")


@dataclass(frozen=True)
class FusionConfig:
    n_layers: int = 6
    block_len: int = 2
    d_model: int = 32
    n_heads: int = 2
    vocab_size: int = 258
    n_audio_tokens: int = 8
    max_seq_len: int = 1024
    max_target_len: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.block_len < 1 or self.n_layers < 3 * self.block_len:
            raise InvalidInput(
                f"n_layers ({self.n_layers}) must be >= 3 * block_len ({self.block_len})"
            )
        if self.n_audio_tokens < 1:
            raise InvalidInput("n_audio_tokens must be >= 1")
        if self.d_model % self.n_heads:
            raise InvalidInput("d_model must be divisible by n_heads")
        if self.vocab_size < 2:
            raise InvalidInput("vocab_size must be >= 2")

    @property
    def total_vocab(self) -> int:
        return self.vocab_size + self.n_audio_tokens

    @property
    def eos_id(self) -> int:
        return self.vocab_size - 1

    @property
    def audio_ids(self) -> list[int]:
        return list(range(self.vocab_size, self.vocab_size + self.n_audio_tokens))

    def injection_schedule(self) -> dict[int, tuple[int, str]]:
        """Map layer index -> (block index, modality) for injected layers."""
        first = self.n_layers - 3 * self.block_len
        return {
            first + b * self.block_len + j: (b, INJECTION_ORDER[b])
            for b in range(3)
            for j in range(self.block_len)
        }


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 0.6
    top_p: float = 0.8
    max_len: int = 512
    greedy: bool = False

    def __post_init__(self):
        if not self.greedy and self.temperature <= 0:
            raise InvalidInput("temperature must be > 0 (use greedy=True for argmax decoding)")
        if not 0 < self.top_p <= 1:
            raise InvalidInput("top_p must be in (0, 1]")
        if self.max_len < 1:
            raise InvalidInput("max_len must be >= 1")


@dataclass
class HiddenStates:
    layers: list  # per-layer outputs, each (B, T, d)
    final: torch.Tensor  # normalized last-layer state


class ByteTokenizer:
    """Bytes 0..255, then BOS and EOS at the top of the base vocabulary, then audio ids."""

    AUDIO_RE = re.compile(r"\[AUD_(\d+)\]")

    def __init__(self, vocab_size: int = 258, n_audio_tokens: int = 8):
        if vocab_size < 258:
            raise InvalidInput("byte tokenizer needs vocab_size >= 258")
        self.vocab_size = vocab_size
        self.n_audio_tokens = n_audio_tokens
        self.bos_id = vocab_size - 2
        self.eos_id = vocab_size - 1

    @classmethod
    def for_config(cls, cfg: FusionConfig) -> "ByteTokenizer":
        return cls(cfg.vocab_size, cfg.n_audio_tokens)

    def audio_id(self, i: int) -> int:
        return self.vocab_size + i

    def is_audio(self, tok: int) -> bool:
        return self.vocab_size <= tok < self.vocab_size + self.n_audio_tokens

    def encode(self, text: str, bos: bool = False, eos: bool = False) -> list[int]:
        ids = [self.bos_id] if bos else []
        pos = 0
        for m in self.AUDIO_RE.finditer(text):
            ids.extend(text[pos:m.start()].encode("utf-8"))
            i = int(m.group(1))
            if i >= self.n_audio_tokens:
                raise InvalidInput(f"audio marker {m.group(0)} exceeds K={self.n_audio_tokens}")
            ids.append(self.audio_id(i))
            pos = m.end()
        ids.extend(text[pos:].encode("utf-8"))
        if eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids) -> str:
        out, buf = [], bytearray()
        for tok in ids:
            tok = int(tok)
            if tok < 256:
                buf.append(tok)
                continue
            out.append(buf.decode("utf-8", errors="replace"))
            buf = bytearray()
            if self.is_audio(tok):
                out.append(f"[AUD_{tok - self.vocab_size}]")
        out.append(buf.decode("utf-8", errors="replace"))
        return "".join(out)


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d_model, d_model, bias=False)
        self.k = nn.Linear(d_model, d_model, bias=False)
        self.v = nn.Linear(d_model, d_model, bias=False)
        self.o = nn.Linear(d_model, d_model, bias=False)

    def forward(self, x):
        B, T, C = x.shape
        hd = C // self.n_heads
        q = self.q(x).view(B, T, self.n_heads, hd).transpose(1, 2)
        k = self.k(x).view(B, T, self.n_heads, hd).transpose(1, 2)
        v = self.v(x).view(B, T, self.n_heads, hd).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        mask = torch.ones(T, T, dtype=torch.bool, device=x.device).triu(1)
        att = att.masked_fill(mask, float("-inf")).softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, C)
        return self.o(y)


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model), nn.GELU(), nn.Linear(4 * d_model, d_model)
        )

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class FusionLM(nn.Module):
    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        self.tok_emb = nn.Embedding(cfg.total_vocab, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_seq_len, cfg.d_model)
        self.layers = nn.ModuleList(Block(cfg.d_model, cfg.n_heads) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.total_vocab, bias=False)
        self.prefix_queries = nn.Parameter(torch.empty(3, cfg.d_model))
        self.gates = nn.Parameter(torch.zeros(3))
        self._schedule = cfg.injection_schedule()
        self._init_weights(gen)

    def _init_weights(self, gen):
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name == "gates":
                    p.zero_()
                elif name.endswith("bias"):
                    p.zero_()
                elif ".ln" in name or name.startswith("ln_f"):
                    p.fill_(1.0)
                elif name == "head.weight":
                    # unit-scale logits, so a frozen head still leaves a usable logit range
                    p.copy_(torch.randn(p.shape, generator=gen) / math.sqrt(self.cfg.d_model))
                else:
                    p.copy_(torch.randn(p.shape, generator=gen) * 0.02)

    def injection(self, block: int, modality: str, feats: dict, feat_mask: dict, batch: int):
        p = self.prefix_queries[block].expand(batch, -1)
        a = feats.get(modality)
        if a is None:
            return self.gates[block] * p
        if a.dim() == 1:
            a = a.unsqueeze(0).expand(batch, -1)
        m = feat_mask.get(modality)
        if m is not None:
            a = a * m.to(a.dtype).unsqueeze(-1)
        return self.gates[block] * (a + p)

    def forward(self, ids, feats=None, feat_mask=None, trace=None):
        """Return ``(logits, HiddenStates)``.

        ``ids`` is ``(T,)`` or ``(B, T)``.  ``feats`` maps modality to an
        adapter vector ``(d,)`` or ``(B, d)``; ``feat_mask`` optionally marks,
        per batch row, which rows actually carry that modality.  When ``trace``
        is a list, ``(layer, block, modality, injected)`` is appended for every
        injected layer.
        """
        feats = dict(feats or {})
        feat_mask = dict(feat_mask or {})
        for key in list(feats) + list(feat_mask):
            if key not in INJECTION_ORDER:
                raise InvalidInput(f"unknown modality key {key!r}")
        ids = torch.as_tensor(ids)
        squeeze = ids.dim() == 1
        if squeeze:
            ids = ids.unsqueeze(0)
        B, T = ids.shape
        if T == 0:
            raise InvalidInput("token sequence is empty")
        if T > self.cfg.max_seq_len:
            raise InvalidInput(f"sequence length {T} exceeds max_seq_len {self.cfg.max_seq_len}")
        if ids.min() < 0 or ids.max() >= self.cfg.total_vocab:
            raise InvalidInput("token id out of range")
        pos = torch.arange(T)
        h = self.tok_emb(ids) + self.pos_emb(pos)
        layers = []
        for i, layer in enumerate(self.layers):
            sched = self._schedule.get(i)
            if sched is not None:
                block, modality = sched
                inj = self.injection(block, modality, feats, feat_mask, B)
                if trace is not None:
                    trace.append((i, block, modality, inj.detach().clone()))
                h = h + inj.unsqueeze(1)
            h = layer(h)
            layers.append(h)
        final = self.ln_f(h)
        logits = self.head(final)
        if squeeze:
            logits = logits.squeeze(0)
            final = final.squeeze(0)
            layers = [x.squeeze(0) for x in layers]
        return logits, HiddenStates(layers, final)


def nucleus_filter(probs: torch.Tensor, top_p: float) -> torch.Tensor:
    """Zero out everything outside the smallest top-probability set with mass >= top_p."""
    sorted_p, order = torch.sort(probs, descending=True)
    cum = torch.cumsum(sorted_p, dim=-1)
    drop = cum - sorted_p > top_p  # keep the token that crosses the threshold
    sorted_p = sorted_p.masked_fill(drop, 0.0)
    out = torch.zeros_like(probs).scatter(-1, order, sorted_p)
    return out / out.sum(dim=-1, keepdim=True)


@torch.no_grad()
def generate(
    model: FusionLM,
    prompt,
    feats=None,
    sampling: SamplingConfig | None = None,
    generator: torch.Generator | None = None,
    logit_bias: torch.Tensor | None = None,
) -> list[int]:
    """Autoregressive nucleus sampling; returns only the newly generated ids.

    Audio ids other than ``[AUD_0]`` are never sampled directly.  Sampling
    ``[AUD_0]`` emits the full ``[AUD_0]..[AUD_{K-1}]`` suffix and stops, so
    audio tokens can only appear as a complete trailing block.  ``[AUD_0]`` is
    masked once fewer than K slots remain in the length budget.
    """
    sampling = sampling or SamplingConfig()
    cfg = model.cfg
    ids = [int(t) for t in prompt]
    if not ids:
        raise InvalidInput("prompt is empty")
    audio = cfg.audio_ids
    out: list[int] = []
    while len(out) < sampling.max_len:
        context = ids[-cfg.max_seq_len:]
        logits, _ = model(torch.tensor(context), feats)
        logits = logits[-1].clone()
        if logit_bias is not None:
            logits = logits + logit_bias.to(logits.dtype)
        logits[audio[1:]] = float("-inf")
        if sampling.max_len - len(out) < cfg.n_audio_tokens:
            logits[audio[0]] = float("-inf")
        if sampling.greedy:
            tok = int(torch.argmax(logits))
        else:
            probs = torch.softmax(logits / sampling.temperature, dim=-1)
            probs = nucleus_filter(probs, sampling.top_p)
            tok = int(torch.multinomial(probs, 1, generator=generator))
        if tok == audio[0]:
            out.extend(audio)
            break
        out.append(tok)
        ids.append(tok)
        if tok == cfg.eos_id:
            break
    return out


def detect_audio_tokens(seq, cfg: FusionConfig) -> list[int] | None:
    """Positions of the trailing ``[AUD_0]..[AUD_{K-1}]`` block, or None."""
    seq = [int(t) for t in seq]
    k = cfg.n_audio_tokens
    if len(seq) < k or seq[-k:] != cfg.audio_ids:
        return None
    return list(range(len(seq) - k, len(seq)))
