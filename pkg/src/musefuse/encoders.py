"""Frozen stand-in feature encoders for music, images and video.

Each encoder is a fixed, seeded random linear map applied to framed (music) or
patched (image/video) input summaries, followed by ``tanh``.  Output shapes
follow the pretrained backbones they stand in for:

    music  (25, 1024)   MERT-style
    image  (197, 768)   ViT-style, CLS row + 14x14 patches
    video  (3137, 768)  ViViT-style, CLS row + spatio-temporal tubelets

A real pretrained encoder can be dropped in as any callable mapping a
:class:`RawModalityInput` to a :class:`ModalityEmbedding` of the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from musefuse.errors import InvalidInput

MODALITIES = ("music", "image", "video")
SCALES = ("full", "toy")

FULL_SHAPES = {
    "music": (25, 1024),
    "image": (197, 768),
    "video": (3137, 768),
}

N_BANDS = 32
PATCH = 4
TUBELET = 2


@dataclass(frozen=True)
class RawModalityInput:
    kind: str
    data: np.ndarray
    sample_rate: int | None = None

    def __post_init__(self):
        if self.kind not in MODALITIES:
            raise InvalidInput(f"unknown modality {self.kind!r}")
        data = np.asarray(self.data)
        if data.size == 0:
            raise InvalidInput(f"{self.kind} payload is empty")
        if not np.issubdtype(data.dtype, np.number):
            raise InvalidInput(f"{self.kind} payload must be numeric")
        if not np.all(np.isfinite(data)):
            raise InvalidInput(f"{self.kind} payload contains non-finite samples")
        if self.kind == "music":
            if data.ndim != 1:
                raise InvalidInput(f"music payload must be a mono waveform, got shape {data.shape}")
            if self.sample_rate is None or self.sample_rate <= 0:
                raise InvalidInput("music payload needs a positive sample rate")
        elif self.kind == "image":
            if data.ndim != 3 or data.shape[-1] != 3:
                raise InvalidInput(f"image payload must be HxWx3, got shape {data.shape}")
        else:
            if data.ndim != 4 or data.shape[-1] != 3:
                raise InvalidInput(f"video payload must be TxHxWx3, got shape {data.shape}")


@dataclass(frozen=True)
class ModalityEmbedding:
    kind: str
    data: np.ndarray
    scale: str = "toy"

    @property
    def shape(self):
        return self.data.shape


def _default_toy_seq():
    return {"music": 8, "image": 5, "video": 9}


def _default_toy_feat():
    return {"music": 16, "image": 16, "video": 16}


@dataclass(frozen=True)
class EncoderConfig:
    scale: str = "toy"
    toy_seq_len: dict = field(default_factory=_default_toy_seq)
    toy_feat_dim: dict = field(default_factory=_default_toy_feat)
    seed: int = 0

    def __post_init__(self):
        if self.scale not in SCALES:
            raise InvalidInput(f"unknown scale {self.scale!r}")
        for kind in MODALITIES:
            seq = self.toy_seq_len.get(kind, 0)
            feat = self.toy_feat_dim.get(kind, 0)
            if seq < 1 or feat < 1:
                raise InvalidInput(f"toy dims for {kind} must be >= 1, got ({seq}, {feat})")
            if kind != "music" and seq < 2:
                raise InvalidInput(f"{kind} needs seq_len >= 2 (CLS row plus patches)")

    def shape(self, kind: str) -> tuple[int, int]:
        if self.scale == "full":
            return FULL_SHAPES[kind]
        return (self.toy_seq_len[kind], self.toy_feat_dim[kind])

    def key(self):
        return (
            self.scale,
            tuple(sorted(self.toy_seq_len.items())),
            tuple(sorted(self.toy_feat_dim.items())),
            self.seed,
        )


def resample_axis(x: np.ndarray, n: int, axis: int = 0) -> np.ndarray:
    """Linear interpolation of ``x`` to ``n`` points along ``axis``."""
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[axis]
    if length == n:
        return x
    if length == 1:
        return np.repeat(x, n, axis=axis)
    pos = np.linspace(0.0, length - 1, n)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, length - 1)
    frac = pos - lo
    shape = [1] * x.ndim
    shape[axis] = n
    frac = frac.reshape(shape)
    return np.take(x, lo, axis=axis) * (1.0 - frac) + np.take(x, hi, axis=axis) * frac


def _factor(n: int, parts: int) -> list[int]:
    # split n into `parts` integer factors, as balanced as divisibility allows
    out = []
    rest = n
    for k in range(parts, 1, -1):
        target = rest ** (1.0 / k)
        best = 1
        for d in range(1, int(math.floor(target)) + 1):
            if rest % d == 0:
                best = d
        out.append(best)
        rest //= best
    out.append(rest)
    return out


def band_energies(frames: np.ndarray, n_bands: int = N_BANDS) -> np.ndarray:
    """Log band energies of each row of ``frames`` (rows are time windows)."""
    power = np.abs(np.fft.rfft(frames, axis=-1)) ** 2
    bands = np.array_split(np.arange(power.shape[-1]), n_bands)
    energies = np.stack([power[..., b].mean(axis=-1) for b in bands], axis=-1)
    return np.log(energies + 1e-6)


def _standardize(feats: np.ndarray) -> np.ndarray:
    return (feats - feats.mean()) / (feats.std() + 1e-6)


def _music_features(wave: np.ndarray, seq_len: int) -> np.ndarray:
    wave = np.asarray(wave, dtype=np.float64)
    min_len = seq_len * 2 * N_BANDS
    if wave.shape[0] < min_len:
        wave = resample_axis(wave, min_len)
    windows = np.array_split(wave, seq_len)
    width = min(w.shape[0] for w in windows)
    frames = np.stack([w[:width] for w in windows])
    return band_energies(frames)


def _patch_rows(image: np.ndarray, gh: int, gw: int) -> np.ndarray:
    img = resample_axis(resample_axis(image, gh * PATCH, axis=-3), gw * PATCH, axis=-2)
    lead = img.shape[:-3]
    img = img.reshape(*lead, gh, PATCH, gw, PATCH, 3)
    img = np.moveaxis(img, -4, -3)  # (..., gh, gw, PATCH, PATCH, 3)
    return img.reshape(*lead, gh * gw, PATCH * PATCH * 3)


def _image_features(image: np.ndarray, seq_len: int) -> np.ndarray:
    gh, gw = _factor(seq_len - 1, 2)
    patches = _patch_rows(np.asarray(image, dtype=np.float64), gh, gw)
    return np.concatenate([patches.mean(axis=0, keepdims=True), patches])


def _video_features(video: np.ndarray, seq_len: int) -> np.ndarray:
    nt, gh, gw = _factor(seq_len - 1, 3)
    video = resample_axis(np.asarray(video, dtype=np.float64), nt * TUBELET, axis=0)
    patches = _patch_rows(video, gh, gw)  # (nt*TUBELET, gh*gw, P*P*3)
    tubes = patches.reshape(nt, TUBELET, gh * gw, -1).transpose(0, 2, 1, 3)
    tubes = tubes.reshape(nt * gh * gw, -1)
    return np.concatenate([tubes.mean(axis=0, keepdims=True), tubes])


_FEATURES = {
    "music": (_music_features, N_BANDS),
    "image": (_image_features, PATCH * PATCH * 3),
    "video": (_video_features, PATCH * PATCH * 3 * TUBELET),
}


class StandInEncoder:
    """Seeded random projection + tanh over framed/patched input."""

    def __init__(self, kind: str, cfg: EncoderConfig):
        if kind not in MODALITIES:
            raise InvalidInput(f"unknown modality {kind!r}")
        self.kind = kind
        self.cfg = cfg
        self.seq_len, self.feat_dim = cfg.shape(kind)
        self._featurize, in_dim = _FEATURES[kind]
        rng = np.random.default_rng([cfg.seed, MODALITIES.index(kind)])
        self.weight = rng.standard_normal((in_dim, self.feat_dim)) / math.sqrt(in_dim)

    def __call__(self, inp: RawModalityInput) -> ModalityEmbedding:
        if inp.kind != self.kind:
            raise InvalidInput(f"{self.kind} encoder got {inp.kind} input")
        feats = _standardize(self._featurize(inp.data, self.seq_len))
        out = np.tanh(feats @ self.weight).astype(np.float32)
        return ModalityEmbedding(self.kind, out, self.cfg.scale)


@lru_cache(maxsize=16)
def _cached_encoder(kind: str, key) -> StandInEncoder:
    scale, seq, feat, seed = key
    return StandInEncoder(kind, EncoderConfig(scale, dict(seq), dict(feat), seed))


def get_encoder(kind: str, cfg: EncoderConfig) -> Callable[[RawModalityInput], ModalityEmbedding]:
    return _cached_encoder(kind, cfg.key())


def encode(inp: RawModalityInput, cfg: EncoderConfig) -> ModalityEmbedding:
    return get_encoder(inp.kind, cfg)(inp)
