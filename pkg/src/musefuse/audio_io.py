"""WAV (PCM 16-bit mono) and raw tensor file helpers."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from musefuse.encoders import RawModalityInput
from musefuse.errors import InvalidInput


def to_pcm16(wave: np.ndarray) -> np.ndarray:
    wave = np.clip(np.asarray(wave, dtype=np.float64), -1.0, 1.0)
    return np.round(wave * 32767.0).astype(np.int16)


def write_wav(path, wave: np.ndarray, sample_rate: int = 16000) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, sample_rate, to_pcm16(wave))
    return path


def read_wav(path) -> tuple[np.ndarray, int]:
    try:
        sr, data = wavfile.read(Path(path))
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot read WAV {path}: {exc}") from exc
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32767.0
    return np.asarray(data, dtype=np.float64), int(sr)


def content_name(data: np.ndarray, suffix: str) -> str:
    return hashlib.sha256(np.ascontiguousarray(data).tobytes()).hexdigest()[:16] + suffix


def write_wav_addressed(media_dir, wave: np.ndarray, sample_rate: int = 16000) -> Path:
    """Write ``wave`` under a name derived from its PCM bytes."""
    pcm = to_pcm16(wave)
    path = Path(media_dir) / content_name(pcm, ".wav")
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        wavfile.write(path, sample_rate, pcm)
    return path


def write_npy_addressed(media_dir, array: np.ndarray) -> Path:
    array = np.ascontiguousarray(array, dtype=np.float32)
    path = Path(media_dir) / content_name(array, ".npy")
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, array)
    return path


def load_media(path) -> RawModalityInput:
    """Load a WAV, NPY (HxWx3 image or TxHxWx3 video) or PNG into a raw input."""
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"media file {path} not found")
    suffix = path.suffix.lower()
    if suffix == ".wav":
        wave, sr = read_wav(path)
        return RawModalityInput("music", wave, sr)
    if suffix == ".npy":
        try:
            arr = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise InvalidInput(f"cannot read {path}: {exc}") from exc
        kind = {3: "image", 4: "video"}.get(arr.ndim)
        if kind is None:
            raise InvalidInput(f"{path}: expected 3-D image or 4-D video array, got {arr.shape}")
        return RawModalityInput(kind, arr.astype(np.float64))
    if suffix == ".png":
        from PIL import Image

        try:
            img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        except OSError as exc:
            raise InvalidInput(f"cannot read {path}: {exc}") from exc
        return RawModalityInput("image", img)
    raise InvalidInput(f"unsupported media type {suffix!r}")
