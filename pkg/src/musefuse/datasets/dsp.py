"""WSOLA time stretching and resample-then-stretch pitch shifting."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal.windows import hann

from musefuse.encoders import resample_axis
from musefuse.errors import InvalidInput

DURATION_FACTORS = (0.5, 0.7, 1.3, 1.5)
PITCH_CENTS = (-200, -100, 100, 200)

FRAME = 512
HOP = 256
TOLERANCE = 128


def wsola_stretch(
    wave,
    sample_rate: int,
    duration_factor: float,
    *,
    frame: int = FRAME,
    hop: int = HOP,
    tolerance: int = TOLERANCE,
    dataset_mode: bool = False,
) -> np.ndarray:
    """Change duration by ``duration_factor`` without changing pitch.

    Synthesis frames are laid down every ``hop`` samples; each analysis frame
    is taken near its nominal position ``m * hop / duration_factor``, shifted
    by up to ``tolerance`` samples to best match (by cross-correlation) the
    natural continuation of the previously copied frame.  Output length is
    ``round(len(wave) * duration_factor)``.
    """
    x = np.asarray(wave, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInput("wsola_stretch expects a mono waveform")
    if sample_rate <= 0:
        raise InvalidInput("sample rate must be positive")
    if not duration_factor > 0:
        raise InvalidInput(f"duration factor must be > 0, got {duration_factor}")
    if dataset_mode and duration_factor not in DURATION_FACTORS:
        raise InvalidInput(f"dataset mode allows duration factors {DURATION_FACTORS}")
    if x.shape[0] < 2 * frame:
        raise InvalidInput(f"waveform too short for WSOLA: {x.shape[0]} < {2 * frame} samples")

    n_out = int(round(x.shape[0] * duration_factor))
    half = frame // 2
    n_frames = math.ceil((n_out + half) / hop) + 1
    window = hann(frame, sym=False)

    front = half + tolerance
    last_nominal = int(round((n_frames - 1) * hop / duration_factor)) - half + front
    need = last_nominal + tolerance + frame + hop
    back = max(need - (front + x.shape[0]), 0)
    xp = np.concatenate([np.zeros(front), x, np.zeros(back)])

    y = np.zeros((n_frames - 1) * hop + frame)
    norm = np.zeros_like(y)
    prev = None
    for m in range(n_frames):
        nominal = int(round(m * hop / duration_factor)) - half + front
        if prev is None:
            start = nominal
        else:
            natural = xp[prev + hop: prev + hop + frame]
            region = xp[nominal - tolerance: nominal + tolerance + frame]
            corr = np.correlate(region, natural, mode="valid")
            start = nominal - tolerance + int(np.argmax(corr))
        out = m * hop
        y[out: out + frame] += xp[start: start + frame] * window
        norm[out: out + frame] += window
        prev = start
    y = y / np.maximum(norm, 1e-8)
    return y[half: half + n_out]


def pitch_shift(wave, sample_rate: int, cents: float, *, dataset_mode: bool = False) -> np.ndarray:
    """Shift pitch by ``cents`` keeping the length of ``wave``.

    The waveform is linearly resampled by ``2 ** (-cents / 1200)`` (which
    moves pitch and duration together) and WSOLA then restores the duration.
    """
    x = np.asarray(wave, dtype=np.float64)
    if dataset_mode and cents not in PITCH_CENTS:
        raise InvalidInput(f"dataset mode allows pitch shifts {PITCH_CENTS} cents")
    if x.ndim != 1 or x.shape[0] < 2:
        raise InvalidInput("pitch_shift expects a mono waveform")
    if cents == 0:
        return x.copy()
    n = x.shape[0]
    ratio = 2.0 ** (cents / 1200.0)
    resampled = resample_axis(x, max(int(round(n / ratio)), 2))
    y = wsola_stretch(resampled, sample_rate, n / resampled.shape[0])
    if y.shape[0] < n:
        y = np.pad(y, (0, n - y.shape[0]))
    return y[:n]
