"""Seeded synthetic media: labelled instrument tracks, images and video clips."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from musefuse.errors import InvalidInput

INSTRUMENTS = ("piano", "bass", "flute", "strings", "drums", "organ", "guitar")
MOODS = ("calm", "upbeat", "melancholic", "energetic", "dreamy", "tense")
NOTE_NAMES = ("C", "D", "E", "F", "G", "A", "B")
COLORS = {
    "red": (0.9, 0.15, 0.1), "blue": (0.1, 0.25, 0.9), "green": (0.15, 0.75, 0.2),
    "yellow": (0.95, 0.85, 0.1), "purple": (0.55, 0.2, 0.7), "orange": (0.95, 0.55, 0.1),
}
SCENES = ("sunset over the sea", "city street at night", "forest clearing", "snowy mountain",
          "crowded concert hall", "quiet library")
MOTIONS = ("drifting slowly", "moving quickly", "bouncing", "spinning")

TRACK_AMPLITUDE = 0.22


@dataclass
class TrackSet:
    tracks: dict  # instrument name -> mono waveform
    sample_rate: int

    def __post_init__(self):
        if len(self.tracks) < 2:
            raise InvalidInput("a track set needs at least two tracks")
        lengths = {np.asarray(w).shape[0] for w in self.tracks.values()}
        if len(lengths) != 1:
            raise InvalidInput(f"tracks must share one length, got {sorted(lengths)}")

    @property
    def names(self) -> list:
        return list(self.tracks)

    def mix(self) -> np.ndarray:
        return np.sum([np.asarray(w, dtype=np.float64) for w in self.tracks.values()], axis=0)


def _a(word):
    return "an" if word[0] in "aeiou" else "a"


def _notes(rng, n_notes, root_hz):
    steps = rng.choice([0, 2, 4, 5, 7, 9, 11, 12], size=n_notes)
    return root_hz * 2.0 ** (steps / 12.0)


def synth_track(instrument: str, sample_rate: int, seconds: float, tempo: float, root_hz: float, rng):
    """One instrument line: a note every beat, shaped per instrument."""
    n = int(round(seconds * sample_rate))
    beat = int(round(60.0 / tempo * sample_rate))
    n_notes = max(1, -(-n // beat))
    out = np.zeros(n_notes * beat)
    t = np.arange(beat) / sample_rate
    if instrument == "bass":
        freqs = _notes(rng, n_notes, root_hz / 2)
    elif instrument == "flute":
        freqs = _notes(rng, n_notes, root_hz * 2)
    else:
        freqs = _notes(rng, n_notes, root_hz)
    for i, f in enumerate(freqs):
        if instrument == "drums":
            env = np.exp(-t * 30.0)
            note = rng.standard_normal(beat) * env * 0.6 + np.sin(2 * np.pi * 60 * t) * env
        elif instrument == "piano":
            env = np.exp(-t * 4.0)
            note = env * sum(np.sin(2 * np.pi * f * h * t) / h for h in (1, 2, 3))
        elif instrument == "organ":
            note = sum(np.sin(2 * np.pi * f * h * t) / h for h in (1, 3, 5)) * 0.8
        elif instrument == "strings":
            env = np.minimum(t * 8.0, 1.0)
            note = env * sum(np.sin(2 * np.pi * f * h * t) / h for h in range(1, 6)) * 0.6
        elif instrument == "guitar":
            env = np.exp(-t * 6.0)
            note = env * sum(np.sin(2 * np.pi * f * h * t) * 0.7 ** h for h in range(1, 5))
        elif instrument == "flute":
            note = np.sin(2 * np.pi * f * t + 0.02 * np.sin(2 * np.pi * 5 * t))
        else:  # bass
            note = np.sin(2 * np.pi * f * t) + 0.3 * np.sin(4 * np.pi * f * t)
        out[i * beat: (i + 1) * beat] = note
    out = out[:n]
    peak = np.max(np.abs(out))
    return out * (TRACK_AMPLITUDE / peak) if peak > 0 else out


def synthetic_trackset(rng, sample_rate: int = 16000, seconds: float = 10.0, n_tracks: int = 3):
    """Return ``(TrackSet, info)`` where ``info`` carries tempo, key, mood and instruments."""
    names = [str(x) for x in rng.choice(INSTRUMENTS, size=n_tracks, replace=False)]
    tempo = float(rng.choice([70, 90, 100, 110, 120, 128, 140]))
    key_idx = int(rng.integers(len(NOTE_NAMES)))
    root = 220.0 * 2.0 ** ([0, 2, 4, 5, 7, 9, 11][key_idx] / 12.0)
    mood = str(rng.choice(MOODS))
    tracks = {name: synth_track(name, sample_rate, seconds, tempo, root, rng) for name in names}
    info = {"instruments": names, "tempo": int(tempo), "key": NOTE_NAMES[key_idx], "mood": mood}
    return TrackSet(tracks, sample_rate), info


def synthetic_image(rng, size: int = 32):
    color = str(rng.choice(list(COLORS)))
    scene = str(rng.choice(SCENES))
    base = np.array(COLORS[color])
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    shade = 0.6 + 0.4 * np.sin(np.pi * (xx * rng.uniform(0.5, 2) + yy * rng.uniform(0.5, 2)))
    img = np.clip(base[None, None, :] * shade[..., None] + rng.normal(0, 0.03, (size, size, 3)), 0, 1)
    caption = f"{_a(color)} {color}-toned picture of a {scene}"
    return img, {"color": color, "scene": scene, "caption": caption}


def synthetic_video(rng, frames: int = 8, size: int = 16):
    color = str(rng.choice(list(COLORS)))
    motion = str(rng.choice(MOTIONS))
    base = np.array(COLORS[color])
    speed = 0.5 if "slowly" in motion else 2.0
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    video = np.zeros((frames, size, size, 3))
    for f in range(frames):
        cx = 0.5 + 0.35 * np.cos(speed * f / frames * 2 * np.pi)
        cy = 0.5 + 0.35 * np.sin(speed * f / frames * 2 * np.pi)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / 0.02)
        video[f] = np.clip(0.1 + blob[..., None] * base[None, None, :], 0, 1)
    caption = f"{_a(color)} {color} shape {motion} across a dark background"
    return video, {"color": color, "motion": motion, "caption": caption}


def describe_audio(wave, sample_rate: int) -> dict:
    """Crude stand-in captioner for user-supplied audio."""
    wave = np.asarray(wave, dtype=np.float64)
    power = np.abs(np.fft.rfft(wave)) ** 2
    freqs = np.fft.rfftfreq(wave.shape[0], 1.0 / sample_rate)
    centroid = float((power * freqs).sum() / (power.sum() + 1e-12))
    rms = float(np.sqrt(np.mean(wave ** 2)))
    mood = "energetic" if rms > 0.2 else "calm"
    timbre = "bright" if centroid > 1500 else "warm"
    return {"instruments": [f"{timbre} tones"], "tempo": 0, "key": "unknown", "mood": mood}
