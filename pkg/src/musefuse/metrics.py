"""Evaluation metrics for understanding, generation and editing tasks.

The math is exact; the embedding/classifier backbones (VGGish, CLAP,
ImageBind in published evaluations) are pluggable, with seeded random
band-energy projections as the default stand-ins.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.signal.windows import hann

from musefuse.encoders import band_energies
from musefuse.errors import InvalidInput

log = logging.getLogger(__name__)

LSD_N_FFT = 1024
LSD_HOP = 256
LOG_FLOOR = 1e-10
PROB_FLOOR = 1e-10
BLEU_EPS = 1e-9


@dataclass
class EmbeddingSet:
    matrix: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        if not np.all(np.isfinite(self.matrix)):
            raise InvalidInput("embedding set contains non-finite values")


@dataclass
class MetricReport:
    task: str
    metrics: dict
    count: int
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.count <= 0:
            raise InvalidInput("metric report needs at least one sample")
        for name, value in self.metrics.items():
            if not math.isfinite(value):
                raise InvalidInput(f"metric {name} is not finite")

    def to_json(self) -> str:
        return json.dumps(
            {"task": self.task, "metrics": self.metrics, "count": self.count, "notes": self.notes},
            indent=2, sort_keys=True,
        )


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInput(f"embedding dims differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InvalidInput("cosine similarity of a zero-norm vector")
    return float(a @ b / (na * nb))


def clap_score(e_music, e_text) -> float:
    """``max(100 * cos(E_M, E_T), 0)``."""
    return max(100.0 * _cosine(e_music, e_text), 0.0)


def log_power_frames(wave, n_fft: int = LSD_N_FFT, hop: int = LSD_HOP) -> np.ndarray:
    x = np.asarray(wave, dtype=np.float64)
    if x.shape[0] < n_fft:
        x = np.pad(x, (0, n_fft - x.shape[0]))
    n_frames = 1 + (x.shape[0] - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    power = np.abs(np.fft.rfft(x[idx] * hann(n_fft, sym=False), axis=-1)) ** 2
    return np.log10(np.maximum(power, LOG_FLOOR))


def lsd(wave_a, wave_b, sample_rate: int = 16000, n_fft: int = LSD_N_FFT, hop: int = LSD_HOP) -> float:
    """Mean over STFT frames of the RMS gap between log10 power spectra.

    Unequal lengths are truncated to the shorter signal (with a warning).
    """
    a = np.asarray(wave_a, dtype=np.float64).ravel()
    b = np.asarray(wave_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidInput("LSD of an empty waveform")
    if a.shape != b.shape:
        log.warning("lsd: truncating %d/%d samples to %d", a.size, b.size, min(a.size, b.size))
        n = min(a.size, b.size)
        a, b = a[:n], b[:n]
    diff = log_power_frames(a, n_fft, hop) - log_power_frames(b, n_fft, hop)
    return float(np.mean(np.sqrt(np.mean(diff ** 2, axis=-1))))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _as_matrix(x) -> np.ndarray:
    return x.matrix if isinstance(x, EmbeddingSet) else EmbeddingSet(x).matrix


def fad(ref, gen) -> float:
    """Frechet distance between Gaussian fits of two embedding sets.

    ``||mu_r - mu_g||^2 + tr(S_r + S_g - 2 (S_r S_g)^(1/2))``, where the trace
    of the product root is taken as ``tr((S_r^(1/2) S_g S_r^(1/2))^(1/2))``,
    computed by eigendecomposition with negative eigenvalues clipped to 0.
    """
    r, g = _as_matrix(ref), _as_matrix(gen)
    if r.shape[1] != g.shape[1]:
        raise InvalidInput(f"embedding dims differ: {r.shape[1]} vs {g.shape[1]}")
    if r.shape[0] < 2 or g.shape[0] < 2:
        raise InvalidInput("FAD needs at least two embeddings per set")
    mu_r, mu_g = r.mean(axis=0), g.mean(axis=0)
    cov_r = np.atleast_2d(np.cov(r, rowvar=False))
    cov_g = np.atleast_2d(np.cov(g, rowvar=False))
    root_r = _psd_sqrt(cov_r)
    inner = root_r @ cov_g @ root_r
    eig = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2), 0.0, None)
    value = float(np.sum((mu_r - mu_g) ** 2) + np.trace(cov_r) + np.trace(cov_g) - 2 * np.sum(np.sqrt(eig)))
    return max(value, 0.0)


def kl_divergence(p, q, floor: float = PROB_FLOOR) -> float:
    """``sum p ln(p / q)`` after flooring both distributions at ``floor``."""
    p = np.maximum(np.asarray(p, dtype=np.float64), floor)
    q = np.maximum(np.asarray(q, dtype=np.float64), floor)
    if p.shape != q.shape:
        raise InvalidInput("KL needs distributions of equal length")
    return float(np.sum(p * np.log(p / q)))


def kl_metric(ref_waves, gen_waves, classifier) -> float:
    """Mean ``KL(p_ref || p_gen)`` over paired waveforms, ``classifier(wave) -> probs``."""
    ref_waves, gen_waves = list(ref_waves), list(gen_waves)
    if len(ref_waves) != len(gen_waves) or not ref_waves:
        raise InvalidInput("KL metric needs two non-empty lists of equal length")
    return float(np.mean([kl_divergence(classifier(r), classifier(g)) for r, g in zip(ref_waves, gen_waves)]))


def ib_rank(table) -> np.ndarray:
    """Per-model score ``mean((N - rank) / (N - 1))`` from a samples x models rank table."""
    table = np.atleast_2d(np.asarray(table))
    n_models = table.shape[1]
    if n_models < 2:
        raise InvalidInput("ranking needs at least two models")
    expected = np.arange(1, n_models + 1)
    for row in table:
        if not np.array_equal(np.sort(row), expected):
            raise InvalidInput(f"rank row {row.tolist()} is not a permutation of 1..{n_models}")
    return ((n_models - table) / (n_models - 1)).mean(axis=0)


def rank_by_cosine(query, candidates) -> np.ndarray:
    """Rank candidates (1 = most similar to ``query``); ties broken by order."""
    sims = np.array([_cosine(query, c) for c in candidates])
    order = np.argsort(-sims, kind="stable")
    ranks = np.empty(len(sims), dtype=int)
    ranks[order] = np.arange(1, len(sims) + 1)
    return ranks


# --- text ------------------------------------------------------------------

_WORD = re.compile(r"[\w']+")


def tokenize(text: str) -> list:
    return _WORD.findall(text.lower())


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(candidates, references, max_n: int = 4, eps: float = BLEU_EPS) -> float:
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c, r = tokenize(cand), tokenize(ref)
        c_len += len(c)
        r_len += len(r)
        for n in range(1, max_n + 1):
            cn, rn = _ngrams(c, n), _ngrams(r, n)
            matches[n - 1] += sum(min(cnt, rn[g]) for g, cnt in cn.items())
            totals[n - 1] += max(len(c) - n + 1, 0)
    if c_len == 0:
        return 0.0
    log_p = sum(math.log((m + eps) / (t + eps)) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


def _lcs(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F1 (beta = 1), i.e. ``2 * LCS / (len(c) + len(r))``."""
    c, r = tokenize(candidate), tokenize(reference)
    if not c or not r:
        return 0.0
    return 2.0 * _lcs(c, r) / (len(c) + len(r))


def text_metrics(candidates, references, plugins: dict | None = None) -> dict:
    """Corpus BLEU and mean sentence ROUGE-L; ``plugins`` adds e.g. METEOR or BERTScore."""
    candidates, references = list(candidates), list(references)
    if not candidates or len(candidates) != len(references):
        raise InvalidInput("text metrics need non-empty paired lists")
    out = {
        "bleu": corpus_bleu(candidates, references),
        "rouge_l": float(np.mean([rouge_l(c, r) for c, r in zip(candidates, references)])),
    }
    for name, fn in (plugins or {}).items():
        out[name] = float(fn(candidates, references))
    return out


# --- stand-in backbones ---------------------------------------------------


def clip_band_features(wave, n_fft: int = 1024, hop: int = 512, n_bands: int = 32) -> np.ndarray:
    x = np.asarray(wave, dtype=np.float64).ravel()
    if x.shape[0] < n_fft:
        x = np.pad(x, (0, n_fft - x.shape[0]))
    n_frames = 1 + (x.shape[0] - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return band_energies(x[idx] * hann(n_fft, sym=False), n_bands).mean(axis=0)


class BandEmbedder:
    """Seeded random projection of mean log band energies."""

    def __init__(self, dim: int = 16, n_bands: int = 32, seed: int = 0):
        rng = np.random.default_rng([seed, 4242])
        self.weight = rng.standard_normal((n_bands, dim)) / math.sqrt(n_bands)
        self.n_bands = n_bands

    def __call__(self, wave) -> np.ndarray:
        return clip_band_features(wave, n_bands=self.n_bands) @ self.weight

    def embed_set(self, waves, source: str = "") -> EmbeddingSet:
        return EmbeddingSet(np.stack([self(w) for w in waves]), source)


class BandClassifier:
    """Softmax over a seeded random projection of band energies."""

    def __init__(self, n_classes: int = 10, n_bands: int = 32, seed: int = 0):
        rng = np.random.default_rng([seed, 5151])
        self.weight = rng.standard_normal((n_bands, n_classes)) / math.sqrt(n_bands)
        self.n_bands = n_bands

    def __call__(self, wave) -> np.ndarray:
        z = clip_band_features(wave, n_bands=self.n_bands) @ self.weight
        z = np.exp(z - z.max())
        return z / z.sum()


class JointEmbedder:
    """Shared-space stand-in for text/audio/visual embedders (CLAP, ImageBind roles)."""

    def __init__(self, dim: int = 16, seed: int = 0):
        rng = np.random.default_rng([seed, 6262])
        self.audio = BandEmbedder(dim, seed=seed)
        self.text_weight = rng.standard_normal((256, dim)) / 16.0
        self.visual_weight = rng.standard_normal((3, dim))

    def embed_audio(self, wave) -> np.ndarray:
        return self.audio(wave)

    def embed_text(self, text: str) -> np.ndarray:
        counts = np.bincount(np.frombuffer(text.encode("utf-8"), dtype=np.uint8), minlength=256)
        return counts @ self.text_weight + 1e-9

    def embed_visual(self, array) -> np.ndarray:
        arr = np.asarray(array, dtype=np.float64)
        mean_rgb = arr.reshape(-1, 3).mean(axis=0)
        return mean_rgb @ self.visual_weight + 1e-9
