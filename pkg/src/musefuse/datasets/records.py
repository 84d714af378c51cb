"""Instruction/response record construction for the four music datasets.

Every item is seeded from ``(global_seed, subtype, index)`` alone, so items can
be built in any order (or in parallel) and any MUEdit pair can be regenerated
from its metadata line.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from musefuse.audio_io import read_wav, to_pcm16, write_npy_addressed, write_wav_addressed
from musefuse.datasets.dsp import DURATION_FACTORS, PITCH_CENTS, pitch_shift, wsola_stretch
from musefuse.datasets.synth import (
    TrackSet,
    describe_audio,
    synthetic_image,
    synthetic_trackset,
    synthetic_video,
)
from musefuse.datasets.templates import SUBTYPES, TemplatePool, fill_template, load_pool
from musefuse.errors import InvalidInput

log = logging.getLogger(__name__)

DATASETS = ("mucaps", "muimage", "muvideo", "muedit")
EDIT_SUBTYPES = ("speed", "pitch", "add", "delete", "replace")
ADR_MODES = ("add", "delete", "replace")
RECORD_FIELDS = ("dataset", "instruction", "response", "input_media", "target_audio", "emits_music")

# duration factor -> how the result sounds
DEGREE_WORDS = {0.5: "much faster", 0.7: "faster", 1.3: "slower", 1.5: "much slower"}

_SUBTYPE_DATASET = {
    **{s: "muedit" for s in EDIT_SUBTYPES},
    "image_gen": "muimage",
    "video_gen": "muvideo",
    "caption": "mucaps",
}


def audio_suffix(k: int = 8) -> str:
    return "".join(f"[AUD_{i}]" for i in range(k))


@dataclass
class DatasetRecord:
    dataset: str
    instruction: str
    response: str
    input_media: str | None = None
    target_audio: str | None = None
    emits_music: bool = False

    def validate(self, n_audio_tokens: int = 8):
        if self.dataset not in DATASETS:
            raise InvalidInput(f"unknown dataset {self.dataset!r}")
        if self.emits_music and not self.response.endswith(audio_suffix(n_audio_tokens)):
            raise InvalidInput("music-emitting record must end with the audio-token suffix")
        if self.dataset == "muedit" and not (self.input_media and self.target_audio):
            raise InvalidInput("MUEdit records need both input and target audio")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "DatasetRecord":
        data = json.loads(line)
        if set(data) != set(RECORD_FIELDS):
            raise InvalidInput(f"record fields must be exactly {RECORD_FIELDS}")
        return cls(**data)


def write_jsonl(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write((row.to_json() if isinstance(row, DatasetRecord) else json.dumps(row, sort_keys=True)) + "\n")
    return path


def read_records(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [DatasetRecord.from_json(line) for line in fh if line.strip()]


# --- add / delete / replace ----------------------------------------------


def build_adr_pairs(ts: TrackSet, mode: str, rng, indices=None):
    """Return ``(input_wave, target_wave, metadata)`` for one ADR edit.

    add:     input = track a, target = a + b
    delete:  input = full mix, target = track a
    replace: input = track a, target = track b
    ``indices`` fixes ``(a, b)`` (``b`` unused for delete) instead of drawing them.
    """
    if mode not in ADR_MODES:
        raise InvalidInput(f"unknown ADR mode {mode!r}")
    names = ts.names
    if len(names) < 2:
        raise InvalidInput(f"{mode} needs at least two tracks")
    if indices is None:
        a, b = (int(i) for i in rng.choice(len(names), size=2, replace=False))
    else:
        a, b = indices
    if mode != "delete" and a == b:
        raise InvalidInput("add/replace need two distinct tracks")
    wa = np.asarray(ts.tracks[names[a]], dtype=np.float64)
    wb = np.asarray(ts.tracks[names[b]], dtype=np.float64)
    if mode == "add":
        inp, tgt = wa, wa + wb
        meta = {"instrument": names[a], "added": names[b]}
    elif mode == "delete":
        inp, tgt = ts.mix(), wa
        meta = {"kept": names[a], "removed": [n for n in names if n != names[a]]}
    else:
        inp, tgt = wa, wb
        meta = {"source": names[a], "target": names[b]}
    meta.update({"mode": mode, "indices": [a, b], "instruments": names})
    return inp, tgt, meta


# --- template filling -----------------------------------------------------


def build_records(items, subtype: str, pool: TemplatePool, rng, n_audio_tokens: int = 8) -> list:
    """Pick one instruction and one response template per item and fill them.

    ``items`` are dicts with ``values`` (placeholder values) and optional
    ``input_media`` / ``target_audio`` paths.
    """
    if pool.subtype != subtype:
        raise InvalidInput(f"pool {pool.subtype!r} does not match subtype {subtype!r}")
    dataset = _SUBTYPE_DATASET[subtype]
    emits = dataset != "mucaps"
    out = []
    for item in items:
        values = item["values"]
        instruction = fill_template(pool.instructions[rng.integers(len(pool.instructions))], values)
        response = fill_template(pool.responses[rng.integers(len(pool.responses))], values)
        if emits:
            response = f"{response} {audio_suffix(n_audio_tokens)}"
        rec = DatasetRecord(
            dataset, instruction, response, item.get("input_media"), item.get("target_audio"), emits
        )
        out.append(rec.validate(n_audio_tokens))
    return out


def speed_values(factor: float) -> dict:
    return {"factor": f"{factor:g}", "degree": DEGREE_WORDS[factor]}


def pitch_values(cents: int) -> dict:
    interval = "semitone" if abs(cents) == 100 else "whole tone"
    higher = "higher" if cents > 0 else "lower"
    return {
        "cents_abs": str(abs(cents)),
        "cents_signed": f"{cents:+d}",
        "interval": interval,
        "direction": "up" if cents > 0 else "down",
        "higher_lower": higher,
        "verbal": f"a {interval} {higher}",
    }


def article(word: str) -> str:
    return "an" if word[:1].lower() in "aeiou" else "a"


def _join(names) -> str:
    names = list(names)
    return names[0] if len(names) == 1 else ", ".join(names[:-1]) + " and " + names[-1]


def caption_values(info: dict) -> dict:
    return {
        "instruments": _join(info["instruments"]),
        "tempo": str(info["tempo"]),
        "key": info["key"],
        "mood": info["mood"],
    }


def music_phrase(info: dict) -> str:
    tempo = f" at {info['tempo']} BPM" if info.get("tempo") else ""
    return f"{article(info['mood'])} {info['mood']} {_join(info['instruments'])} piece{tempo}"


# --- sources ---------------------------------------------------------------


@dataclass(frozen=True)
class BuildConfig:
    sample_rate: int = 16000
    seconds: float = 10.0
    n_audio_tokens: int = 8
    image_size: int = 32
    video_frames: int = 8
    video_size: int = 16


class SyntheticSource:
    name = "synthetic"

    def __init__(self, cfg: BuildConfig):
        self.cfg = cfg

    def trackset(self, index, rng):
        return synthetic_trackset(rng, self.cfg.sample_rate, self.cfg.seconds, n_tracks=3)

    def music(self, index, rng):
        ts, info = synthetic_trackset(rng, self.cfg.sample_rate, self.cfg.seconds, n_tracks=2)
        return ts.mix(), info

    def image(self, index, rng):
        return synthetic_image(rng, self.cfg.image_size)

    def video(self, index, rng):
        return synthetic_video(rng, self.cfg.video_frames, self.cfg.video_size)


class DirectorySource:
    """User media: ``*.wav`` clips, ``*.npy``/``*.png`` images, 4-D ``*.npy`` videos,
    and subdirectories holding >= 2 equal-length WAV stems as track sets."""

    name = "directory"

    def __init__(self, root, cfg: BuildConfig):
        from musefuse.audio_io import load_media

        self.root = Path(root)
        if not self.root.is_dir():
            raise InvalidInput(f"source directory {root} does not exist")
        self.cfg = cfg
        self._load = load_media
        self.audio = sorted(self.root.glob("*.wav"))
        self.images, self.videos = [], []
        for p in sorted(self.root.glob("*.npy")) + sorted(self.root.glob("*.png")):
            (self.videos if p.suffix == ".npy" and np.load(p, mmap_mode="r").ndim == 4 else self.images).append(p)
        self.tracksets = [d for d in sorted(self.root.iterdir()) if d.is_dir() and len(list(d.glob("*.wav"))) >= 2]

    def _pick(self, items, index, what):
        if not items:
            raise InvalidInput(f"source directory has no {what}")
        return items[index % len(items)]

    def music(self, index, rng):
        wave, sr = read_wav(self._pick(self.audio, index, "WAV clips"))
        return wave, describe_audio(wave, sr)

    def trackset(self, index, rng):
        d = self._pick(self.tracksets, index, "track-set subdirectories")
        tracks = {p.stem: read_wav(p)[0] for p in sorted(d.glob("*.wav"))}
        n = min(w.shape[0] for w in tracks.values())
        tracks = {k: w[:n] for k, w in tracks.items()}
        info = describe_audio(sum(tracks.values()), self.cfg.sample_rate)
        info["instruments"] = list(tracks)
        return TrackSet(tracks, self.cfg.sample_rate), info

    def image(self, index, rng):
        p = self._pick(self.images, index, "images")
        return self._load(p).data, {"caption": f"the scene in {p.stem}"}

    def video(self, index, rng):
        p = self._pick(self.videos, index, "videos")
        return self._load(p).data, {"caption": f"the footage in {p.stem}"}


# --- item builders ---------------------------------------------------------


def item_seed(seed: int, subtype: str, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), SUBTYPES.index(subtype), int(index)])


def edit_pair(source, subtype: str, index: int, seed: int):
    """Deterministically derive one MUEdit pair: ``(input, target, params, values, info)``."""
    media_ss, _ = item_seed(seed, subtype, index).spawn(2)
    rng = np.random.default_rng(media_ss)
    sr = source.cfg.sample_rate
    if subtype == "speed":
        wave, info = source.music(index, rng)
        factor = float(rng.choice(DURATION_FACTORS))
        target = wsola_stretch(wave, sr, factor, dataset_mode=True)
        return wave, target, {"factor": factor}, speed_values(factor), info
    if subtype == "pitch":
        wave, info = source.music(index, rng)
        cents = int(rng.choice(PITCH_CENTS))
        target = pitch_shift(wave, sr, cents, dataset_mode=True)
        return wave, target, {"cents": cents}, pitch_values(cents), info
    if subtype in ADR_MODES:
        ts, info = source.trackset(index, rng)
        inp, target, meta = build_adr_pairs(ts, subtype, rng)
        values = {k: (_join(v) if isinstance(v, list) else v) for k, v in meta.items()
                  if k not in ("mode", "indices", "instruments")}
        a, b = meta["indices"]
        kept = {"add": [a, b], "delete": [a], "replace": [b]}[subtype]
        target_info = dict(info, instruments=[ts.names[i] for i in kept])
        return inp, target, {"mode": subtype, "indices": meta["indices"]}, values, target_info
    raise InvalidInput(f"{subtype!r} is not a MUEdit subtype")


def _text_rng(seed, subtype, index):
    return np.random.default_rng(item_seed(seed, subtype, index).spawn(2)[1])


def _rel(path: Path, root: Path) -> str:
    return path.relative_to(root).as_posix()


def _build_edit_item(source, subtype, index, seed, out_dir, pool):
    inp, target, params, values, info = edit_pair(source, subtype, index, seed)
    media = out_dir / "media"
    sr = source.cfg.sample_rate
    item = {
        "values": values,
        "input_media": _rel(write_wav_addressed(media, inp, sr), out_dir),
        "target_audio": _rel(write_wav_addressed(media, target, sr), out_dir),
    }
    rec = build_records([item], subtype, pool, _text_rng(seed, subtype, index), source.cfg.n_audio_tokens)[0]
    meta = {"subtype": subtype, "index": index, "seed": seed, "source": source.name,
            "target_caption": music_phrase(info), **params}
    return rec, meta


def _build_caption_item(source, index, seed, out_dir, pool):
    rng = np.random.default_rng(item_seed(seed, "caption", index).spawn(2)[0])
    wave, info = source.music(index, rng)
    item = {
        "values": caption_values(info),
        "input_media": _rel(write_wav_addressed(out_dir / "media", wave, source.cfg.sample_rate), out_dir),
    }
    rec = build_records([item], "caption", pool, _text_rng(seed, "caption", index), source.cfg.n_audio_tokens)[0]
    return rec, {"subtype": "caption", "index": index, "seed": seed, "source": source.name, **info}


def _build_visual_item(source, subtype, index, seed, out_dir, pool):
    rng = np.random.default_rng(item_seed(seed, subtype, index).spawn(2)[0])
    if subtype == "image_gen":
        visual, vinfo = source.image(index, rng)
        key = "image_caption"
    else:
        visual, vinfo = source.video(index, rng)
        key = "video_caption"
    wave, info = source.music(index, rng)
    phrase = music_phrase(info)
    item = {
        "values": {"caption": phrase, key: vinfo["caption"]},
        "input_media": _rel(write_npy_addressed(out_dir / "media", visual), out_dir),
        "target_audio": _rel(write_wav_addressed(out_dir / "media", wave, source.cfg.sample_rate), out_dir),
    }
    rec = build_records([item], subtype, pool, _text_rng(seed, subtype, index), source.cfg.n_audio_tokens)[0]
    meta = {"subtype": subtype, "index": index, "seed": seed, "source": source.name,
            "media_caption": vinfo["caption"], "target_caption": phrase}
    return rec, meta


def build_dataset(kind: str, out_dir, count: int, seed: int, source=None, cfg: BuildConfig | None = None,
                  template_dir=None) -> dict:
    """Build ``count`` records of ``kind``; writes ``<kind>.jsonl``, ``<kind>.meta.jsonl`` and media.

    Returns per-subtype record counts.
    """
    if kind not in DATASETS:
        raise InvalidInput(f"unknown dataset kind {kind!r}")
    if count < 1:
        raise InvalidInput("count must be >= 1")
    cfg = cfg or BuildConfig()
    source = source or SyntheticSource(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pools = {}

    def pool(subtype):
        if subtype not in pools:
            pools[subtype] = load_pool(subtype, template_dir)
        return pools[subtype]

    records, metas = [], []
    counts: dict = {}
    for i in range(count):
        if kind == "muedit":
            subtype = EDIT_SUBTYPES[i % len(EDIT_SUBTYPES)]
            rec, meta = _build_edit_item(source, subtype, i, seed, out_dir, pool(subtype))
        elif kind == "mucaps":
            subtype = "caption"
            rec, meta = _build_caption_item(source, i, seed, out_dir, pool(subtype))
        else:
            subtype = "image_gen" if kind == "muimage" else "video_gen"
            rec, meta = _build_visual_item(source, subtype, i, seed, out_dir, pool(subtype))
        records.append(rec)
        metas.append(meta)
        counts[subtype] = counts.get(subtype, 0) + 1
    write_jsonl(out_dir / f"{kind}.jsonl", records)
    write_jsonl(out_dir / f"{kind}.meta.jsonl", metas)
    log.info("built %d %s records: %s", count, kind, counts)
    return counts


def regenerate_pair(meta: dict, source) -> tuple:
    """Rebuild the PCM16 ``(input, target)`` of a MUEdit item from its metadata line."""
    inp, target, params, _, _ = edit_pair(source, meta["subtype"], meta["index"], meta["seed"])
    for key, value in params.items():
        if meta.get(key) != value:
            raise InvalidInput(f"metadata {key}={meta.get(key)!r} disagrees with regenerated {value!r}")
    return to_pcm16(inp), to_pcm16(target)
