import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from musefuse.audio_io import read_wav, write_wav
from musefuse.datasets import (
    DURATION_FACTORS, BuildConfig, DatasetRecord, DirectorySource, SyntheticSource, TrackSet,
    build_adr_pairs, build_dataset, build_records, fill_template, load_pool, pitch_shift,
    read_records, regenerate_pair, wsola_stretch,
)
from musefuse.datasets.records import DEGREE_WORDS, pitch_values, speed_values
from musefuse.datasets.templates import SUBTYPES, placeholders
from musefuse.errors import InvalidInput, TemplateError
from oracles import peak_hz

SR = 16000


def tone(freq, seconds=1.0, sr=SR):
    return np.sin(2 * np.pi * freq * np.arange(int(seconds * sr)) / sr)


# --- DSP --------------------------------------------------------------------

@pytest.mark.parametrize("factor", DURATION_FACTORS)
def test_wsola_length_and_pitch(factor):
    x = tone(440.0, 2.0)
    y = wsola_stretch(x, SR, factor)
    assert abs(len(y) - round(len(x) * factor)) <= 512
    assert peak_hz(y) == pytest.approx(440.0, rel=0.02)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.4, 2.0), st.integers(1100, 6000), st.integers(0, 2**31))
def test_wsola_length_property(factor, n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    y = wsola_stretch(x, SR, factor)
    assert len(y) == round(n * factor)
    assert np.all(np.isfinite(y))


def test_wsola_identity_factor_reconstructs():
    x = np.random.default_rng(0).standard_normal(8000)
    y = wsola_stretch(x, SR, 1.0)
    assert np.corrcoef(x, y)[0, 1] > 0.999


def test_wsola_errors():
    with pytest.raises(InvalidInput):
        wsola_stretch(np.zeros(100), SR, 1.3)
    with pytest.raises(InvalidInput):
        wsola_stretch(np.zeros(4000), SR, 0.0)
    with pytest.raises(InvalidInput):
        wsola_stretch(np.zeros(4000), SR, 1.1, dataset_mode=True)
    with pytest.raises(InvalidInput):
        wsola_stretch(np.zeros((2, 4000)), SR, 1.3)


@pytest.mark.parametrize("cents,expected", [(100, 466.16), (-100, 415.30), (200, 493.88), (-200, 392.00),
                                            (1200, 880.0)])
def test_pitch_shift_moves_tone(cents, expected):
    x = tone(440.0, 1.0)
    y = pitch_shift(x, SR, cents)
    assert abs(len(y) - len(x)) <= 512
    assert peak_hz(y) == pytest.approx(expected, rel=0.02)


def test_pitch_shift_zero_and_dataset_mode():
    x = tone(440.0, 0.5)
    assert np.array_equal(pitch_shift(x, SR, 0), x)
    with pytest.raises(InvalidInput):
        pitch_shift(x, SR, 50, dataset_mode=True)


# --- templates and records ------------------------------------------------------

@pytest.mark.parametrize("subtype", SUBTYPES)
def test_template_pools_load_and_fill(subtype):
    pool = load_pool(subtype)
    assert len(pool.instructions) >= 3 and len(pool.responses) >= 3
    for template in pool.instructions + pool.responses:
        values = {name: "x" for name in placeholders(template)}
        assert "{" not in fill_template(template, values)


def test_fill_template_missing_key():
    with pytest.raises(TemplateError):
        fill_template("make it {degree}", {})


def test_speed_and_pitch_values():
    assert speed_values(0.5) == {"factor": "0.5", "degree": "much faster"}
    assert set(DEGREE_WORDS) == set(DURATION_FACTORS)
    v = pitch_values(-200)
    assert v["cents_signed"] == "-200" and v["verbal"] == "a whole tone lower"


def test_build_records_adds_suffix():
    pool = load_pool("speed")
    recs = build_records([{"values": speed_values(1.3), "input_media": "a.wav", "target_audio": "b.wav"}],
                         "speed", pool, np.random.default_rng(0), 8)
    assert recs[0].response.endswith("".join(f"[AUD_{i}]" for i in range(8)))
    assert recs[0].emits_music and recs[0].dataset == "muedit"
    with pytest.raises(InvalidInput):
        build_records([], "pitch", pool, np.random.default_rng(0))


def test_record_validation_and_fields():
    with pytest.raises(InvalidInput):
        DatasetRecord("muedit", "i", "r [AUD_0]", "a.wav", "b.wav", True).validate()
    with pytest.raises(InvalidInput):
        DatasetRecord.from_json(json.dumps({"dataset": "mucaps", "instruction": "i", "response": "r"}))


def test_adr_pairs():
    ts = TrackSet({"piano": np.ones(10), "bass": 2 * np.ones(10), "drums": 4 * np.ones(10)}, SR)
    rng = np.random.default_rng(0)
    inp, tgt, meta = build_adr_pairs(ts, "add", rng, (0, 1))
    assert np.array_equal(inp, np.ones(10)) and np.array_equal(tgt, 3 * np.ones(10))
    inp, tgt, meta = build_adr_pairs(ts, "delete", rng, (2, 0))
    assert np.array_equal(inp, 7 * np.ones(10)) and np.array_equal(tgt, 4 * np.ones(10))
    assert meta["removed"] == ["piano", "bass"]
    inp, tgt, meta = build_adr_pairs(ts, "replace", rng, (1, 2))
    assert meta["source"] == "bass" and meta["target"] == "drums"
    with pytest.raises(InvalidInput):
        build_adr_pairs(ts, "replace", rng, (1, 1))
    with pytest.raises(InvalidInput):
        TrackSet({"piano": np.ones(3)}, SR)
    with pytest.raises(InvalidInput):
        TrackSet({"piano": np.ones(3), "bass": np.ones(4)}, SR)


CFG = BuildConfig(seconds=1.0)


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_build_muedit_counts_and_determinism(tmp_path):
    counts = build_dataset("muedit", tmp_path / "a", 20, 7, cfg=CFG)
    assert counts == {"speed": 4, "pitch": 4, "add": 4, "delete": 4, "replace": 4}
    build_dataset("muedit", tmp_path / "b", 20, 7, cfg=CFG)
    for name in ("muedit.jsonl", "muedit.meta.jsonl"):
        assert _digest(tmp_path / "a" / name) == _digest(tmp_path / "b" / name)
    records = read_records(tmp_path / "a" / "muedit.jsonl")
    assert len(records) == 20
    for rec in records:
        assert (tmp_path / "a" / rec.input_media).exists() and (tmp_path / "a" / rec.target_audio).exists()


def test_muedit_items_regenerate_from_metadata(tmp_path):
    build_dataset("muedit", tmp_path, 10, 3, cfg=CFG)
    records = read_records(tmp_path / "muedit.jsonl")
    metas = [json.loads(line) for line in open(tmp_path / "muedit.meta.jsonl")]
    source = SyntheticSource(CFG)
    for rec, meta in list(zip(records, metas))[::3]:
        inp, tgt = regenerate_pair(meta, source)
        assert np.array_equal(inp, wavfile.read(tmp_path / rec.input_media)[1])
        assert np.array_equal(tgt, wavfile.read(tmp_path / rec.target_audio)[1])


def test_speed_target_lengths(tmp_path):
    build_dataset("muedit", tmp_path, 5, 1, cfg=CFG)
    rec, meta = read_records(tmp_path / "muedit.jsonl")[0], json.loads(open(tmp_path / "muedit.meta.jsonl").readline())
    n_in = len(read_wav(tmp_path / rec.input_media)[0])
    n_out = len(read_wav(tmp_path / rec.target_audio)[0])
    assert abs(n_out - round(n_in * meta["factor"])) <= 512


@pytest.mark.parametrize("kind,subtype", [("mucaps", "caption"), ("muimage", "image_gen"), ("muvideo", "video_gen")])
def test_build_other_datasets(tmp_path, kind, subtype):
    assert build_dataset(kind, tmp_path, 4, 0, cfg=CFG) == {subtype: 4}
    records = read_records(tmp_path / f"{kind}.jsonl")
    assert all(r.emits_music == (kind != "mucaps") for r in records)
    assert all("{" not in r.instruction + r.response for r in records)


def test_build_dataset_errors(tmp_path):
    with pytest.raises(InvalidInput):
        build_dataset("mubogus", tmp_path, 3, 0)
    with pytest.raises(InvalidInput):
        build_dataset("mucaps", tmp_path, 0, 0)


def test_directory_source(tmp_path):
    src = tmp_path / "src"
    (src / "band").mkdir(parents=True)
    write_wav(src / "clip.wav", 0.3 * tone(330.0, 1.0))
    write_wav(src / "band" / "piano.wav", 0.3 * tone(262.0, 1.0))
    write_wav(src / "band" / "bass.wav", 0.3 * tone(131.0, 1.0))
    source = DirectorySource(src, CFG)
    counts = build_dataset("muedit", tmp_path / "out", 5, 0, source, CFG)
    assert sum(counts.values()) == 5
    with pytest.raises(InvalidInput):
        build_dataset("muimage", tmp_path / "out", 1, 0, source, CFG)
    with pytest.raises(InvalidInput):
        DirectorySource(tmp_path / "nope", CFG)
