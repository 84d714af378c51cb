import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from musefuse.errors import InvalidInput
from musefuse.metrics import (
    BandClassifier, BandEmbedder, EmbeddingSet, JointEmbedder, MetricReport, clap_score, corpus_bleu,
    fad, ib_rank, kl_divergence, kl_metric, lsd, rank_by_cosine, rouge_l, text_metrics,
)
from oracles import naive_lsd, naive_kl

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# --- CLAP score --------------------------------------------------------------

def test_clap_identical_is_100():
    v = np.array([0.3, -1.2, 2.0])
    assert clap_score(v, v) == pytest.approx(100.0, abs=1e-12)


def test_clap_orthogonal_and_opposite_are_zero():
    assert clap_score([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert clap_score([1.0, 2.0], [-1.0, -2.0]) == 0.0


def test_clap_half_cosine():
    assert clap_score([1.0, 0.0], [0.5, math.sqrt(3) / 2]) == pytest.approx(50.0, abs=1e-10)


def test_clap_zero_norm_raises():
    with pytest.raises(InvalidInput):
        clap_score([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(InvalidInput):
        clap_score([1.0, 0.0], [1.0, 0.0, 0.0])


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite),
       st.floats(0.01, 100))
def test_clap_nonnegative_and_scale_invariant(a, b, s):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    v = clap_score(a, b)
    assert 0.0 <= v <= 100.0 + 1e-9
    assert clap_score(a * s, b) == pytest.approx(v, abs=1e-9)
    assert clap_score(a, b * s) == pytest.approx(v, abs=1e-9)


# --- LSD -----------------------------------------------------------------------

def test_lsd_identical_is_zero():
    x = np.random.default_rng(0).standard_normal(4000)
    assert lsd(x, x) == 0.0


def test_lsd_scaled_is_two():
    x = np.random.default_rng(1).standard_normal(8000)
    assert lsd(x, 10 * x) == pytest.approx(2.0, abs=1e-6)


def test_lsd_matches_naive_oracle():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(900, 3000))
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        assert abs(lsd(a, b) - naive_lsd(a, b)) < 1e-9


def test_lsd_truncates_and_rejects_empty(caplog):
    x = np.random.default_rng(3).standard_normal(3000)
    with caplog.at_level("WARNING"):
        assert lsd(x, x[:2500]) == lsd(x[:2500], x[:2500])
    assert "truncating" in caplog.text
    with pytest.raises(InvalidInput):
        lsd([], x)


# --- FAD -----------------------------------------------------------------------

def test_fad_same_set_is_zero():
    x = np.random.default_rng(0).standard_normal((50, 6))
    assert fad(x, x) < 1e-8


def test_fad_shifted_gaussians():
    rng = np.random.default_rng(0)
    delta = np.array([1.0, -0.5, 0.25, 2.0])
    r = rng.standard_normal((10000, 4))
    g = rng.standard_normal((10000, 4)) + delta
    assert fad(r, g) == pytest.approx(float(delta @ delta), rel=0.10)


def test_fad_two_point_scalar_case():
    r = np.array([[0.0], [2.0]])   # mean 1, sample var 2
    g = np.array([[3.0], [7.0]])   # mean 5, sample var 8
    expected = (1 - 5) ** 2 + (math.sqrt(2) - math.sqrt(8)) ** 2
    assert fad(r, g) == pytest.approx(expected, abs=1e-10)


def test_fad_errors():
    with pytest.raises(InvalidInput):
        fad(np.zeros((4, 3)), np.zeros((4, 2)))
    with pytest.raises(InvalidInput):
        fad(np.zeros((1, 3)), np.zeros((4, 3)))
    with pytest.raises(InvalidInput):
        EmbeddingSet(np.array([[np.nan, 1.0]]))


def test_fad_properties_on_random_pairs():
    rng = np.random.default_rng(5)
    for _ in range(100):
        d = int(rng.integers(1, 6))
        a = rng.standard_normal((int(rng.integers(2, 12)), d)) * rng.uniform(0.1, 3)
        b = rng.standard_normal((int(rng.integers(2, 12)), d)) + rng.standard_normal(d)
        ab, ba = fad(a, b), fad(b, a)
        assert ab >= 0 and ba >= 0
        assert abs(ab - ba) < 1e-8 * max(1.0, ab)
        assert fad(a, a) < 1e-8


# --- KL --------------------------------------------------------------------------

def test_kl_hand_case():
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-8)
    assert kl_divergence([0.2, 0.8], [0.2, 0.8]) == 0.0


def test_kl_matches_naive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.integers(2, 12))
        p = rng.dirichlet(np.ones(k))
        q = rng.dirichlet(np.ones(k))
        p[rng.integers(k)] = 0.0
        assert abs(kl_divergence(p, q) - naive_kl(p, q)) < 1e-9


def test_kl_metric_pairs_and_errors():
    clf = BandClassifier(seed=0)
    rng = np.random.default_rng(1)
    waves = [rng.standard_normal(4000) for _ in range(3)]
    assert kl_metric(waves, waves, clf) == 0.0
    other = [w[::-1].copy() for w in waves]
    expected = np.mean([naive_kl(clf(a), clf(b)) for a, b in zip(waves, other)])
    assert abs(kl_metric(waves, other, clf) - expected) < 1e-9
    with pytest.raises(InvalidInput):
        kl_metric(waves, waves[:2], clf)


# --- IB rank ---------------------------------------------------------------------

def test_ib_rank_endpoints_and_hand_case():
    assert ib_rank([[1, 2], [1, 2], [1, 2]]).tolist() == [1.0, 0.0]
    scores = ib_rank([[1, 2, 3], [2, 1, 3], [3, 1, 2]])
    assert scores[0] == pytest.approx(0.5, abs=1e-15)


def test_ib_rank_errors():
    with pytest.raises(InvalidInput):
        ib_rank([[1], [1]])
    with pytest.raises(InvalidInput):
        ib_rank([[1, 1, 3]])


@settings(max_examples=60)
@given(st.integers(2, 7), st.integers(1, 20), st.integers(0, 2**31))
def test_ib_rank_sums_to_half_n(n, samples, seed):
    rng = np.random.default_rng(seed)
    table = np.stack([rng.permutation(n) + 1 for _ in range(samples)])
    assert ib_rank(table).sum() == pytest.approx(n / 2, abs=1e-12)


def test_rank_by_cosine():
    ranks = rank_by_cosine([1.0, 0.0], [[0.0, 1.0], [1.0, 0.1], [-1.0, 0.0]])
    assert ranks.tolist() == [2, 1, 3]


# --- text ------------------------------------------------------------------------

def test_text_metrics_identical():
    refs = ["a calm piano piece at 90 bpm", "an upbeat drums and bass groove"]
    out = text_metrics(refs, refs)
    assert out["bleu"] == pytest.approx(1.0, abs=1e-12)
    assert out["rouge_l"] == 1.0


def test_text_metrics_disjoint():
    out = text_metrics(["alpha beta gamma delta"], ["one two three four"])
    assert out["bleu"] < 1e-6
    assert out["rouge_l"] == 0.0


def test_rouge_l_hand_case():
    assert rouge_l("the cat sat", "the cat") == 0.8


def test_bleu_brevity_penalty():
    # candidate is a prefix of the reference: all n-gram precisions are 1
    score = corpus_bleu(["a b c d e"], ["a b c d e f g h i j"])
    assert score == pytest.approx(math.exp(1 - 10 / 5), rel=1e-6)


def test_text_metrics_plugins_and_errors():
    out = text_metrics(["x y"], ["x y"], plugins={"length": lambda c, r: len(c)})
    assert out["length"] == 1.0
    with pytest.raises(InvalidInput):
        text_metrics([], [])
    with pytest.raises(InvalidInput):
        text_metrics(["a"], ["a", "b"])


# --- plumbing --------------------------------------------------------------------

def test_metric_report_validation():
    report = MetricReport("edit", {"fad": 0.1, "kl": 0.0, "lsd": 1.0}, 3)
    assert '"lsd": 1.0' in report.to_json()
    with pytest.raises(InvalidInput):
        MetricReport("edit", {"fad": float("nan")}, 3)
    with pytest.raises(InvalidInput):
        MetricReport("edit", {"fad": 0.0}, 0)


def test_stand_in_backbones_are_seeded():
    wave = np.sin(np.arange(8000) * 0.05)
    assert np.array_equal(BandEmbedder(seed=3)(wave), BandEmbedder(seed=3)(wave))
    assert not np.array_equal(BandEmbedder(seed=3)(wave), BandEmbedder(seed=4)(wave))
    p = BandClassifier(seed=0)(wave)
    assert p.min() > 0 and p.sum() == pytest.approx(1.0)
    joint = JointEmbedder(seed=0)
    assert joint.embed_text("piano").shape == joint.embed_audio(wave).shape == (16,)
    assert joint.embed_visual(np.ones((4, 4, 3))).shape == (16,)
