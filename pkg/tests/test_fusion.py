import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from musefuse.errors import InvalidInput
from musefuse.fusion import (
    ByteTokenizer, FusionConfig, FusionLM, SamplingConfig, detect_audio_tokens, generate,
    nucleus_filter,
)
from oracles import plain_forward

CFG = FusionConfig(n_layers=6, block_len=2, d_model=16, n_heads=2, max_seq_len=64, seed=3)


def random_feats(d, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return {k: torch.randn(d, generator=gen) for k in ("music", "image", "video")}


def test_injection_schedule_last_blocks_in_order():
    sched = FusionConfig(n_layers=10, block_len=2).injection_schedule()
    assert sched == {4: (0, "video"), 5: (0, "video"), 6: (1, "image"), 7: (1, "image"),
                     8: (2, "music"), 9: (2, "music")}
    with pytest.raises(InvalidInput):
        FusionConfig(n_layers=5, block_len=2)


def test_zero_gate_identity_is_bitwise():
    lm = FusionLM(CFG).eval()
    ids = torch.randint(0, 258, (2, 11), generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        with_feats, _ = lm(ids, random_feats(16))
        without, _ = lm(ids)
        ref = plain_forward(lm, ids)
    assert torch.equal(with_feats, ref)
    assert torch.equal(without, ref)


def test_absent_modality_injects_prefix_query_only():
    lm = FusionLM(CFG).eval()
    with torch.no_grad():
        lm.gates.copy_(torch.tensor([0.5, -1.5, 2.0]))
        lm.prefix_queries.normal_()
    feats = random_feats(16)
    del feats["image"]
    trace = []
    ids = torch.tensor([[1, 2, 3, 4]])
    with torch.no_grad():
        lm(ids, feats, trace=trace)
    assert [t[0] for t in trace] == [0, 1, 2, 3, 4, 5]
    for _, block, modality, injected in trace:
        p = lm.prefix_queries[block]
        if modality == "image":
            expected = lm.gates[block] * p
        else:
            expected = lm.gates[block] * (feats[modality] + p)
        assert torch.equal(injected[0], expected)

    # instrumented reference built from the documented rule
    with torch.no_grad():
        h = lm.tok_emb(ids) + lm.pos_emb(torch.arange(4))
        sched = CFG.injection_schedule()
        for i, layer in enumerate(lm.layers):
            block, modality = sched[i]
            vec = feats.get(modality, torch.zeros(16)) + lm.prefix_queries[block]
            if modality not in feats:
                vec = lm.prefix_queries[block]
            h = layer(h + lm.gates[block] * vec)
        ref = lm.head(lm.ln_f(h))
        out, _ = lm(ids, feats)
    assert torch.allclose(out, ref, atol=1e-6)


def test_feat_mask_zeroes_missing_rows():
    lm = FusionLM(CFG).eval()
    with torch.no_grad():
        lm.gates.fill_(1.0)
    feats = {"music": torch.randn(2, 16)}
    mask = {"music": torch.tensor([True, False])}
    ids = torch.tensor([[5, 6, 7], [5, 6, 7]])
    with torch.no_grad():
        masked, _ = lm(ids, feats, mask)
        absent, _ = lm(ids[1:])
        present, _ = lm(ids[:1], {"music": feats["music"][:1]})
    assert torch.allclose(masked[1], absent[0], atol=1e-6)
    assert torch.allclose(masked[0], present[0], atol=1e-6)


def test_causality_on_random_sequences():
    lm = FusionLM(CFG).eval()
    with torch.no_grad():
        lm.gates.fill_(0.7)
    gen = torch.Generator().manual_seed(1)
    feats = random_feats(16, 2)
    for _ in range(20):
        T = int(torch.randint(3, 20, (1,), generator=gen))
        ids = torch.randint(0, CFG.total_vocab, (T,), generator=gen)
        t = int(torch.randint(1, T, (1,), generator=gen))
        other = ids.clone()
        other[t:] = torch.randint(0, CFG.total_vocab, (T - t,), generator=gen)
        with torch.no_grad():
            a, ha = lm(ids, feats)
            b, hb = lm(other, feats)
        assert torch.equal(a[:t], b[:t])
        assert torch.equal(ha.final[:t], hb.final[:t])


def test_forward_shapes_and_errors():
    lm = FusionLM(CFG)
    logits, hidden = lm(torch.tensor([1, 2, 3]))
    assert logits.shape == (3, CFG.total_vocab)
    assert hidden.final.shape == (3, 16) and len(hidden.layers) == 6
    with pytest.raises(InvalidInput):
        lm(torch.tensor([1, 2]), {"speech": torch.zeros(16)})
    with pytest.raises(InvalidInput):
        lm(torch.tensor([CFG.total_vocab]))
    with pytest.raises(InvalidInput):
        lm(torch.zeros(65, dtype=torch.long))


@settings(max_examples=50)
@given(st.text(max_size=40), st.integers(0, 7))
def test_tokenizer_round_trip(text, k):
    tok = ByteTokenizer(258, 8)
    ids = tok.encode(text + f"[AUD_{k}]")
    assert ids[-1] == 258 + k
    assert tok.decode(ids) == text + f"[AUD_{k}]"


def test_nucleus_filter_keeps_threshold_crossing_token():
    p = torch.tensor([0.5, 0.3, 0.15, 0.05])
    out = nucleus_filter(p, 0.8)
    assert torch.allclose(out, torch.tensor([0.5, 0.3, 0.0, 0.0]) / 0.8)
    out = nucleus_filter(p, 0.81)
    assert out[2] > 0 and out[3] == 0


def test_generate_audio_tokens_form_a_complete_suffix():
    lm = FusionLM(CFG).eval()
    bias = torch.zeros(CFG.total_vocab)
    bias[CFG.audio_ids[0]] = 1e4
    new = generate(lm, [256, 65], sampling=SamplingConfig(max_len=20), logit_bias=bias,
                   generator=torch.Generator().manual_seed(0))
    assert new == CFG.audio_ids
    assert detect_audio_tokens([256, 65] + new, CFG) == list(range(2, 10))


def test_generate_masks_audio_without_room_and_other_audio_ids():
    lm = FusionLM(CFG).eval()
    bias = torch.zeros(CFG.total_vocab)
    bias[CFG.audio_ids] = 1e4
    new = generate(lm, [256], sampling=SamplingConfig(max_len=5), logit_bias=bias,
                   generator=torch.Generator().manual_seed(0))
    assert len(new) <= 5
    assert not any(t in CFG.audio_ids for t in new)


def test_generate_is_seeded_and_greedy_is_deterministic():
    lm = FusionLM(CFG).eval()
    s = SamplingConfig(temperature=1.0, top_p=0.95, max_len=15)
    a = generate(lm, [256, 70], sampling=s, generator=torch.Generator().manual_seed(9))
    b = generate(lm, [256, 70], sampling=s, generator=torch.Generator().manual_seed(9))
    assert a == b
    g = SamplingConfig(max_len=10, greedy=True)
    assert generate(lm, [256], sampling=g) == generate(lm, [256], sampling=g)


def test_detect_audio_tokens_requires_trailing_block():
    seq = [1, 2] + CFG.audio_ids
    assert detect_audio_tokens(seq, CFG) == list(range(2, 10))
    assert detect_audio_tokens(seq + [3], CFG) is None
    assert detect_audio_tokens(CFG.audio_ids[:-1], CFG) is None


def test_sampling_config_validation():
    with pytest.raises(InvalidInput):
        SamplingConfig(temperature=0.0)
    with pytest.raises(InvalidInput):
        SamplingConfig(top_p=1.5)
