import numpy as np
import pytest
import torch

from musefuse.errors import InvalidInput
from musefuse.fusion import FusionConfig, FusionLM
from musefuse.lora import LoRALinear, has_lora, inject_lora
from musefuse.projection import (
    ConditioningEmbedding, OutputProjection, ProjectionConfig, decode_stub, project,
)


# --- output projection ------------------------------------------------------------

@pytest.mark.parametrize("target,shape", [("audioldm2", (1, 512)), ("musicgen", (512, 768)), ("toy", (1, 4))])
def test_projection_shapes(target, shape):
    proj = OutputProjection(ProjectionConfig(d_model=32, targets=(target,)))
    cond = project(torch.randn(8, 32), target, proj)
    assert tuple(cond.data.shape) == shape
    assert proj(torch.randn(3, 8, 32), target).shape == (3, *shape)


def test_projection_errors():
    proj = OutputProjection(ProjectionConfig(d_model=16))
    with pytest.raises(InvalidInput):
        proj(torch.randn(7, 16), "toy")
    with pytest.raises(InvalidInput):
        proj(torch.randn(8, 16), "musicgen")
    with pytest.raises(InvalidInput):
        ProjectionConfig(targets=("riffusion",))


def test_projection_is_seeded():
    a = OutputProjection(ProjectionConfig(seed=2))
    b = OutputProjection(ProjectionConfig(seed=2))
    x = torch.randn(8, 32)
    assert torch.equal(a(x, "toy"), b(x, "toy"))


def test_decode_stub_deterministic_and_dominant_partial():
    cond = ConditioningEmbedding("toy", torch.tensor([[0.1, -0.2, 0.3, 0.4]]))
    a = decode_stub(cond, 1.0, seed=5)
    b = decode_stub(cond, 1.0, seed=5)
    assert a.dtype == np.float32 and a.shape == (16000,)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, decode_stub(cond, 1.0, seed=6))
    other = ConditioningEmbedding("toy", torch.tensor([[0.1, -0.2, 0.3, 0.5]]))
    assert not np.array_equal(a, decode_stub(other, 1.0, seed=5))
    assert np.max(np.abs(a)) <= 0.8 + 1e-6
    with pytest.raises(InvalidInput):
        decode_stub(cond, 0.0)


def test_decode_stub_ignores_sub_quantum_noise():
    base = torch.tensor([[0.1, -0.2, 0.3, 0.4]], dtype=torch.float64)
    a = decode_stub(ConditioningEmbedding("toy", base), 0.5)
    b = decode_stub(ConditioningEmbedding("toy", base + 1e-9), 0.5)
    assert np.array_equal(a, b)


# --- LoRA ----------------------------------------------------------------------------

def test_lora_linear_init_identity_bitwise():
    base = torch.nn.Linear(8, 6)
    x = torch.randn(5, 8)
    ref = base(x)
    wrapped = LoRALinear(base, r=4, alpha=8.0, generator=torch.Generator().manual_seed(0))
    assert torch.equal(wrapped(x), ref)
    assert not base.weight.requires_grad
    assert wrapped.scaling == 2.0


def test_lora_injection_preserves_lm_bitwise_and_trains_only_deltas():
    cfg = FusionConfig(d_model=16, n_heads=2, max_seq_len=32)
    lm = FusionLM(cfg).eval()
    ids = torch.randint(0, 258, (2, 9), generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        before, _ = lm(ids)
    added = inject_lora(lm, 4, 8.0)
    assert has_lora(lm)
    assert added == cfg.n_layers * 2 * (4 * 16 + 16 * 4)
    with torch.no_grad():
        after, _ = lm(ids)
    assert torch.equal(before, after)
    assert inject_lora(lm, 4, 8.0) == 0

    lm(ids)[0].sum().backward()
    attn = lm.layers[0].attn
    assert attn.q.lora_B.grad is not None and attn.q.lora_B.grad.abs().sum() > 0
    assert attn.q.base.weight.grad is None
    assert not isinstance(attn.k, LoRALinear)


def test_lora_rank_validation():
    with pytest.raises(ValueError):
        LoRALinear(torch.nn.Linear(4, 4), r=0)
