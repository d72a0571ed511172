import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import finite_difference_gradients, naive_apply_attention, naive_attention_map
from posetransfer.attention import (AttentionParams, apply_attention,
                                    compute_attention_map, self_attention)


def make_params(channels, seed=0, key_channels=None):
    torch.manual_seed(seed)
    p = AttentionParams(channels, key_channels=key_channels)
    for conv in (p.key, p.query, p.value, p.out):
        torch.nn.init.normal_(conv.weight, 0.0, 0.5)
    return p


def test_gamma_initialized_to_exactly_zero():
    p = AttentionParams(8)
    assert p.gamma.item() == 0.0


def test_key_channel_reduction_default():
    p = AttentionParams(16)
    assert p.key.weight.shape[0] == 2  # 16 // 8
    assert AttentionParams(4).key.weight.shape[0] == 1  # floor to >= 1


def test_invalid_reduction_rejected():
    with pytest.raises(ValueError):
        AttentionParams(8, reduction=0)


def test_map_is_row_stochastic():
    p = make_params(6)
    x = torch.randn(6, 3, 4)
    amap = compute_attention_map(x, p)
    assert amap.shape == (12, 12)
    assert (amap >= 0).all()
    assert torch.allclose(amap.sum(dim=1), torch.ones(12), atol=1e-5)


@given(c=st.integers(1, 8), h=st.integers(1, 4), w=st.integers(1, 4),
       seed=st.integers(0, 50))
@settings(max_examples=40, deadline=None)
def test_map_row_stochastic_property(c, h, w, seed):
    p = make_params(c, seed=seed)
    g = torch.Generator().manual_seed(seed + 1)
    x = torch.randn(c, h, w, generator=g)
    amap = compute_attention_map(x, p)
    n = h * w
    assert amap.shape == (n, n)
    assert (amap >= 0).all()
    assert torch.allclose(amap.sum(dim=1), torch.ones(n), atol=1e-5)


def test_constant_code_gives_uniform_map():
    p = make_params(4)
    x = torch.full((4, 2, 3), 0.7)
    amap = compute_attention_map(x, p)
    assert torch.allclose(amap, torch.full((6, 6), 1.0 / 6.0), atol=1e-6)


def test_two_location_softmax_hand_value():
    # one channel, unit key/query weights, locations [sqrt(ln 2), 0]:
    # logits for output row 0 are [ln 2, 0], so the row must be
    # [2/3, 1/3] by direct evaluation of the softmax.
    p = AttentionParams(1, key_channels=1)
    with torch.no_grad():
        for conv in (p.key, p.query, p.value, p.out):
            conv.weight.fill_(1.0)
    x = torch.tensor([[[math.sqrt(math.log(2.0)), 0.0]]])
    amap = compute_attention_map(x, p)
    assert torch.allclose(amap[0], torch.tensor([2.0 / 3.0, 1.0 / 3.0]),
                          atol=1e-6)
    assert torch.allclose(amap[1], torch.tensor([0.5, 0.5]), atol=1e-6)


def test_single_location_map_and_output():
    p = make_params(5)
    x = torch.randn(5, 1, 1)
    amap = compute_attention_map(x, p)
    assert torch.allclose(amap, torch.ones(1, 1))
    with torch.no_grad():
        p.gamma.fill_(0.3)
    out = apply_attention(x, amap, p)
    expected = 0.3 * p.out(p.value(x.unsqueeze(0))).squeeze(0) + x
    assert torch.allclose(out, expected, atol=1e-6)


def test_gate_at_init_passthrough_is_exact():
    p = make_params(7)
    x = torch.randn(7, 3, 3)
    assert torch.equal(self_attention(x, p), x)
    amap = compute_attention_map(x, p)
    assert torch.equal(apply_attention(x, amap, p), x)


def test_identity_map_is_per_location_transform():
    p = make_params(4, seed=3)
    with torch.no_grad():
        p.gamma.fill_(1.0)
    x = torch.randn(4, 2, 2)
    eye = torch.eye(4)
    out = apply_attention(x, eye, p)
    expected = p.out(p.value(x.unsqueeze(0))).squeeze(0) + x
    assert torch.allclose(out, expected, atol=1e-6)


def test_uniform_map_mixes_to_spatial_mean():
    p = make_params(3, seed=5)
    with torch.no_grad():
        p.gamma.fill_(1.0)
    x = torch.randn(3, 2, 3)
    n = 6
    uniform = torch.full((n, n), 1.0 / n)
    out = apply_attention(x, uniform, p)
    values = p.value(x.unsqueeze(0)).reshape(1, 3, n)
    mean_broadcast = values.mean(dim=2, keepdim=True).expand(1, 3, n)
    o = p.out(mean_broadcast.reshape(1, 3, 2, 3))
    assert torch.allclose(out, (o.squeeze(0) + x), atol=1e-6)


@pytest.mark.parametrize("c,h,w", [(4, 2, 2), (2, 4, 4), (6, 4, 4), (3, 1, 5)])
def test_brute_force_oracle_equivalence(c, h, w):
    p = make_params(c, seed=c + h)
    with torch.no_grad():
        p.gamma.fill_(0.5)
    g = torch.Generator().manual_seed(42)
    x = torch.randn(c, h, w, generator=g)
    amap = compute_attention_map(x, p)
    out = apply_attention(x, amap, p)
    code = x.double().numpy()
    ref_map = naive_attention_map(code, p)
    ref_out = naive_apply_attention(code, ref_map, p, 0.5)
    assert np.abs(amap.detach().numpy() - ref_map).max() < 1e-6
    assert np.abs(out.detach().numpy() - ref_out).max() < 1e-6


def test_self_attention_matches_brute_force():
    p = make_params(4, seed=9)
    with torch.no_grad():
        p.gamma.fill_(0.5)
    x = torch.randn(4, 2, 2)
    out = self_attention(x, p)
    code = x.double().numpy()
    ref = naive_apply_attention(code, naive_attention_map(code, p), p, 0.5)
    assert np.abs(out.detach().numpy() - ref).max() < 1e-6


def test_batched_matches_per_sample():
    p = make_params(5, seed=11)
    with torch.no_grad():
        p.gamma.fill_(0.2)
    x = torch.randn(3, 5, 2, 3)
    batched = self_attention(x, p)
    singles = torch.stack([self_attention(x[i], p) for i in range(3)])
    assert torch.allclose(batched, singles, atol=1e-6)


def test_permutation_equivariance():
    p = make_params(4, seed=7)
    with torch.no_grad():
        p.gamma.fill_(0.8)
    x = torch.randn(4, 3, 2)
    n = 6
    perm = torch.randperm(n, generator=torch.Generator().manual_seed(1))
    x_cols = x.reshape(4, n)
    x_perm = x_cols[:, perm].reshape(4, 3, 2)
    out = self_attention(x, p).reshape(4, n)
    out_perm = self_attention(x_perm, p).reshape(4, n)
    assert torch.allclose(out_perm, out[:, perm], atol=1e-5)


def test_non_finite_input_rejected():
    p = make_params(3)
    x = torch.randn(3, 2, 2)
    x[0, 0, 0] = float("nan")
    with pytest.raises(ValueError, match="non-finite"):
        compute_attention_map(x, p)
    with pytest.raises(ValueError, match="non-finite"):
        self_attention(x, p)


def test_map_size_mismatch_rejected():
    p = make_params(3)
    x = torch.randn(3, 2, 2)
    bad = torch.full((6, 6), 1.0 / 6.0)
    with pytest.raises(ValueError, match="locations"):
        apply_attention(x, bad, p)


def test_bad_rank_rejected():
    p = make_params(3)
    with pytest.raises(ValueError, match="CxHxW"):
        compute_attention_map(torch.randn(3, 2), p)


def test_gradients_match_finite_differences():
    torch.manual_seed(0)
    p = AttentionParams(3, key_channels=2).double()
    for conv in (p.key, p.query, p.value, p.out):
        torch.nn.init.normal_(conv.weight, 0.0, 0.5)
    with torch.no_grad():
        p.gamma.fill_(0.4)
    x = torch.randn(3, 4, 4, dtype=torch.float64, requires_grad=True)
    weight = torch.randn(3, 4, 4, dtype=torch.float64)

    def loss_fn():
        out = apply_attention(x, compute_attention_map(x, p), p)
        return (out * weight).sum()

    loss = loss_fn()
    params = [x] + list(p.parameters())
    grads = torch.autograd.grad(loss, params)
    analytic = np.concatenate([g.reshape(-1).numpy() for g in grads])
    fd = finite_difference_gradients([x] + list(p.parameters()), loss_fn)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1.0)
    rel = np.abs(analytic - fd) / denom
    assert rel.max() < 1e-4
