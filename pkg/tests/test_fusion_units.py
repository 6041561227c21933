import copy

import pytest
import torch
from torch.autograd import gradcheck

import scalar_oracles as oracle
from conftest import feature_pair, parameter_gradcheck
from ddf_errors import ShapeError
from fusion_units import (
    ChannelAttentionEnhancement, Router, SelectiveFusionUnit,
    SpatialAttentionEnhancement, global_max_pool, pooled_descriptor,
)

GRAD = dict(eps=1e-5, atol=1e-6, rtol=1e-4)


def _double(module):
    return module.double().eval()


def test_pooled_descriptor_is_gap_then_gmp():
    f = torch.arange(2 * 3 * 2 * 2, dtype=torch.float64).reshape(2, 3, 2, 2)
    d = pooled_descriptor(f)
    assert d.shape == (2, 6)
    assert torch.equal(d[:, :3], f.mean(dim=(2, 3)))
    assert torch.equal(d[:, 3:], f.amax(dim=(2, 3)))


def test_gmp_gradient_goes_to_first_maximum():
    f = torch.zeros(1, 1, 2, 2, dtype=torch.float64, requires_grad=True)
    global_max_pool(f).sum().backward()
    assert f.grad.flatten().tolist() == [1.0, 0.0, 0.0, 0.0]


def test_sae_gradcheck():
    sae = _double(SpatialAttentionEnhancement(4))
    x, _ = feature_pair()
    assert gradcheck(sae, (x.requires_grad_(),), **GRAD)


def test_cae_gradcheck():
    cae = _double(ChannelAttentionEnhancement(4))
    x, _ = feature_pair()
    assert gradcheck(cae, (x.requires_grad_(),), **GRAD)


def test_sfu_gradcheck():
    sfu = _double(SelectiveFusionUnit(4))
    a, b = feature_pair()
    assert gradcheck(sfu, (a.requires_grad_(), b.requires_grad_()), **GRAD)


def test_router_gradcheck():
    router = _double(Router(4, 2))
    x, _ = feature_pair()
    assert gradcheck(router, (x.requires_grad_(),), **GRAD)


def test_parameter_gradients_match_finite_differences():
    x, y = feature_pair(h=4, w=4)
    assert parameter_gradcheck(_double(SpatialAttentionEnhancement(4)), x)
    assert parameter_gradcheck(_double(ChannelAttentionEnhancement(4)), x)
    assert parameter_gradcheck(_double(SelectiveFusionUnit(4)), x, y)
    assert parameter_gradcheck(_double(Router(4, 3)), x)


def test_sae_matches_elementwise_recomputation():
    sae = _double(SpatialAttentionEnhancement(2))
    x, _ = feature_pair(c=2, h=2, w=2)
    expected = oracle.sae(sae, x[0].tolist())
    assert sae(x)[0].flatten().tolist() == pytest.approx(oracle.flat(expected), abs=1e-12)


def test_cae_matches_elementwise_recomputation():
    cae = _double(ChannelAttentionEnhancement(3))
    x, _ = feature_pair(c=3, h=2, w=2)
    expected = oracle.cae(cae, x[0].tolist())
    assert cae(x)[0].flatten().tolist() == pytest.approx(oracle.flat(expected), abs=1e-12)


def test_sfu_matches_elementwise_recomputation():
    sfu = _double(SelectiveFusionUnit(4))
    a, b = feature_pair(c=4, h=3, w=3)
    expected = oracle.sfu(sfu, a[0].tolist(), b[0].tolist())
    assert sfu(a, b)[0].flatten().tolist() == pytest.approx(oracle.flat(expected), abs=1e-12)


def test_router_matches_elementwise_recomputation():
    router = _double(Router(4, 3, hidden=2))
    x, _ = feature_pair(c=4, h=2, w=2)
    expected = oracle.router(router, x[0].tolist())
    assert router(x)[0].tolist() == pytest.approx(expected, abs=1e-12)


def test_sae_is_equivariant_to_channel_permutation():
    sae = _double(SpatialAttentionEnhancement(4))
    x, _ = feature_pair(b=2)
    perm = torch.tensor([2, 0, 3, 1])
    permuted = copy.deepcopy(sae)
    with torch.no_grad():
        permuted.conv.weight.copy_(sae.conv.weight[:, perm])
    assert torch.allclose(permuted(x[:, perm]), sae(x)[:, perm], atol=1e-12, rtol=0)


def test_sae_and_cae_preserve_shape_and_scale_within_input():
    x, _ = feature_pair(b=2, c=4, h=5, w=7)
    for unit in (SpatialAttentionEnhancement(4), ChannelAttentionEnhancement(4)):
        out = _double(unit)(x)
        assert out.shape == x.shape
        # sigmoid weights in (0, 1) never flip or amplify a value
        assert torch.all(out.abs() <= x.abs() + 1e-12)
        assert torch.all(out * x >= 0)


def test_router_gates_lie_in_unit_interval():
    router = _double(Router(4, 5))
    for scale in (0.1, 1.0, 100.0):
        x, _ = feature_pair(b=8)
        g = router(scale * x)
        assert g.shape == (8, 5)
        assert torch.all(g >= 0) and torch.all(g < 1)


def test_router_zero_output_layer_closes_every_gate():
    router = _double(Router(4, 3))
    with torch.no_grad():
        router.fc2.weight.zero_()
        router.fc2.bias.zero_()
    x, _ = feature_pair(b=3)
    assert torch.equal(router(x), torch.zeros(3, 3, dtype=torch.float64))


def test_sfu_weights_are_a_per_channel_simplex():
    sfu = _double(SelectiveFusionUnit(8))
    a, b = feature_pair(b=3, c=8)
    w = sfu.modality_weights(a, b)
    assert w.shape == (2, 3, 8)
    assert torch.all(w > 0)
    assert torch.allclose(w.sum(dim=0), torch.ones(3, 8, dtype=torch.float64))


def test_sfu_of_identical_inputs_is_that_input():
    sfu = _double(SelectiveFusionUnit(4))
    a, _ = feature_pair(b=2)
    assert torch.allclose(sfu(a, a), a)


def test_units_reject_bad_shapes():
    sae = SpatialAttentionEnhancement(4)
    with pytest.raises(ShapeError):
        sae(torch.randn(4, 6, 6))
    with pytest.raises(ShapeError):
        sae(torch.randn(1, 3, 6, 6))
    sfu = SelectiveFusionUnit(4)
    with pytest.raises(ShapeError):
        sfu(torch.randn(1, 4, 6, 6), torch.randn(1, 4, 5, 6))
    with pytest.raises(ShapeError):
        SelectiveFusionUnit(6, reduction=4)


def test_router_range_over_ten_thousand_draws():
    router = _double(Router(4, 5))
    x, _ = feature_pair(b=10_000, h=2, w=2)
    g = router(3.0 * x)
    assert float(g.min()) >= 0.0 and float(g.max()) < 1.0
