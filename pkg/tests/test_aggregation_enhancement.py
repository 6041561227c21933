import pytest
import torch
from torch.autograd import gradcheck

import scalar_oracles as oracle
from aggregation_enhancement import AdaptiveAggregationFusion, LightweightEnhancementFusion
from conftest import feature_pair, parameter_gradcheck
from ddf_errors import ShapeError


def _maps(k=6, b=2, c=4, h=5, w=5):
    return [torch.randn(b, c, h, w, dtype=torch.float64) for _ in range(k)]


def test_afm_weights_sum_to_one_over_branches():
    afm = AdaptiveAggregationFusion(4).double()
    w = afm.branch_weights(_maps())
    assert w.shape == (6, 2, 4)
    assert torch.all(w > 0)
    assert torch.allclose(w.sum(dim=0), torch.ones(2, 4, dtype=torch.float64))


def test_afm_of_identical_maps_is_that_map():
    afm = AdaptiveAggregationFusion(4).double()
    f = torch.randn(2, 4, 5, 5, dtype=torch.float64)
    assert torch.allclose(afm([f] * 6), f)


def test_afm_output_is_weighted_sum():
    afm = AdaptiveAggregationFusion(4).double()
    maps = _maps()
    w = afm.branch_weights(maps)
    expected = sum(w[k][:, :, None, None] * maps[k] for k in range(6))
    assert torch.allclose(afm(maps), expected)


def test_afm_gradcheck():
    afm = AdaptiveAggregationFusion(4).double()
    maps = [m.requires_grad_() for m in _maps(b=1, h=3, w=3)]
    assert gradcheck(lambda *xs: afm(list(xs)), tuple(maps), eps=1e-5, atol=1e-6, rtol=1e-4)


def test_afm_rejects_wrong_branch_count_and_shapes():
    afm = AdaptiveAggregationFusion(4)
    with pytest.raises(ShapeError):
        afm([torch.randn(1, 4, 3, 3)] * 5)
    maps = [torch.randn(1, 4, 3, 3)] * 5 + [torch.randn(1, 4, 3, 4)]
    with pytest.raises(ShapeError):
        afm(maps)


def test_efm_with_zero_parameters_halves_the_stream():
    efm = LightweightEnhancementFusion(4).double()
    with torch.no_grad():
        for p in efm.parameters():
            p.zero_()
    f_m = torch.randn(1, 4, 5, 5, dtype=torch.float64)
    f_ag = torch.randn(1, 4, 5, 5, dtype=torch.float64)
    assert torch.allclose(efm(f_m, f_ag), 0.5 * f_m)


def test_efm_matches_its_formula():
    efm = LightweightEnhancementFusion(4).double()
    f_m = torch.randn(2, 4, 5, 5, dtype=torch.float64)
    f_ag = torch.randn(2, 4, 5, 5, dtype=torch.float64)
    expected = f_m * torch.sigmoid(efm.gate(f_ag)) + torch.relu(efm.residual(f_ag))
    assert torch.allclose(efm(f_m, f_ag), expected)
    assert efm(f_m, f_ag).shape == f_m.shape


def test_efm_gradcheck():
    efm = LightweightEnhancementFusion(4).double()
    f_m = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
    f_ag = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
    assert gradcheck(efm, (f_m, f_ag), eps=1e-5, atol=1e-6, rtol=1e-4)


def test_efm_rejects_mismatched_inputs():
    efm = LightweightEnhancementFusion(4)
    with pytest.raises(ShapeError):
        efm(torch.randn(1, 4, 5, 5), torch.randn(1, 4, 4, 4))


def test_afm_matches_elementwise_recomputation():
    afm = AdaptiveAggregationFusion(2, reduction=1).double()
    maps = _maps(b=1, c=2, h=2, w=2)
    expected = oracle.afm(afm, [m[0].tolist() for m in maps])
    assert afm(maps)[0].flatten().tolist() == pytest.approx(oracle.flat(expected), abs=1e-12)


def test_efm_matches_elementwise_recomputation():
    efm = LightweightEnhancementFusion(3).double()
    f_m = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    f_ag = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    expected = oracle.efm(efm, f_m[0].tolist(), f_ag[0].tolist())
    assert efm(f_m, f_ag)[0].flatten().tolist() == pytest.approx(oracle.flat(expected), abs=1e-12)


def test_parameter_gradients_match_finite_differences():
    afm = AdaptiveAggregationFusion(4).double()
    maps = _maps(b=1, h=3, w=3)
    assert parameter_gradcheck(afm, maps)
    efm = LightweightEnhancementFusion(4).double()
    f_m, f_ag = feature_pair(h=4, w=4)
    assert parameter_gradcheck(efm, f_m, f_ag)
