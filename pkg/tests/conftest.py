import numpy as np
import pytest
import torch
from torch.autograd import gradcheck

from synthetic_data import SceneConfig, make_attribute_subsets
from tracker_core import BackboneConfig
from training_pipeline import build_model


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> BackboneConfig:
    """Two layers of 8 channels, DDF after the second, 4x4 feature grid."""
    return BackboneConfig(
        channels=(8, 8), strides=(2, 2), input_resolution=16, ddf_layers=(2,),
        predictor_dim=8, predictor_heads=2, encoder_layers=1, decoder_layers=1,
    )


@pytest.fixture
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=0, dtype=torch.float64, deterministic=True)


@pytest.fixture
def tiny_scene() -> SceneConfig:
    return SceneConfig(canvas=32, frames=6, target_size_range=(6, 9))


@pytest.fixture
def tiny_index(tiny_scene):
    return make_attribute_subsets(tiny_scene, counts=1, seed=0)


def feature_pair(b=1, c=4, h=6, w=6, dtype=torch.float64):
    return torch.randn(b, c, h, w, dtype=dtype), torch.randn(b, c, h, w, dtype=dtype)


def parameter_gradcheck(module, *inputs, output=lambda out: out, **tolerances):
    """gradcheck every parameter of ``module`` through torch.func.functional_call."""
    names = [name for name, _ in module.named_parameters()]
    values = tuple(p.detach().clone().requires_grad_() for _, p in module.named_parameters())

    def functional(*ps):
        return output(torch.func.functional_call(module, dict(zip(names, ps)), inputs))

    tolerances = {"eps": 1e-5, "atol": 1e-6, "rtol": 1e-4, **tolerances}
    return gradcheck(functional, values, **tolerances)
