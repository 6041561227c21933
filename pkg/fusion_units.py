"""
Fusion Units - SAE, CAE, SFU and Router
========================================
The four building blocks of a dynamic fusion branch. Every unit maps
(B, C, H, W) feature maps to maps of the same shape (the router maps to a
(B, n_gates) gate vector) and is differentiable end to end; backward is
autograd's analytic gradient.

  SAE     out = sigmoid(conv1x1(f)) * f             spatial mask, 1 channel
  CAE     out = sigmoid(W [GAP(f), GMP(f)] + b) * f  per-channel weights
  SFU     per-channel softmax between RGB and TIR    selective-kernel style
  Router  relu(tanh(MLP([GAP(f), GMP(f)])))          gates in [0, 1)

Pooled descriptors are always GAP first, then GMP. GMP backward routes the
gradient to the first maximal position in row-major order.

Change log:
  2026-10-18  Initial implementation
"""

import logging

import torch
import torch.nn.functional as F
from torch import nn

from ddf_config import ROUTER_REDUCTION, SFU_REDUCTION
from ddf_errors import ShapeError

log = logging.getLogger("ddfnet.fusion_units")


# ============================================================
# SHARED HELPERS
# ============================================================

def check_feature_map(f: torch.Tensor, channels: int = None, name: str = "feature map"):
    """Raise ShapeError unless `f` is (B, C, H, W) with B >= 1 (and C == channels)."""
    if not isinstance(f, torch.Tensor) or f.dim() != 4:
        shape = tuple(f.shape) if isinstance(f, torch.Tensor) else type(f).__name__
        raise ShapeError(f"{name} must be a 4-D (B, C, H, W) tensor, got {shape}")
    if f.shape[0] < 1:
        raise ShapeError(f"{name} has an empty batch")
    if channels is not None and f.shape[1] != channels:
        raise ShapeError(f"{name} has {f.shape[1]} channels, unit expects {channels}")


def check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str = "modality"):
    if a.shape != b.shape:
        raise ShapeError(f"{what} shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def global_avg_pool(f: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) -> (B, C)."""
    return f.mean(dim=(2, 3))


def global_max_pool(f: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) -> (B, C); ties resolve to the first row-major maximum."""
    values, _ = f.flatten(2).max(dim=2)
    return values


def pooled_descriptor(f: torch.Tensor) -> torch.Tensor:
    """c(GAP(f), GMP(f)): (B, C, H, W) -> (B, 2C)."""
    return torch.cat([global_avg_pool(f), global_max_pool(f)], dim=1)


# ============================================================
# SPATIAL ATTENTION ENHANCEMENT
# ============================================================

class SpatialAttentionEnhancement(nn.Module):
    """1x1 convolution to a single-channel spatial mask, sigmoid, multiply."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.conv = nn.Conv2d(channels, 1, kernel_size=1, bias=True)

    def spatial_weights(self, f: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv(f))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        check_feature_map(f, self.channels, "SAE input")
        return self.spatial_weights(f) * f


# ============================================================
# CHANNEL ATTENTION ENHANCEMENT
# ============================================================

class ChannelAttentionEnhancement(nn.Module):
    """Linear 2C -> C on the pooled descriptor, sigmoid, per-channel multiply.

    The linear map is the 1x1 convolution on the 2C x 1 x 1 descriptor.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.fc = nn.Linear(2 * channels, channels, bias=True)

    def channel_weights(self, f: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.fc(pooled_descriptor(f)))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        check_feature_map(f, self.channels, "CAE input")
        w = self.channel_weights(f)
        return f * w[:, :, None, None]


# ============================================================
# SELECTIVE FUSION UNIT
# ============================================================

class SelectiveFusionUnit(nn.Module):
    """Selective-kernel fusion of the two modality maps.

    d = [GAP(s), GMP(s)] with s = f_rgb + f_tir; each modality has its own
    reduce (2C -> C/r) / expand (C/r -> C) path producing per-channel logits;
    a softmax across the two modalities gives (a, b) with a + b = 1.
    """

    def __init__(self, channels: int, reduction: int = SFU_REDUCTION):
        super().__init__()
        if reduction < 1 or channels % reduction != 0:
            raise ShapeError(f"SFU reduction {reduction} must divide channels {channels}")
        self.channels = channels
        self.reduction = reduction
        hidden = channels // reduction
        self.reduce_rgb = nn.Linear(2 * channels, hidden)
        self.expand_rgb = nn.Linear(hidden, channels)
        self.reduce_tir = nn.Linear(2 * channels, hidden)
        self.expand_tir = nn.Linear(hidden, channels)

    def modality_weights(self, f_rgb: torch.Tensor, f_tir: torch.Tensor) -> torch.Tensor:
        """Per-channel softmax weights, shape (2, B, C): [0] RGB, [1] TIR."""
        d = pooled_descriptor(f_rgb + f_tir)
        logits = torch.stack([
            self.expand_rgb(self.reduce_rgb(d)),
            self.expand_tir(self.reduce_tir(d)),
        ], dim=0)
        return torch.softmax(logits, dim=0)

    def forward(self, f_rgb: torch.Tensor, f_tir: torch.Tensor) -> torch.Tensor:
        check_feature_map(f_rgb, self.channels, "SFU RGB input")
        check_feature_map(f_tir, self.channels, "SFU TIR input")
        check_same_shape(f_rgb, f_tir)
        w = self.modality_weights(f_rgb, f_tir)
        return w[0][:, :, None, None] * f_rgb + w[1][:, :, None, None] * f_tir


# ============================================================
# ROUTER
# ============================================================

class Router(nn.Module):
    """Gate predictor: relu(tanh(MLP([GAP(f), GMP(f)]))).

    The MLP is two linear layers (2C_in -> 2C_in / r -> n_gates) with no
    activation in between; the only nonlinearity is the final tanh + relu,
    so every gate lies in [0, 1).
    """

    def __init__(self, in_channels: int, n_gates: int,
                 reduction: int = ROUTER_REDUCTION, hidden: int = None):
        super().__init__()
        in_features = 2 * in_channels
        if hidden is None:
            hidden = max(1, in_features // reduction)
        self.in_channels = in_channels
        self.n_gates = n_gates
        self.fc1 = nn.Linear(in_features, hidden)
        self.fc2 = nn.Linear(hidden, n_gates)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        check_feature_map(f, self.in_channels, "router input")
        x = self.fc2(self.fc1(pooled_descriptor(f)))
        return F.relu(torch.tanh(x))
