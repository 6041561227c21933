"""
Aggregation & Enhancement - AFM and EFM
========================================
AFM (adaptive aggregation fusion): per-channel softmax over the six branch
maps, selective-kernel style.

    s = sum_k F_k;  d = GAP(s);  logits = expand(reduce(d)) -> (6, C)
    out = sum_k softmax_k(logits)[k] * F_k

EFM (lightweight enhancement fusion), one independent instance per
modality; gate and residual paths are separate 1x1 -> 3x3 conv stacks:

    out = f_m * sigmoid(g_gate(f_ag)) + relu(g_res(f_ag))

Change log:
  2026-10-18  Initial implementation
"""

import logging
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from ddf_config import AFM_REDUCTION, ATTRIBUTES
from ddf_errors import ShapeError
from fusion_units import check_feature_map, check_same_shape, global_avg_pool

log = logging.getLogger("ddfnet.aggregation_enhancement")


class AdaptiveAggregationFusion(nn.Module):
    """Softmax-over-branches aggregation of the attribute fusion maps."""

    def __init__(self, channels: int, num_branches: int = len(ATTRIBUTES),
                 reduction: int = AFM_REDUCTION):
        super().__init__()
        if reduction < 1 or channels % reduction != 0:
            raise ShapeError(f"AFM reduction {reduction} must divide channels {channels}")
        self.channels = channels
        self.num_branches = num_branches
        self.reduce = nn.Linear(channels, channels // reduction)
        self.expand = nn.Linear(channels // reduction, num_branches * channels)

    def _stack(self, branch_feats: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(branch_feats) != self.num_branches:
            raise ShapeError(f"AFM expects {self.num_branches} branch maps, got {len(branch_feats)}")
        first = branch_feats[0]
        check_feature_map(first, self.channels, "AFM input")
        for f in branch_feats[1:]:
            check_same_shape(first, f, "branch map")
        return torch.stack(list(branch_feats), dim=0)   # (K, B, C, H, W)

    def branch_weights(self, branch_feats: Sequence[torch.Tensor]) -> torch.Tensor:
        """Per-channel branch weights, shape (K, B, C), summing to 1 over K."""
        feats = self._stack(branch_feats)
        d = global_avg_pool(feats.sum(dim=0))
        logits = self.expand(self.reduce(d))
        logits = logits.view(-1, self.num_branches, self.channels).transpose(0, 1)
        return torch.softmax(logits, dim=0)

    def forward(self, branch_feats: Sequence[torch.Tensor]) -> torch.Tensor:
        feats = self._stack(branch_feats)
        w = self.branch_weights(branch_feats)
        return (w[:, :, :, None, None] * feats).sum(dim=0)


def _conv_stack(channels: int) -> nn.Sequential:
    # 1x1 then 3x3, zero padding keeps H x W
    return nn.Sequential(
        nn.Conv2d(channels, channels, kernel_size=1),
        nn.Conv2d(channels, channels, kernel_size=3, padding=1),
    )


class LightweightEnhancementFusion(nn.Module):
    """Re-inject the aggregated map into one modality stream."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.gate = _conv_stack(channels)
        self.residual = _conv_stack(channels)

    def forward(self, f_m: torch.Tensor, f_ag: torch.Tensor) -> torch.Tensor:
        check_feature_map(f_m, self.channels, "EFM modality input")
        check_feature_map(f_ag, self.channels, "EFM aggregated input")
        check_same_shape(f_m, f_ag, "EFM input")
        return f_m * torch.sigmoid(self.gate(f_ag)) + F.relu(self.residual(f_ag))
