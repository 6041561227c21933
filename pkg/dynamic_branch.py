"""
Dynamic Fusion Branch
=====================
One attribute-specific branch = two router-gated Spatial and Channel
Fusion Units (one per modality) + one router-gated Selective Fusion Unit.

  f'_rgb = f_rgb + w_sae_rgb * SAE(f_rgb) + w_cae_rgb * CAE(f_rgb)
  f'_tir = f_tir + w_sae_tir * SAE(f_tir) + w_cae_tir * CAE(f_tir)
  fused  = w_sfu * SFU(f'_rgb, f'_tir)       w_sfu from router([f'_rgb, f'_tir])

A zero gate drops its unit: SCFU becomes the identity, a zero SFU gate
makes the whole branch dormant. Gates are continuous, never thresholded.

Unit ablation: a branch may be built without any of its three units. A
missing SCFU is the identity with both gates reported as 0; a missing SFU
is replaced by equal-weight mixing, still gated by its router.

Change log:
  2026-10-18  Initial implementation
  2026-10-18  degraded_interval; segment_mean_gates before/during/after
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import pandas as pd
import torch
from torch import nn

from ddf_config import (
    AttributeId, BRANCH_UNITS, GATE_COLUMNS, ROUTER_REDUCTION,
    SCFU_GATES, SFU_GATES, SFU_REDUCTION,
)
from ddf_errors import ConfigError, DataError
from fusion_units import (
    ChannelAttentionEnhancement, Router, SelectiveFusionUnit,
    SpatialAttentionEnhancement, check_feature_map, check_same_shape,
)

log = logging.getLogger("ddfnet.dynamic_branch")


@dataclass
class BranchOutput:
    """Fused map a branch hands to aggregation, plus its per-sample gates."""

    fused: torch.Tensor
    gates: Dict[str, torch.Tensor]   # GATE_COLUMNS -> (B,) tensors

    def gate_table(self) -> torch.Tensor:
        """(B, 5) gate matrix in GATE_COLUMNS order."""
        return torch.stack([self.gates[c] for c in GATE_COLUMNS], dim=1)


# ============================================================
# SPATIAL AND CHANNEL FUSION UNIT
# ============================================================

class SpatialChannelFusionUnit(nn.Module):
    """SAE and CAE outputs, each scaled by its router gate, added residually."""

    def __init__(self, channels: int, reduction: int = ROUTER_REDUCTION):
        super().__init__()
        self.channels = channels
        self.sae = SpatialAttentionEnhancement(channels)
        self.cae = ChannelAttentionEnhancement(channels)
        self.router = Router(channels, SCFU_GATES, reduction=reduction)

    def forward(self, f: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns (f', gates) with gates of shape (B, 2): [w_sae, w_cae]."""
        check_feature_map(f, self.channels, "SCFU input")
        gates = self.router(f)
        w_sae = gates[:, 0, None, None, None]
        w_cae = gates[:, 1, None, None, None]
        out = f + w_sae * self.sae(f) + w_cae * self.cae(f)
        return out, gates


# ============================================================
# DYNAMIC FUSION BRANCH
# ============================================================

class DynamicFusionBranch(nn.Module):
    """Attribute-specific branch producing one fused map plus a gate record."""

    def __init__(self, channels: int, attribute=AttributeId.GEN,
                 units: Iterable[str] = BRANCH_UNITS,
                 router_reduction: int = ROUTER_REDUCTION,
                 sfu_reduction: int = SFU_REDUCTION):
        super().__init__()
        units = tuple(units)
        unknown = set(units) - set(BRANCH_UNITS)
        if unknown:
            raise ConfigError(f"unknown branch units {sorted(unknown)}; "
                              f"expected a subset of {BRANCH_UNITS}")
        self.channels = channels
        self.attribute = AttributeId.parse(attribute)
        self.units = units
        self.scfu_rgb = SpatialChannelFusionUnit(channels, router_reduction) if "scfu_rgb" in units else None
        self.scfu_tir = SpatialChannelFusionUnit(channels, router_reduction) if "scfu_tir" in units else None
        self.sfu = SelectiveFusionUnit(channels, sfu_reduction) if "sfu" in units else None
        # Router over the RGB (+) TIR concatenation: 2C input channels
        self.sfu_router = Router(2 * channels, SFU_GATES, reduction=router_reduction)

    def _scfu(self, unit, f: torch.Tensor):
        if unit is None:
            return f, f.new_zeros(f.shape[0], SCFU_GATES)
        return unit(f)

    def forward(self, f_rgb: torch.Tensor, f_tir: torch.Tensor) -> BranchOutput:
        check_feature_map(f_rgb, self.channels, f"{self.attribute.value} branch RGB input")
        check_feature_map(f_tir, self.channels, f"{self.attribute.value} branch TIR input")
        check_same_shape(f_rgb, f_tir)

        rgb, g_rgb = self._scfu(self.scfu_rgb, f_rgb)
        tir, g_tir = self._scfu(self.scfu_tir, f_tir)

        w_sfu = self.sfu_router(torch.cat([rgb, tir], dim=1))
        if self.sfu is not None:
            mixed = self.sfu(rgb, tir)
        else:
            mixed = 0.5 * (rgb + tir)
        fused = w_sfu[:, 0, None, None, None] * mixed

        gates = {
            "w_sae_rgb": g_rgb[:, 0],
            "w_cae_rgb": g_rgb[:, 1],
            "w_sae_tir": g_tir[:, 0],
            "w_cae_tir": g_tir[:, 1],
            "w_sfu": w_sfu[:, 0],
        }
        return BranchOutput(fused=fused, gates=gates)


# ============================================================
# STRUCTURE TRACE
# ============================================================

def branch_structure_trace(frames: Sequence[Tuple[torch.Tensor, torch.Tensor]],
                           branch: DynamicFusionBranch) -> pd.DataFrame:
    """Per-frame gate table for a sequence of (f_rgb, f_tir) pairs.

    One row per frame (and per sample when a frame carries B > 1), in frame
    order, with the exact gate values `branch.forward` records.
    """
    if len(frames) == 0:
        raise DataError("branch_structure_trace needs a nonempty frame sequence")

    rows = []
    with torch.no_grad():
        for frame_index, (f_rgb, f_tir) in enumerate(frames):
            out = branch(f_rgb, f_tir)
            table = out.gate_table().detach().cpu().double().numpy()
            for sample, gates in enumerate(table):
                row = {"frame_index": frame_index, "sample": sample}
                row.update({c: float(v) for c, v in zip(GATE_COLUMNS, gates)})
                rows.append(row)
    df = pd.DataFrame(rows, columns=["frame_index", "sample", *GATE_COLUMNS])
    if (df["sample"] == 0).all():
        df = df.drop(columns="sample")
    return df


def export_gate_trace(trace: pd.DataFrame, path: str) -> str:
    """Write a gate trace as CSV (frame_index + five gate columns)."""
    trace.to_csv(path, index=False, float_format="%.10g")
    log.info(f"gate trace written to {path} ({len(trace)} rows)")
    return path


def degraded_interval(metadata: Sequence[Dict]) -> Optional[Tuple[int, int]]:
    """(first, last) frame whose metadata records a degradation, or None."""
    frames = [t for t, m in enumerate(metadata) if m]
    return (frames[0], frames[-1]) if frames else None


def segment_mean_gates(trace: pd.DataFrame, boundary: int, end: Optional[int] = None) -> pd.DataFrame:
    """Mean gates per segment around a frame boundary.

    Without `end` the rows are 'before' and 'after' `boundary`. With `end`
    they are 'before', 'during' (frames boundary..end inclusive) and
    'after'. Empty segments get no row.
    """
    idx = trace["frame_index"]
    if end is None:
        masks = {"before": idx < boundary, "after": idx >= boundary}
    else:
        masks = {"before": idx < boundary,
                 "during": (idx >= boundary) & (idx <= end),
                 "after": idx > end}
    rows = {name: trace.loc[mask, list(GATE_COLUMNS)].mean()
            for name, mask in masks.items() if mask.any()}
    return pd.DataFrame(rows).T
