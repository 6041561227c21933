"""
Tracker Core - Two-Stream Backbone, DDF Modules, DDFNet, Tracker
=================================================================
Model:
  RGB / TIR crops -> per-layer conv blocks (one stack per modality)
                  -> DDF module after each configured layer
                  -> concat(final RGB, final TIR) -> 1x1 projection
                  -> target-state encoding -> Transformer predictor
                  -> target model (scores + dense LTRB)

DDF routes (how a DDF module feeds the streams):
  none        streams untouched
  bypass:A    branch A only, fused map added to both streams
  sum         all six fused maps summed onto both streams
  afm         AFM output added to both streams
  full        AFM, then one EFM per modality

Tracking: square search region of 4x the box area around the previous
estimate, resampled to the input resolution; memory of encoded training
frames keeps the annotated first frame and a FIFO of pseudo-labelled ones.

Change log:
  2026-10-18  Initial implementation
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from aggregation_enhancement import AdaptiveAggregationFusion, LightweightEnhancementFusion
from ddf_config import (
    ATTRIBUTES, AttributeId, BACKBONE_CHANNELS, BACKBONE_STRIDES, BRANCH_UNITS,
    DDF_LAYERS, DDF_ROUTES, INPUT_CHANNELS, INPUT_RESOLUTION, LOST_SCORE_FLOOR,
    MEMORY_CAPACITY, MEMORY_REFRESH_INTERVAL, MIN_BOX_SIZE, PREDICTOR_DECODER_LAYERS,
    PREDICTOR_DIM, PREDICTOR_ENCODER_LAYERS, PREDICTOR_HEADS, SEARCH_AREA_FACTOR,
    USE_POSITIONAL_ENCODING,
)
from ddf_errors import ConfigError, DataError, ShapeError, TrackingError
from dynamic_branch import BranchOutput, DynamicFusionBranch
from fusion_units import check_feature_map, check_same_shape
from geometry import BBox, Trajectory
from target_predictor import (
    TargetModel, TargetModelPredictor, TargetStateEncoder,
    decode_boxes,
)

log = logging.getLogger("ddfnet.tracker_core")


# ============================================================
# CONFIGURATION
# ============================================================

def parse_route(route: str) -> Tuple[str, Optional[AttributeId]]:
    """'bypass:OCC' -> ('bypass', OCC); plain 'bypass' means the GEN branch."""
    kind, _, attr = str(route).partition(":")
    kind = kind.strip().lower()
    if kind not in DDF_ROUTES:
        raise ConfigError(f"unknown DDF route {route!r}; expected one of {DDF_ROUTES}")
    if kind == "bypass":
        return kind, AttributeId.parse(attr or AttributeId.GEN)
    if attr:
        raise ConfigError(f"route {kind!r} takes no attribute, got {route!r}")
    return kind, None


@dataclass
class BackboneConfig:
    channels: Tuple[int, ...] = BACKBONE_CHANNELS
    strides: Tuple[int, ...] = BACKBONE_STRIDES
    input_resolution: int = INPUT_RESOLUTION
    ddf_layers: Tuple[int, ...] = DDF_LAYERS
    branch_units: Tuple[str, ...] = BRANCH_UNITS
    route: str = "full"
    predictor_dim: int = PREDICTOR_DIM
    predictor_heads: int = PREDICTOR_HEADS
    encoder_layers: int = PREDICTOR_ENCODER_LAYERS
    decoder_layers: int = PREDICTOR_DECODER_LAYERS
    use_positional_encoding: bool = USE_POSITIONAL_ENCODING

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.strides = tuple(int(s) for s in self.strides)
        self.ddf_layers = tuple(sorted(int(l) for l in self.ddf_layers))
        self.branch_units = tuple(self.branch_units)
        self.validate()

    def validate(self):
        if not self.channels or any(c <= 0 for c in self.channels):
            raise ConfigError(f"channel counts must be positive, got {self.channels}")
        if len(self.strides) != len(self.channels) or any(s <= 0 for s in self.strides):
            raise ConfigError(f"need one positive stride per layer, got {self.strides}")
        bad = [l for l in self.ddf_layers if not 1 <= l <= len(self.channels)]
        if bad:
            raise ConfigError(f"ddf_layers {bad} outside 1..{len(self.channels)}")
        if self.input_resolution <= 0 or self.input_resolution % self.total_stride:
            raise ConfigError(f"input resolution {self.input_resolution} must be a positive "
                              f"multiple of the total stride {self.total_stride}")
        if self.predictor_dim % self.predictor_heads:
            raise ConfigError(f"predictor_dim {self.predictor_dim} not divisible by "
                              f"{self.predictor_heads} heads")
        if self.use_positional_encoding and self.predictor_dim % 4:
            raise ConfigError("positional encoding needs predictor_dim divisible by 4")
        parse_route(self.route)

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.strides))

    @property
    def feature_size(self) -> int:
        return self.input_resolution // self.total_stride


# ============================================================
# DDF MODULE
# ============================================================

@dataclass
class DDFOutput:
    rgb: torch.Tensor
    tir: torch.Tensor
    branches: Dict[str, BranchOutput] = field(default_factory=dict)
    aggregated: Optional[torch.Tensor] = None
    afm_weights: Optional[torch.Tensor] = None     # (6, B, C) under afm / full


class DDFModule(nn.Module):
    """Six attribute branches + AFM + one EFM per modality."""

    def __init__(self, channels: int, branch_units: Sequence[str] = BRANCH_UNITS):
        super().__init__()
        self.channels = channels
        self.branches = nn.ModuleDict({
            a.value: DynamicFusionBranch(channels, a, units=branch_units) for a in ATTRIBUTES
        })
        self.afm = AdaptiveAggregationFusion(channels, num_branches=len(ATTRIBUTES))
        self.efm_rgb = LightweightEnhancementFusion(channels)
        self.efm_tir = LightweightEnhancementFusion(channels)

    def forward_detailed(self, f_rgb: torch.Tensor, f_tir: torch.Tensor,
                         route: str = "full") -> DDFOutput:
        kind, attr = parse_route(route)
        check_feature_map(f_rgb, self.channels, "DDF RGB input")
        check_feature_map(f_tir, self.channels, "DDF TIR input")
        check_same_shape(f_rgb, f_tir)

        if kind == "none":
            return DDFOutput(rgb=f_rgb, tir=f_tir)
        if kind == "bypass":
            out = self.branches[attr.value](f_rgb, f_tir)
            return DDFOutput(rgb=f_rgb + out.fused, tir=f_tir + out.fused,
                             branches={attr.value: out}, aggregated=out.fused)

        branches = {a.value: self.branches[a.value](f_rgb, f_tir) for a in ATTRIBUTES}
        fused = [branches[a.value].fused for a in ATTRIBUTES]
        if kind == "sum":
            f_ag = torch.stack(fused, dim=0).sum(dim=0)
            return DDFOutput(rgb=f_rgb + f_ag, tir=f_tir + f_ag,
                             branches=branches, aggregated=f_ag)

        weights = self.afm.branch_weights(fused)
        f_ag = (weights[:, :, :, None, None] * torch.stack(fused, dim=0)).sum(dim=0)
        if kind == "afm":
            return DDFOutput(rgb=f_rgb + f_ag, tir=f_tir + f_ag, branches=branches,
                             aggregated=f_ag, afm_weights=weights)
        return DDFOutput(rgb=self.efm_rgb(f_rgb, f_ag), tir=self.efm_tir(f_tir, f_ag),
                         branches=branches, aggregated=f_ag, afm_weights=weights)

    def forward(self, f_rgb: torch.Tensor, f_tir: torch.Tensor,
                route: str = "full") -> Tuple[torch.Tensor, torch.Tensor]:
        out = self.forward_detailed(f_rgb, f_tir, route)
        return out.rgb, out.tir


def ddf_forward(f_rgb: torch.Tensor, f_tir: torch.Tensor, module: DDFModule):
    """Full DDF composition: six branches -> AFM -> per-modality EFM."""
    return module(f_rgb, f_tir, "full")


# ============================================================
# TWO-STREAM BACKBONE
# ============================================================

def _conv_block(in_channels: int, out_channels: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1),
        nn.ReLU(),
        nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
        nn.ReLU(),
    )


@dataclass
class BackboneOutput:
    rgb: torch.Tensor
    tir: torch.Tensor
    layers: List[Tuple[torch.Tensor, torch.Tensor]]   # streams after each layer (post-DDF)
    ddf: Dict[int, DDFOutput]
    ddf_inputs: Dict[int, Tuple[torch.Tensor, torch.Tensor]] = field(default_factory=dict)


class TwoStreamBackbone(nn.Module):
    """Per-modality conv stacks with DDF modules after the configured layers."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        in_ch = (INPUT_CHANNELS,) + config.channels[:-1]
        self.rgb_layers = nn.ModuleList(
            [_conv_block(i, o, s) for i, o, s in zip(in_ch, config.channels, config.strides)])
        self.tir_layers = nn.ModuleList(
            [_conv_block(i, o, s) for i, o, s in zip(in_ch, config.channels, config.strides)])
        self.ddf = nn.ModuleDict({
            str(l): DDFModule(config.channels[l - 1], config.branch_units) for l in config.ddf_layers
        })

    @staticmethod
    def _as_input(img: torch.Tensor, name: str) -> torch.Tensor:
        if img.dim() != 4:
            raise ShapeError(f"{name} must be (B, C, H, W), got {tuple(img.shape)}")
        if img.shape[1] == 1:
            img = img.expand(-1, INPUT_CHANNELS, -1, -1)
        if img.shape[1] != INPUT_CHANNELS:
            raise ShapeError(f"{name} has {img.shape[1]} channels, expected 1 or {INPUT_CHANNELS}")
        return img

    def forward(self, rgb: torch.Tensor, tir: torch.Tensor, route: str = "full") -> BackboneOutput:
        rgb = self._as_input(rgb, "RGB image")
        tir = self._as_input(tir, "TIR image")
        if rgb.shape[0] != tir.shape[0] or rgb.shape[-2:] != tir.shape[-2:]:
            raise ShapeError(f"RGB {tuple(rgb.shape)} and TIR {tuple(tir.shape)} "
                             f"images must share batch and resolution")

        layers, ddf_out, ddf_in = [], {}, {}
        f_rgb, f_tir = rgb, tir
        for idx, (rgb_layer, tir_layer) in enumerate(zip(self.rgb_layers, self.tir_layers), start=1):
            f_rgb, f_tir = rgb_layer(f_rgb), tir_layer(f_tir)
            key = str(idx)
            if key in self.ddf:
                ddf_in[idx] = (f_rgb, f_tir)
                out = self.ddf[key].forward_detailed(f_rgb, f_tir, route)
                ddf_out[idx] = out
                f_rgb, f_tir = out.rgb, out.tir
            layers.append((f_rgb, f_tir))
        return BackboneOutput(rgb=f_rgb, tir=f_tir, layers=layers, ddf=ddf_out, ddf_inputs=ddf_in)


def backbone_forward(rgb_img: torch.Tensor, tir_img: torch.Tensor,
                     backbone: TwoStreamBackbone, route: str = "full") -> BackboneOutput:
    return backbone(rgb_img, tir_img, route)


# ============================================================
# DDFNet
# ============================================================

class DDFNet(nn.Module):
    """Backbone + DDF + joint projection + predictor + target model."""

    def __init__(self, config: BackboneConfig = None):
        super().__init__()
        self.config = config or BackboneConfig()
        cfg = self.config
        self.route = cfg.route
        self.backbone = TwoStreamBackbone(cfg)
        self.joint_proj = nn.Conv2d(2 * cfg.channels[-1], cfg.predictor_dim, kernel_size=1)
        self.state_encoder = TargetStateEncoder(cfg.predictor_dim)
        self.predictor = TargetModelPredictor(
            cfg.predictor_dim, cfg.predictor_heads, cfg.encoder_layers,
            cfg.decoder_layers, use_positional_encoding=cfg.use_positional_encoding,
        )
        self.target_model = TargetModel(cfg.predictor_dim)

    @property
    def stride(self) -> int:
        return self.config.total_stride

    def set_fusion_route(self, route: str):
        parse_route(route)
        self.route = route

    def extract_features(self, rgb: torch.Tensor, tir: torch.Tensor) -> torch.Tensor:
        """Joint predictor input x = proj(concat(f_rgb, f_tir)), (B, D, h, w)."""
        out = self.backbone(rgb, tir, self.route)
        return self.joint_proj(torch.cat([out.rgb, out.tir], dim=1))

    def predict(self, train_encoded: Sequence[torch.Tensor], test_feat: torch.Tensor):
        """Returns (scores, ltrb, weights) for an already-encoded memory."""
        test_encoded = self.state_encoder.encode_test(test_feat)
        weights, z_test = self.predictor(train_encoded, test_encoded)
        scores, ltrb = self.target_model(z_test, weights)
        return scores, ltrb, weights

    def forward(self, train_rgb: Sequence[torch.Tensor], train_tir: Sequence[torch.Tensor],
                train_boxes: Sequence[torch.Tensor], test_rgb: torch.Tensor,
                test_tir: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Training forward. Boxes are (B, 4) crop-pixel tensors, one per train frame.

        Returns (scores (B, h, w), ltrb (B, 4, h, w)) on the test crop.
        """
        if len(train_rgb) == 0:
            raise DataError("training forward needs at least one training frame")
        if not (len(train_rgb) == len(train_tir) == len(train_boxes)):
            raise ShapeError("train_rgb, train_tir and train_boxes must have equal length")
        n = len(train_rgb)
        feats = self.extract_features(torch.cat([*train_rgb, test_rgb], dim=0),
                                      torch.cat([*train_tir, test_tir], dim=0))
        chunks = feats.chunk(n + 1, dim=0)
        encoded = [self.state_encoder.encode_train(f, b / self.stride)
                   for f, b in zip(chunks[:n], train_boxes)]
        scores, ltrb, _ = self.predict(encoded, chunks[n])
        return scores, ltrb

    # --------------------------------------------------------
    # parameter groups
    # --------------------------------------------------------
    @staticmethod
    def group_of(name: str) -> str:
        """Parameter-group name for a state-dict key."""
        parts = name.split(".")
        if parts[0] == "backbone" and parts[1] == "ddf":
            sub = parts[3]
            if sub == "branches":
                return f"branch_{parts[4]}"
            if sub == "afm":
                return "afm"
            return "efm"
        if parts[0] in ("backbone", "joint_proj"):
            return "backbone"
        return "predictor"

    def parameter_groups(self) -> Dict[str, List[Tuple[str, nn.Parameter]]]:
        groups: Dict[str, List[Tuple[str, nn.Parameter]]] = {}
        for name, p in self.named_parameters():
            groups.setdefault(self.group_of(name), []).append((name, p))
        return groups


# ============================================================
# CROPPING
# ============================================================

def search_region(box: BBox, area_factor: float = SEARCH_AREA_FACTOR) -> BBox:
    """Square region centred on the box with area = area_factor * box area."""
    side = math.sqrt(area_factor * max(box.w, 1e-6) * max(box.h, 1e-6))
    cx, cy = box.center
    return BBox.from_center(cx, cy, side, side)


def crop_region(image: torch.Tensor, region: BBox, out_size: int) -> torch.Tensor:
    """Bilinear resample of `region` from (B, C, H, W) images to out_size^2.

    Continuous coordinates: pixel i spans [i, i + 1); outside the frame is zero.
    """
    if image.dim() != 4:
        raise ShapeError(f"crop_region expects (B, C, H, W), got {tuple(image.shape)}")
    b, _, h, w = image.shape
    k = torch.arange(out_size, dtype=image.dtype, device=image.device) + 0.5
    xs = region.x + k * (region.w / out_size)
    ys = region.y + k * (region.h / out_size)
    gx = 2.0 * xs / w - 1.0
    gy = 2.0 * ys / h - 1.0
    grid = torch.stack(torch.meshgrid(gy, gx, indexing="ij")[::-1], dim=-1)
    grid = grid[None].expand(b, -1, -1, -1)
    return F.grid_sample(image, grid, mode="bilinear", padding_mode="zeros", align_corners=False)


def box_to_crop(box: BBox, region: BBox, out_size: int) -> BBox:
    sx, sy = out_size / region.w, out_size / region.h
    return BBox((box.x - region.x) * sx, (box.y - region.y) * sy, box.w * sx, box.h * sy)


def box_from_crop(box: BBox, region: BBox, out_size: int) -> BBox:
    sx, sy = region.w / out_size, region.h / out_size
    return BBox(region.x + box.x * sx, region.y + box.y * sy, box.w * sx, box.h * sy)


def frame_to_tensors(rgb: np.ndarray, tir: np.ndarray, dtype=torch.float32):
    """(H, W, 3) RGB and (H, W) TIR arrays -> (1, 3, H, W) and (1, 1, H, W) tensors."""
    rgb_t = torch.as_tensor(np.ascontiguousarray(rgb), dtype=dtype).permute(2, 0, 1)[None]
    tir_t = torch.as_tensor(np.ascontiguousarray(tir), dtype=dtype)[None, None]
    return rgb_t, tir_t


# ============================================================
# TRACKING
# ============================================================

@dataclass
class TrackingPolicy:
    capacity: int = MEMORY_CAPACITY
    refresh_interval: int = MEMORY_REFRESH_INTERVAL
    lost_score_floor: float = LOST_SCORE_FLOOR
    search_area_factor: float = SEARCH_AREA_FACTOR

    def __post_init__(self):
        if self.capacity < 1 or self.refresh_interval < 1:
            raise ConfigError(f"memory capacity and refresh interval must be >= 1, got "
                              f"{self.capacity}, {self.refresh_interval}")


@dataclass
class MemoryEntry:
    frame_index: int
    features: torch.Tensor     # encoded training map (1, D, h, w)
    box_grid: torch.Tensor     # (1, 4) pseudo-label in feature-grid units


@dataclass
class TrackState:
    box: BBox
    frame_index: int
    memory: List[MemoryEntry] = field(default_factory=list)

    def remember(self, entry: MemoryEntry, capacity: int):
        """First entry is permanent; the rest is a FIFO of capacity - 1 slots."""
        if not self.memory:
            self.memory.append(entry)
            return
        if capacity == 1:
            return
        self.memory.append(entry)
        while len(self.memory) > capacity:
            del self.memory[1]


class Tracker:
    """Online tracker around a (trained) DDFNet."""

    def __init__(self, model: DDFNet, policy: TrackingPolicy = None):
        self.model = model
        self.policy = policy or TrackingPolicy()

    @property
    def _dtype(self):
        return next(self.model.parameters()).dtype

    def _crop_features(self, rgb: torch.Tensor, tir: torch.Tensor, region: BBox) -> torch.Tensor:
        size = self.model.config.input_resolution
        return self.model.extract_features(crop_region(rgb, region, size),
                                           crop_region(tir, region, size))

    def _encode_memory(self, feat: torch.Tensor, box: BBox, region: BBox, frame_index: int) -> MemoryEntry:
        crop_box = box_to_crop(box, region, self.model.config.input_resolution)
        box_grid = torch.tensor([crop_box.as_list()], dtype=feat.dtype) / self.model.stride
        encoded = self.model.state_encoder.encode_train(feat, box_grid)
        return MemoryEntry(frame_index=frame_index, features=encoded, box_grid=box_grid)

    @torch.no_grad()
    def initialize(self, rgb: np.ndarray, tir: np.ndarray, box: BBox) -> TrackState:
        box.validate("initial box")
        self.model.eval()
        rgb_t, tir_t = frame_to_tensors(rgb, tir, self._dtype)
        region = search_region(box, self.policy.search_area_factor)
        feat = self._crop_features(rgb_t, tir_t, region)
        state = TrackState(box=box, frame_index=0)
        state.remember(self._encode_memory(feat, box, region, 0), self.policy.capacity)
        return state

    @torch.no_grad()
    def track(self, state: TrackState, rgb: np.ndarray, tir: np.ndarray) -> Tuple[BBox, int]:
        """Advance one frame. Returns (box, flag) with flag 1 for a lost target."""
        if not state.memory:
            raise TrackingError("track() called on a state with no memory; initialize first")
        self.model.eval()
        size = self.model.config.input_resolution
        frame_h, frame_w = rgb.shape[:2]
        rgb_t, tir_t = frame_to_tensors(rgb, tir, self._dtype)
        region = search_region(state.box, self.policy.search_area_factor)
        feat = self._crop_features(rgb_t, tir_t, region)

        scores, ltrb, _ = self.model.predict([m.features for m in state.memory], feat)
        grid_box, peak = decode_boxes(scores, ltrb)
        state.frame_index += 1

        if float(peak[0]) < self.policy.lost_score_floor or not torch.isfinite(grid_box).all():
            log.debug(f"frame {state.frame_index}: lost (peak {float(peak[0]):.4f})")
            return state.box, 1

        crop_box = BBox.from_list((grid_box[0] * self.model.stride).tolist())
        box = box_from_crop(crop_box, region, size).clip(frame_w, frame_h, MIN_BOX_SIZE)
        state.box = box
        if state.frame_index % self.policy.refresh_interval == 0:
            state.remember(self._encode_memory(feat, box, region, state.frame_index),
                           self.policy.capacity)
        return box, 0


def track_sequence(clip, model: DDFNet, policy: TrackingPolicy = None) -> Trajectory:
    """Track a clip from its first-frame RGB annotation.

    `clip` needs frames_rgb (N, H, W, 3), frames_tir (N, H, W) and gt_rgb.
    """
    n = len(clip.frames_rgb)
    if n == 0 or not clip.gt_rgb:
        raise TrackingError(f"clip {getattr(clip, 'clip_id', '?')} has no frames or first-frame annotation")
    tracker = Tracker(model, policy)
    first = clip.gt_rgb[0]
    state = tracker.initialize(clip.frames_rgb[0], clip.frames_tir[0], first)
    boxes, flags = [first], [0]
    for i in range(1, n):
        box, flag = tracker.track(state, clip.frames_rgb[i], clip.frames_tir[i])
        boxes.append(box)
        flags.append(flag)
    lost = sum(flags)
    if lost:
        log.info(f"{getattr(clip, 'clip_id', 'clip')}: {lost}/{n} frames flagged lost")
    return Trajectory(boxes, flags)
