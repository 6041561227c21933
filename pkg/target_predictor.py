"""
Target Model Predictor - Encoding, Transformer Predictor, Target Model
=======================================================================
Desk-scale version of a "predict the target model" tracking head:

  1. encode_train / encode_test : add the target state to the features
       train:  v = x + gauss * fg_token + proj(ltrb * inside)
       test:   v = x + test_token
  2. TargetModelPredictor       : train and test tokens processed jointly
       by a Transformer encoder; one learned query attends over the
       encoder output and a linear head splits it into (w_cls, w_bbreg)
  3. TargetModel                : scores = <w_cls, z_test> per location,
       ltrb = exp(head(z_test * w_bbreg)), 4 nonnegative channels

All boxes here are in feature-grid units: cell (i, j) has its centre at
(j + 0.5, i + 0.5), i.e. crop pixels divided by the total backbone stride.

Change log:
  2026-10-18  Initial implementation
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from ddf_config import (
    CLS_LOSS_WEIGHT, GAUSSIAN_SIGMA_FACTOR, LTRB_LOGIT_CLAMP,
    PREDICTOR_DECODER_LAYERS, PREDICTOR_ENCODER_LAYERS, PREDICTOR_FFN_MULT,
    PREDICTOR_HEADS, REG_LOSS_WEIGHT, USE_POSITIONAL_ENCODING,
)
from ddf_errors import DataError, ShapeError
from fusion_units import check_feature_map

log = logging.getLogger("ddfnet.target_predictor")


@dataclass
class TargetModelWeights:
    w_cls: torch.Tensor      # (B, C)
    w_bbreg: torch.Tensor    # (B, C)


# ============================================================
# TARGET STATE LABELS (feature-grid units)
# ============================================================

def _check_boxes(boxes: torch.Tensor):
    if boxes.dim() != 2 or boxes.shape[1] != 4:
        raise ShapeError(f"boxes must be (B, 4), got {tuple(boxes.shape)}")
    if not torch.isfinite(boxes).all() or (boxes[:, 2] <= 0).any() or (boxes[:, 3] <= 0).any():
        raise DataError(f"degenerate target box in {boxes.tolist()}")


def _grid(height: int, width: int, like: torch.Tensor):
    ys = torch.arange(height, dtype=like.dtype, device=like.device) + 0.5
    xs = torch.arange(width, dtype=like.dtype, device=like.device) + 0.5
    return ys[None, :, None], xs[None, None, :]


def gaussian_label(boxes: torch.Tensor, height: int, width: int,
                   sigma_factor: float = GAUSSIAN_SIGMA_FACTOR) -> torch.Tensor:
    """(B, H, W) Gaussian centred on each box, peak 1, sigma = factor * diagonal."""
    _check_boxes(boxes)
    ys, xs = _grid(height, width, boxes)
    cx = (boxes[:, 0] + boxes[:, 2] / 2)[:, None, None]
    cy = (boxes[:, 1] + boxes[:, 3] / 2)[:, None, None]
    sigma = sigma_factor * torch.sqrt(boxes[:, 2] ** 2 + boxes[:, 3] ** 2)[:, None, None]
    return torch.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))


def ltrb_map(boxes: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """(B, 4, H, W) distances from each cell centre to the left/top/right/bottom edges."""
    _check_boxes(boxes)
    ys, xs = _grid(height, width, boxes)
    x0 = boxes[:, 0, None, None]
    y0 = boxes[:, 1, None, None]
    x1 = x0 + boxes[:, 2, None, None]
    y1 = y0 + boxes[:, 3, None, None]
    ones = torch.ones(boxes.shape[0], height, width, dtype=boxes.dtype, device=boxes.device)
    return torch.stack([
        (xs - x0) * ones, (ys - y0) * ones, (x1 - xs) * ones, (y1 - ys) * ones,
    ], dim=1)


def inside_mask(boxes: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """(B, H, W) 1.0 where the cell centre lies strictly inside the box."""
    return (ltrb_map(boxes, height, width) > 0).all(dim=1).to(boxes.dtype)


def sinusoidal_position_encoding(dim: int, height: int, width: int,
                                 dtype=torch.float32, device=None) -> torch.Tensor:
    """(dim, H, W) 2-D sinusoidal encoding: first half rows, second half columns."""
    if dim % 4 != 0:
        raise ShapeError(f"positional encoding needs dim divisible by 4, got {dim}")
    quarter = dim // 4
    freq = torch.exp(-math.log(10000.0) * torch.arange(quarter, dtype=dtype, device=device) / quarter)
    ys = torch.arange(height, dtype=dtype, device=device)[:, None] * freq[None, :]
    xs = torch.arange(width, dtype=dtype, device=device)[:, None] * freq[None, :]
    pe_y = torch.cat([ys.sin(), ys.cos()], dim=1)            # (H, dim/2)
    pe_x = torch.cat([xs.sin(), xs.cos()], dim=1)            # (W, dim/2)
    pe = torch.cat([
        pe_y[:, None, :].expand(height, width, dim // 2),
        pe_x[None, :, :].expand(height, width, dim // 2),
    ], dim=2)
    return pe.permute(2, 0, 1).contiguous()


# ============================================================
# TARGET STATE ENCODER
# ============================================================

class TargetStateEncoder(nn.Module):
    """Adds the target state (score + dense box embedding) onto features."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.fg_token = nn.Parameter(0.1 * torch.randn(dim))
        self.test_token = nn.Parameter(0.1 * torch.randn(dim))
        self.ltrb_proj = nn.Conv2d(4, dim, kernel_size=1)

    def encode_train(self, x: torch.Tensor, boxes: torch.Tensor) -> torch.Tensor:
        check_feature_map(x, self.dim, "training features")
        _, _, h, w = x.shape
        gauss = gaussian_label(boxes, h, w)
        dense = ltrb_map(boxes, h, w) * inside_mask(boxes, h, w)[:, None]
        return x + gauss[:, None] * self.fg_token[None, :, None, None] + self.ltrb_proj(dense)

    def encode_test(self, x: torch.Tensor) -> torch.Tensor:
        check_feature_map(x, self.dim, "test features")
        return x + self.test_token[None, :, None, None]


def encode_target_state(x: torch.Tensor, boxes: torch.Tensor, encoder: TargetStateEncoder) -> torch.Tensor:
    """Functional entry point: encode a training map with its target box."""
    return encoder.encode_train(x, boxes)


# ============================================================
# TRANSFORMER PREDICTOR
# ============================================================

class QueryDecoderLayer(nn.Module):
    """Cross-attention from the target query to the encoder tokens, then FFN."""

    def __init__(self, dim: int, heads: int, ffn_mult: int = PREDICTOR_FFN_MULT):
        super().__init__()
        self.cross_attn = nn.MultiheadAttention(dim, heads, dropout=0.0, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, dim * ffn_mult),
            nn.ReLU(),
            nn.Linear(dim * ffn_mult, dim),
        )
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, query: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        attn, _ = self.cross_attn(query, memory, memory, need_weights=False)
        h = self.norm1(query + attn)
        return self.norm2(h + self.ffn(h))


class TargetModelPredictor(nn.Module):
    """Joint encoder over train + test tokens, query decoder, weight head."""

    def __init__(self, dim: int, heads: int = PREDICTOR_HEADS,
                 encoder_layers: int = PREDICTOR_ENCODER_LAYERS,
                 decoder_layers: int = PREDICTOR_DECODER_LAYERS,
                 ffn_mult: int = PREDICTOR_FFN_MULT,
                 use_positional_encoding: bool = USE_POSITIONAL_ENCODING):
        super().__init__()
        self.dim = dim
        self.use_positional_encoding = use_positional_encoding
        if encoder_layers > 0:
            layer = nn.TransformerEncoderLayer(
                d_model=dim, nhead=heads, dim_feedforward=dim * ffn_mult,
                dropout=0.0, batch_first=True,
            )
            self.encoder = nn.TransformerEncoder(layer, num_layers=encoder_layers,
                                                 enable_nested_tensor=False)
        else:
            self.encoder = None
        self.query = nn.Parameter(0.1 * torch.randn(1, 1, dim))
        self.decoder = nn.ModuleList(
            [QueryDecoderLayer(dim, heads, ffn_mult) for _ in range(decoder_layers)])
        self.head = nn.Linear(dim, 2 * dim)

    def _tokens(self, v: torch.Tensor) -> torch.Tensor:
        if self.use_positional_encoding:
            _, c, h, w = v.shape
            v = v + sinusoidal_position_encoding(c, h, w, v.dtype, v.device)[None]
        return v.flatten(2).transpose(1, 2)          # (B, HW, C)

    def predict_raw(self, train_feats: Sequence[torch.Tensor],
                    test_feat: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns (w_t of shape (B, C), encoded test tokens (B, HW, C))."""
        if len(train_feats) == 0:
            raise DataError("target model predictor needs at least one training frame")
        check_feature_map(test_feat, self.dim, "test features")
        for f in train_feats:
            check_feature_map(f, self.dim, "training features")

        tokens = [self._tokens(f) for f in train_feats] + [self._tokens(test_feat)]
        n_test = tokens[-1].shape[1]
        memory = torch.cat(tokens, dim=1)
        if self.encoder is not None:
            memory = self.encoder(memory)

        q = self.query.expand(memory.shape[0], -1, -1)
        for layer in self.decoder:
            q = layer(q, memory)
        return q[:, 0], memory[:, -n_test:]

    def forward(self, train_feats: Sequence[torch.Tensor],
                test_feat: torch.Tensor) -> Tuple[TargetModelWeights, torch.Tensor]:
        """Returns (weights, encoded test map (B, C, H, W))."""
        w_t, z_test = self.predict_raw(train_feats, test_feat)
        w_cls, w_bbreg = self.head(w_t).split(self.dim, dim=1)
        b, c, h, w = test_feat.shape
        z_map = z_test.transpose(1, 2).reshape(b, c, h, w)
        return TargetModelWeights(w_cls=w_cls, w_bbreg=w_bbreg), z_map


# ============================================================
# TARGET MODEL
# ============================================================

class TargetModel(nn.Module):
    """Classification by inner product, dense LTRB regression by a conv head."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.bbreg_head = nn.Sequential(
            nn.Conv2d(dim, dim, kernel_size=1),
            nn.ReLU(),
            nn.Conv2d(dim, 4, kernel_size=1),
        )

    def forward(self, test_feat: torch.Tensor, weights: TargetModelWeights):
        """Returns (scores (B, H, W), ltrb (B, 4, H, W))."""
        check_feature_map(test_feat, self.dim, "target model input")
        if weights.w_cls.shape != test_feat.shape[:2] or weights.w_bbreg.shape != test_feat.shape[:2]:
            raise ShapeError(f"target model weights {tuple(weights.w_cls.shape)} do not match "
                             f"features {tuple(test_feat.shape)}")
        scores = torch.einsum("bchw,bc->bhw", test_feat, weights.w_cls)
        logits = self.bbreg_head(test_feat * weights.w_bbreg[:, :, None, None])
        ltrb = torch.exp(torch.clamp(logits, max=LTRB_LOGIT_CLAMP))
        return scores, ltrb


def target_model_apply(test_feat: torch.Tensor, weights: TargetModelWeights, model: TargetModel):
    return model(test_feat, weights)


# ============================================================
# LOSSES & DECODING
# ============================================================

def tracking_loss(scores: torch.Tensor, ltrb: torch.Tensor, boxes: torch.Tensor):
    """MSE on scores vs Gaussian label + L1 on LTRB inside the box, 1:1.

    Returns (total, cls_loss, reg_loss).
    """
    _, h, w = scores.shape
    label = gaussian_label(boxes, h, w)
    target = ltrb_map(boxes, h, w)
    mask = inside_mask(boxes, h, w)
    cls_loss = F.mse_loss(scores, label)
    reg = (ltrb - target).abs().sum(dim=1) * mask
    reg_loss = reg.sum() / (4.0 * mask.sum().clamp(min=1.0))
    total = CLS_LOSS_WEIGHT * cls_loss + REG_LOSS_WEIGHT * reg_loss
    return total, cls_loss, reg_loss


def decode_boxes(scores: torch.Tensor, ltrb: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Box at the score argmax, in feature-grid units.

    Returns (boxes (B, 4) as x, y, w, h; peak scores (B,)).
    """
    b, h, w = scores.shape
    flat = scores.reshape(b, -1)
    peak, idx = flat.max(dim=1)
    rows = (idx // w).to(scores.dtype)
    cols = (idx % w).to(scores.dtype)
    d = ltrb.reshape(b, 4, -1).gather(2, idx[:, None, None].expand(b, 4, 1))[:, :, 0]
    cx = cols + 0.5
    cy = rows + 0.5
    boxes = torch.stack([cx - d[:, 0], cy - d[:, 1], d[:, 0] + d[:, 2], d[:, 1] + d[:, 3]], dim=1)
    return boxes, peak
