"""
Synthetic RGB/TIR Clips - Attribute-Conditioned Training Subsets
=================================================================
Deterministic scene generator standing in for attribute subsets of a real
RGBT corpus. Each clip is one moving rectangular target rendered in both
modalities (correlated appearance, small RGB/TIR misalignment) with the
degradation of exactly one attribute applied:

  OCC   occluder over the left `occ_coverage` of the target, frame interval
  LR    block-mean downscale + nearest upscale of both streams
  EI    RGB-only brightness gain alternating between the two extremes
  TC    TIR target intensity ramped toward the local background, interval
  SA    distractors with the target's size and appearance in both streams
  GEN   nothing

Every applied transform is recorded per frame in `metadata`; a frame with
no degradation has an empty dict. Clips regenerate bit-identically from
(attribute, clip_id, seed, SceneConfig).

Storage: <dir>/index.json + one folder per clip with manifest.json and
either frames.npz (exact) or per-frame PNGs (8-bit).

Change log:
  2026-10-18  Initial implementation
"""

import hashlib
import json
import logging
import os
import zlib
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from scipy.ndimage import gaussian_filter

from ddf_config import (
    ALIGNMENT_JITTER, ATTRIBUTES, AttributeId, EI_GAIN_RANGE, FRAME_FORMATS,
    LR_FACTOR, MAX_SPEED, OCC_COVERAGE, OCC_INTERVAL, SA_DISTRACTORS,
    SCENE_CANVAS, SCENE_FRAMES, TARGET_SIZE_RANGE, TC_INTERVAL, TC_STRENGTH,
)
from ddf_errors import ConfigError, DataError
from geometry import BBox, intersection_area

log = logging.getLogger("ddfnet.synthetic_data")

INDEX_FILE = "index.json"
CLIP_MANIFEST_FILE = "manifest.json"

# Metadata key each degradation writes; GEN writes none
DEGRADATION_KEYS = {
    AttributeId.OCC: "occluder",
    AttributeId.LR: "lr_factor",
    AttributeId.EI: "rgb_gain",
    AttributeId.TC: "tc_alpha",
    AttributeId.SA: "distractors",
}


# ============================================================
# SCENE CONFIG
# ============================================================

@dataclass
class SceneConfig:
    canvas: int = SCENE_CANVAS
    frames: int = SCENE_FRAMES
    target_size_range: Tuple[float, float] = TARGET_SIZE_RANGE
    max_speed: float = MAX_SPEED
    alignment_jitter: float = ALIGNMENT_JITTER
    noise: float = 0.01
    tir_blur: float = 0.7
    occ_coverage: float = OCC_COVERAGE
    occ_interval: Tuple[float, float] = OCC_INTERVAL
    lr_factor: int = LR_FACTOR
    ei_gain_range: Tuple[float, float] = EI_GAIN_RANGE
    tc_strength: float = TC_STRENGTH
    tc_interval: Tuple[float, float] = TC_INTERVAL
    sa_distractors: int = SA_DISTRACTORS

    def __post_init__(self):
        self.target_size_range = tuple(float(v) for v in self.target_size_range)
        self.occ_interval = tuple(float(v) for v in self.occ_interval)
        self.ei_gain_range = tuple(float(v) for v in self.ei_gain_range)
        self.tc_interval = tuple(float(v) for v in self.tc_interval)
        self.validate()

    def validate(self):
        problems = []
        lo, hi = self.target_size_range
        if self.canvas < 16:
            problems.append(f"canvas {self.canvas} < 16")
        if self.frames < 1:
            problems.append(f"frames {self.frames} < 1")
        if not 2 <= lo <= hi <= self.canvas / 2:
            problems.append(f"target_size_range {self.target_size_range} outside [2, canvas/2]")
        if self.max_speed < 0 or self.alignment_jitter < 0 or self.noise < 0 or self.tir_blur < 0:
            problems.append("max_speed, alignment_jitter, noise and tir_blur must be >= 0")
        if not 0 < self.occ_coverage <= 1:
            problems.append(f"occ_coverage {self.occ_coverage} outside (0, 1]")
        for name in ("occ_interval", "tc_interval"):
            a, b = getattr(self, name)
            if not 0 <= a < b <= 1:
                problems.append(f"{name} {(a, b)} must satisfy 0 <= start < end <= 1")
        if self.lr_factor < 1 or self.canvas % self.lr_factor:
            problems.append(f"lr_factor {self.lr_factor} must be >= 1 and divide canvas {self.canvas}")
        g_lo, g_hi = self.ei_gain_range
        if not 0 < g_lo <= 1 <= g_hi:
            problems.append(f"ei_gain_range {self.ei_gain_range} must bracket 1 with a positive low end")
        if not 0 <= self.tc_strength <= 1:
            problems.append(f"tc_strength {self.tc_strength} outside [0, 1]")
        if self.sa_distractors < 0:
            problems.append(f"sa_distractors {self.sa_distractors} < 0")
        if problems:
            raise ConfigError("invalid scene config: " + "; ".join(problems))

    def as_dict(self) -> Dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SceneConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scene config keys {sorted(unknown)}")
        return cls(**d)


# ============================================================
# CLIP MANIFEST
# ============================================================

@dataclass
class ClipManifest:
    clip_id: str
    attribute: AttributeId
    seed: int
    frames_rgb: np.ndarray            # (N, H, W, 3) float32 in [0, 1]
    frames_tir: np.ndarray            # (N, H, W) float32 in [0, 1]
    gt_rgb: List[BBox]
    gt_tir: List[BBox]
    metadata: List[Dict] = field(default_factory=list)

    def __post_init__(self):
        self.attribute = AttributeId.parse(self.attribute)
        n = len(self.frames_rgb)
        if not (len(self.frames_tir) == len(self.gt_rgb) == len(self.gt_tir) == len(self.metadata) == n):
            raise DataError(f"clip {self.clip_id}: frame, gt and metadata lengths differ")

    def __len__(self) -> int:
        return len(self.frames_rgb)

    def degradation_entries(self) -> int:
        return sum(1 for m in self.metadata if m)

    def header(self) -> Dict:
        return {
            "clip_id": self.clip_id,
            "attribute": self.attribute.value,
            "seed": int(self.seed),
            "n_frames": len(self),
            "gt_rgb": [b.as_list() for b in self.gt_rgb],
            "gt_tir": [b.as_list() for b in self.gt_tir],
            "metadata": self.metadata,
        }

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.frames_rgb).tobytes())
        h.update(np.ascontiguousarray(self.frames_tir).tobytes())
        h.update(json.dumps(self.header(), sort_keys=True).encode())
        return h.hexdigest()


# ============================================================
# RENDERING HELPERS
# ============================================================

def _coverage(box: BBox, height: int, width: int) -> np.ndarray:
    """Fraction of each pixel [i, i+1) x [j, j+1) covered by the box."""
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    mx = np.clip(np.minimum(box.x + box.w, cols + 1) - np.maximum(box.x, cols), 0.0, 1.0)
    my = np.clip(np.minimum(box.y + box.h, rows + 1) - np.maximum(box.y, rows), 0.0, 1.0)
    return np.outer(my, mx)


def _paint(img: np.ndarray, box: BBox, value) -> np.ndarray:
    m = _coverage(box, img.shape[0], img.shape[1])
    if img.ndim == 3:
        m = m[:, :, None]
    return img * (1.0 - m) + np.asarray(value, dtype=np.float64) * m


def _inner(box: BBox) -> BBox:
    return BBox.from_center(*box.center, box.w / 2.0, box.h / 2.0)


def _smooth_field(rng: np.random.Generator, shape, sigma: float, lo: float, hi: float) -> np.ndarray:
    field_ = gaussian_filter(rng.normal(size=shape), sigma=sigma, mode="wrap")
    span = field_.max() - field_.min()
    field_ = (field_ - field_.min()) / (span if span > 0 else 1.0)
    return lo + (hi - lo) * field_


def _interval(bounds: Tuple[float, float], n: int) -> Tuple[int, int]:
    t0 = min(int(round(bounds[0] * n)), n - 1)
    t1 = min(max(t0 + 1, int(round(bounds[1] * n))), n)
    return t0, t1


def _trajectory(rng: np.random.Generator, cfg: SceneConfig, w: float, h: float, n: int) -> List[BBox]:
    """Constant-velocity motion bouncing off the canvas edges."""
    c = cfg.canvas
    cx = rng.uniform(w / 2 + 1, c - w / 2 - 1)
    cy = rng.uniform(h / 2 + 1, c - h / 2 - 1)
    angle = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(0.3, 1.0) * cfg.max_speed
    vx, vy = speed * np.cos(angle), speed * np.sin(angle)
    boxes = []
    for _ in range(n):
        boxes.append(BBox.from_center(float(cx), float(cy), w, h))
        cx, cy = cx + vx, cy + vy
        if cx - w / 2 < 0 or cx + w / 2 > c:
            vx = -vx
            cx = float(np.clip(cx, w / 2, c - w / 2))
        if cy - h / 2 < 0 or cy + h / 2 > c:
            vy = -vy
            cy = float(np.clip(cy, h / 2, c - h / 2))
    return boxes


def _block_resample(img: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downscale by `factor`, then nearest upscale back."""
    if factor == 1:
        return img
    hh, ww = img.shape[0] // factor, img.shape[1] // factor
    small = img.reshape(hh, factor, ww, factor, *img.shape[2:]).mean(axis=(1, 3))
    return np.repeat(np.repeat(small, factor, axis=0), factor, axis=1)


# ============================================================
# GENERATE CLIP
# ============================================================

def clip_rng(seed: int, clip_id: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(clip_id.encode("utf-8"))])


def generate_clip(attribute, seed: int, config: SceneConfig = None,
                  clip_id: Optional[str] = None) -> ClipManifest:
    """Render one clip carrying exactly `attribute`'s degradation."""
    attr = AttributeId.parse(attribute)
    cfg = config or SceneConfig()
    cfg.validate()
    clip_id = clip_id or f"{attr.value.lower()}_000"
    rng = clip_rng(seed, clip_id)
    c, n = cfg.canvas, cfg.frames

    # appearance: one colour / one thermal level per clip, correlated via the same shape
    size_lo, size_hi = cfg.target_size_range
    w, h = float(rng.uniform(size_lo, size_hi)), float(rng.uniform(size_lo, size_hi))
    color = rng.uniform(0.55, 0.95, size=3)
    inner_color = 1.0 - 0.6 * color
    tir_level = float(rng.uniform(0.75, 0.95))
    bg_rgb = _smooth_field(rng, (c, c, 3), sigma=(4, 4, 0), lo=0.2, hi=0.5)
    bg_tir = _smooth_field(rng, (c, c), sigma=6, lo=0.1, hi=0.35)
    offset = rng.uniform(-1, 1, size=2) * cfg.alignment_jitter / np.sqrt(2)

    gt_rgb = _trajectory(rng, cfg, w, h, n)
    gt_tir = [BBox(b.x + float(offset[0]), b.y + float(offset[1]), b.w, b.h) for b in gt_rgb]

    distractors: List[List[BBox]] = []
    if attr is AttributeId.SA:
        distractors = [_trajectory(rng, cfg, w, h, n) for _ in range(cfg.sa_distractors)]
    occ_t0, occ_t1 = _interval(cfg.occ_interval, n)
    tc_t0, tc_t1 = _interval(cfg.tc_interval, n)
    ei_phase = int(rng.integers(0, 2))
    ei_period = max(1, n // 4)

    frames_rgb = np.empty((n, c, c, 3), dtype=np.float32)
    frames_tir = np.empty((n, c, c), dtype=np.float32)
    metadata: List[Dict] = []

    for t in range(n):
        meta: Dict = {}
        box_rgb, box_tir = gt_rgb[t], gt_tir[t]
        rgb = bg_rgb.copy()
        tir = bg_tir.copy()

        if attr is AttributeId.SA:
            for track in distractors:
                rgb = _paint(_paint(rgb, track[t], color), _inner(track[t]), inner_color)
                tir = _paint(_paint(tir, track[t], tir_level), _inner(track[t]), min(tir_level + 0.05, 1.0))
            meta["distractors"] = [track[t].as_list() for track in distractors]

        level, inner_level = tir_level, min(tir_level + 0.05, 1.0)
        if attr is AttributeId.TC and tc_t0 <= t < tc_t1:
            alpha = cfg.tc_strength * (t - tc_t0 + 1) / (tc_t1 - tc_t0)
            m = _coverage(box_tir, c, c)
            local_bg = float((bg_tir * m).sum() / max(m.sum(), 1e-9))
            level = (1.0 - alpha) * tir_level + alpha * local_bg
            inner_level = (1.0 - alpha) * inner_level + alpha * local_bg
            meta["tc_alpha"] = float(alpha)

        rgb = _paint(_paint(rgb, box_rgb, color), _inner(box_rgb), inner_color)
        tir = _paint(_paint(tir, box_tir, level), _inner(box_tir), inner_level)

        if attr is AttributeId.OCC and occ_t0 <= t < occ_t1:
            # one pixel of margin around the covered part keeps the overlap above coverage
            occ = BBox(box_rgb.x - 1.0, box_rgb.y - 1.0,
                       cfg.occ_coverage * box_rgb.w + 1.5, box_rgb.h + 2.0)
            rgb = _paint(rgb, occ, (0.45, 0.42, 0.38))
            tir = _paint(tir, occ, 0.15)
            meta["occluder"] = occ.as_list()
            meta["coverage"] = cfg.occ_coverage

        if cfg.tir_blur > 0:
            tir = gaussian_filter(tir, sigma=cfg.tir_blur)
        if cfg.noise > 0:
            rgb = rgb + rng.normal(0, cfg.noise, size=rgb.shape)
            tir = tir + rng.normal(0, cfg.noise, size=tir.shape)

        if attr is AttributeId.EI:
            lo, hi = cfg.ei_gain_range
            gain = lo if ((t // ei_period) + ei_phase) % 2 == 0 else hi
            rgb = rgb * gain
            meta["rgb_gain"] = float(gain)

        if attr is AttributeId.LR:
            rgb = _block_resample(rgb, cfg.lr_factor)
            tir = _block_resample(tir, cfg.lr_factor)
            meta["lr_factor"] = int(cfg.lr_factor)

        frames_rgb[t] = np.clip(rgb, 0.0, 1.0)
        frames_tir[t] = np.clip(tir, 0.0, 1.0)
        metadata.append(meta)

    return ClipManifest(clip_id=clip_id, attribute=attr, seed=int(seed),
                        frames_rgb=frames_rgb, frames_tir=frames_tir,
                        gt_rgb=gt_rgb, gt_tir=gt_tir, metadata=metadata)


# ============================================================
# AUDIT
# ============================================================

def audit_clip(clip: ClipManifest, config: SceneConfig = None,
               expected_attribute=None) -> List[str]:
    """List of problems found by recomputing the clip's contract from metadata."""
    cfg = config or SceneConfig()
    problems = []
    attr = clip.attribute
    if expected_attribute is not None and attr is not AttributeId.parse(expected_attribute):
        problems.append(f"{clip.clip_id}: tag {attr.value} under subset {expected_attribute}")

    own_key = DEGRADATION_KEYS.get(attr)
    foreign = {k for a, k in DEGRADATION_KEYS.items() if a is not attr}
    for t, meta in enumerate(clip.metadata):
        if foreign & set(meta):
            problems.append(f"{clip.clip_id}[{t}]: foreign degradation {sorted(foreign & set(meta))}")
        if attr is AttributeId.GEN and meta:
            problems.append(f"{clip.clip_id}[{t}]: GEN clip carries metadata")
        if attr is AttributeId.OCC and "occluder" in meta:
            target = clip.gt_rgb[t]
            ratio = intersection_area(BBox.from_list(meta["occluder"]), target) / target.area
            if ratio < meta["coverage"]:
                problems.append(f"{clip.clip_id}[{t}]: occluder covers {ratio:.3f} < {meta['coverage']}")

    if own_key and not any(own_key in m for m in clip.metadata):
        problems.append(f"{clip.clip_id}: no {own_key} metadata for {attr.value}")

    for t, (a, b) in enumerate(zip(clip.gt_rgb, clip.gt_tir)):
        d = np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
        if d > cfg.alignment_jitter + 1e-9:
            problems.append(f"{clip.clip_id}[{t}]: RGB/TIR centres {d:.3f} px apart")
    return problems


# ============================================================
# MANIFEST INDEX
# ============================================================

@dataclass
class ManifestIndex:
    """Attribute subsets (clip ids) plus an 'all' split that is their union."""

    seed: int
    scene: Dict
    subsets: Dict[str, List[str]]
    frame_format: str = "npz"
    root: Optional[str] = None
    clips: Dict[str, ClipManifest] = field(default_factory=dict, repr=False)

    @property
    def all(self) -> List[str]:
        return [cid for a in ATTRIBUTES for cid in self.subsets.get(a.value, [])]

    def split(self, name: str) -> List[str]:
        if str(name).lower() == "all":
            return self.all
        key = AttributeId.parse(name).value
        if key not in self.subsets:
            raise DataError(f"split {name!r} not present in the manifest index")
        return list(self.subsets[key])

    def attribute_of(self, clip_id: str) -> AttributeId:
        for key, ids in self.subsets.items():
            if clip_id in ids:
                return AttributeId.parse(key)
        raise DataError(f"clip {clip_id!r} is not tagged in the manifest index")

    def clip(self, clip_id: str) -> ClipManifest:
        if clip_id not in self.clips:
            if self.root is None:
                raise DataError(f"clip {clip_id!r} not loaded and index has no root directory")
            self.clips[clip_id] = load_clip(os.path.join(self.root, clip_id))
        return self.clips[clip_id]

    def load_split(self, name: str) -> List[ClipManifest]:
        return [self.clip(cid) for cid in self.split(name)]

    def to_dict(self) -> Dict:
        return {
            "seed": int(self.seed),
            "scene": self.scene,
            "frame_format": self.frame_format,
            "subsets": {k: list(v) for k, v in self.subsets.items()},
            "all": self.all,
            "clip_digests": {cid: c.digest() for cid, c in sorted(self.clips.items())},
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def write(self, out_dir: str, frame_format: Optional[str] = None) -> str:
        """Write index.json and every loaded clip under out_dir."""
        if frame_format is not None:
            self.frame_format = frame_format
        os.makedirs(out_dir, exist_ok=True)
        for cid in self.all:
            save_clip(self.clip(cid), out_dir, self.frame_format)
        path = os.path.join(out_dir, INDEX_FILE)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        self.root = out_dir
        log.info(f"manifest index with {len(self.all)} clips written to {out_dir}")
        return path

    @classmethod
    def read(cls, path: str) -> "ManifestIndex":
        if os.path.isdir(path):
            path = os.path.join(path, INDEX_FILE)
        if not os.path.exists(path):
            raise DataError(f"manifest index not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            d = json.load(f)
        return cls(seed=d["seed"], scene=d["scene"], subsets=d["subsets"],
                   frame_format=d.get("frame_format", "npz"), root=os.path.dirname(path))


def make_attribute_subsets(config: SceneConfig = None,
                           counts: Union[int, Mapping] = 1, seed: int = 0) -> ManifestIndex:
    """Generate disjoint per-attribute subsets.

    `counts` is one count for every attribute or a mapping attribute -> count;
    attributes missing from the mapping get no subset.
    """
    cfg = config or SceneConfig()
    if isinstance(counts, Mapping):
        wanted = {AttributeId.parse(k): int(v) for k, v in counts.items()}
    else:
        wanted = {a: int(counts) for a in ATTRIBUTES}
    bad = {a.value: k for a, k in wanted.items() if k < 1}
    if bad:
        raise ConfigError(f"subset counts must be >= 1, got {bad}")

    subsets, clips = {}, {}
    for attr in ATTRIBUTES:
        if attr not in wanted:
            continue
        ids = [f"{attr.value.lower()}_{k:03d}" for k in range(wanted[attr])]
        for cid in ids:
            clips[cid] = generate_clip(attr, seed, cfg, clip_id=cid)
        subsets[attr.value] = ids
    return ManifestIndex(seed=int(seed), scene=cfg.as_dict(), subsets=subsets, clips=clips)


def audit_index(index: ManifestIndex) -> List[str]:
    cfg = SceneConfig.from_dict(index.scene)
    problems = []
    seen = set()
    for key, ids in index.subsets.items():
        for cid in ids:
            if cid in seen:
                problems.append(f"{cid}: listed in more than one subset")
            seen.add(cid)
            problems.extend(audit_clip(index.clip(cid), cfg, expected_attribute=key))
    return problems


# ============================================================
# CLIP STORAGE
# ============================================================

def save_clip(clip: ClipManifest, out_dir: str, frame_format: str = "npz") -> str:
    if frame_format not in FRAME_FORMATS:
        raise ConfigError(f"unknown frame format {frame_format!r}; expected one of {FRAME_FORMATS}")
    clip_dir = os.path.join(out_dir, clip.clip_id)
    os.makedirs(clip_dir, exist_ok=True)
    if frame_format == "npz":
        np.savez_compressed(os.path.join(clip_dir, "frames.npz"),
                            rgb=clip.frames_rgb, tir=clip.frames_tir)
    else:
        for t in range(len(clip)):
            plt.imsave(os.path.join(clip_dir, f"rgb_{t:04d}.png"), clip.frames_rgb[t])
            plt.imsave(os.path.join(clip_dir, f"tir_{t:04d}.png"), clip.frames_tir[t],
                       cmap="gray", vmin=0.0, vmax=1.0)
    header = clip.header()
    header["frame_format"] = frame_format
    with open(os.path.join(clip_dir, CLIP_MANIFEST_FILE), "w", encoding="utf-8") as f:
        json.dump(header, f, indent=1)
    return clip_dir


def load_clip(clip_dir: str) -> ClipManifest:
    path = os.path.join(clip_dir, CLIP_MANIFEST_FILE)
    if not os.path.exists(path):
        raise DataError(f"clip manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        header = json.load(f)
    n = header["n_frames"]
    if header.get("frame_format", "npz") == "npz":
        with np.load(os.path.join(clip_dir, "frames.npz")) as data:
            rgb, tir = data["rgb"], data["tir"]
    else:
        rgb = np.stack([plt.imread(os.path.join(clip_dir, f"rgb_{t:04d}.png"))[..., :3]
                        for t in range(n)]).astype(np.float32)
        tir = np.stack([plt.imread(os.path.join(clip_dir, f"tir_{t:04d}.png"))[..., 0]
                        for t in range(n)]).astype(np.float32)
    return ClipManifest(
        clip_id=header["clip_id"], attribute=header["attribute"], seed=header["seed"],
        frames_rgb=rgb, frames_tir=tir,
        gt_rgb=[BBox.from_list(b) for b in header["gt_rgb"]],
        gt_tir=[BBox.from_list(b) for b in header["gt_tir"]],
        metadata=header["metadata"],
    )
