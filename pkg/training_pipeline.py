"""
Training Pipeline - Staged Training with Freezing and Checkpoint Lineage
=========================================================================
Stages (each refuses to run without the lineage it needs):

  0        warmup of backbone + predictor on GEN clips, plain two-stream
           route; stands in for pretrained initialization
  1-GEN    GEN branch 1e-5, backbone + predictor 5e-6, route bypass:GEN,
           AFM / EFM absent; saves backbone, predictor, branch_GEN
  1-ATTR:k branch k only at 1e-5 on attribute-k clips, route bypass:k;
           saves branch k into the cumulative checkpoint
  2        AFM re-initialized and trained at 1e-5, route afm; saves all
  3        EFM initialized fresh at 1e-5, everything else 1e-6, route full

AdamW with weight decay 1e-4. Frozen groups get requires_grad=False and
are never handed to the optimizer, so they get no state and no decay.
Freeze soundness is checked with per-group SHA-256 hashes.

Usage:
    from training_pipeline import StageConfig, build_model, run_stage

    model = build_model(BackboneConfig(), seed=0)
    cfg = StageConfig.for_stage("1-GEN", profile="toy", seed=0)
    ckpt = run_stage("1-GEN", model, None, clips, cfg)
    ckpt.save("runs/toy/stage_1-GEN.pt")

Change log:
  2026-10-18  Initial implementation
"""

import hashlib
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Dict, FrozenSet, List, Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from ddf_config import (
    AttributeId, PROFILES, SEARCH_AREA_FACTOR, SPECIFIC_ATTRIBUTES, STAGE_EPOCHS,
    STAGE_LEARNING_RATES, TRAIN_CENTER_JITTER, TRAIN_FRAMES, WEIGHT_DECAY,
    branch_group, is_known_stage, stage_key,
)
from ddf_errors import ConfigError, DataError, LineageError
from geometry import BBox
from run_logger import TrainingLog
from synthetic_data import ClipManifest
from target_predictor import tracking_loss
from tracker_core import (
    BackboneConfig, DDFNet, box_to_crop, crop_region, search_region,
)

log = logging.getLogger("ddfnet.training_pipeline")


# ============================================================
# STAGE NAMES
# ============================================================

def parse_stage(stage: str):
    """'1-ATTR:OCC' -> ('1-ATTR', OCC); other stages carry no attribute."""
    stage = str(stage).strip()
    if not is_known_stage(stage):
        raise ConfigError(f"unknown stage {stage!r}; expected 0, 1-GEN, 1-ATTR:<ATTR>, 2 or 3")
    key = stage_key(stage)
    if key != "1-ATTR":
        return key, None
    _, _, attr = stage.partition(":")
    if not attr:
        raise ConfigError("stage 1-ATTR needs an attribute, e.g. 1-ATTR:OCC")
    attribute = AttributeId.parse(attr)
    if attribute is AttributeId.GEN:
        raise ConfigError("1-ATTR cannot train the GEN branch; use stage 1-GEN")
    return key, attribute


def canonical_stage(stage: str) -> str:
    key, attr = parse_stage(stage)
    return f"{key}:{attr.value}" if attr else key


STAGE_ROUTES = {"0": "none", "1-GEN": "bypass:GEN", "2": "afm", "3": "full"}


def stage_route(stage: str) -> str:
    key, attr = parse_stage(stage)
    return f"bypass:{attr.value}" if attr else STAGE_ROUTES[key]


def stage_split(stage: str) -> str:
    key, attr = parse_stage(stage)
    if attr:
        return attr.value
    return "GEN" if key == "0" else "all"


# ============================================================
# STAGE CONFIG & FREEZE MASK
# ============================================================

@dataclass
class StageConfig:
    stage: str
    learning_rates: Dict[str, float]    # group -> rate; "*" = every other group
    weight_decay: float = WEIGHT_DECAY
    epochs: int = 1
    iterations_per_epoch: int = 100
    batch_size: int = 8
    split: str = "all"
    seed: int = 0
    train_frames: int = TRAIN_FRAMES
    center_jitter: float = TRAIN_CENTER_JITTER
    validation_batches: int = 4

    def __post_init__(self):
        self.stage = canonical_stage(self.stage)
        bad = {k: v for k, v in self.learning_rates.items() if not v > 0}
        if bad:
            raise ConfigError(f"learning rates must be positive, got {bad}")
        if self.epochs < 0 or self.iterations_per_epoch < 1 or self.batch_size < 1:
            raise ConfigError("epochs >= 0, iterations_per_epoch >= 1 and batch_size >= 1 required")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay {self.weight_decay} < 0")

    @classmethod
    def for_stage(cls, stage: str, profile: str = "standard", seed: int = 0,
                  **overrides) -> "StageConfig":
        """Stage config from the stage tables and a profile's schedule."""
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
        prof = PROFILES[profile]
        key, attr = parse_stage(stage)
        lr_scale = overrides.pop("lr_scale", prof["lr_scale"])
        table = STAGE_LEARNING_RATES[key]
        if attr:
            table = {branch_group(attr): table["branch"]}
        rates = {g: r * lr_scale for g, r in table.items()}
        params = dict(
            stage=stage, learning_rates=rates,
            epochs=prof["epochs"].get(key, STAGE_EPOCHS[key]),
            iterations_per_epoch=prof["iterations_per_epoch"],
            batch_size=prof["batch_size"], split=stage_split(stage), seed=seed,
        )
        params.update(overrides)
        return cls(**params)

    def resolve_rates(self, groups: Sequence[str]) -> Dict[str, float]:
        """Concrete group -> rate for the groups a model has."""
        rates = {g: r for g, r in self.learning_rates.items() if g != "*"}
        if "*" in self.learning_rates:
            for g in groups:
                rates.setdefault(g, self.learning_rates["*"])
        missing = sorted(set(rates) - set(groups))
        if missing:
            log.warning(f"stage {self.stage}: model has no groups {missing}; skipped")
        return {g: r for g, r in rates.items() if g in groups}


@dataclass(frozen=True)
class FreezeMask:
    frozen: FrozenSet[str]

    def validate(self, groups: Sequence[str]):
        unknown = sorted(set(self.frozen) - set(groups))
        if unknown:
            raise ConfigError(f"freeze mask names unknown parameter groups {unknown}")

    def apply(self, model: DDFNet):
        groups = model.parameter_groups()
        self.validate(list(groups))
        for name, params in groups.items():
            for _, p in params:
                p.requires_grad_(name not in self.frozen)


def group_hashes(model: DDFNet) -> Dict[str, str]:
    """SHA-256 per parameter group over (name, bytes) in name order."""
    out = {}
    for group, params in model.parameter_groups().items():
        h = hashlib.sha256()
        for name, p in sorted(params, key=lambda t: t[0]):
            h.update(name.encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
        out[group] = h.hexdigest()
    return out


def make_optimizer(model: DDFNet, rates: Dict[str, float], weight_decay: float) -> torch.optim.AdamW:
    groups = model.parameter_groups()
    param_groups = [{"params": [p for _, p in groups[g]], "lr": r, "name": g}
                    for g, r in sorted(rates.items())]
    return torch.optim.AdamW(param_groups, lr=max(rates.values()), weight_decay=weight_decay)


# ============================================================
# CHECKPOINT
# ============================================================

@dataclass
class Checkpoint:
    state: Dict[str, torch.Tensor]
    model_config: Dict
    lineage: List[Dict] = field(default_factory=list)
    seed: int = 0
    config_digest: str = ""

    @property
    def stages(self) -> List[str]:
        return [r["stage"] for r in self.lineage]

    def has_stage(self, stage: str) -> bool:
        return stage in self.stages

    def last_record(self) -> Dict:
        return self.lineage[-1] if self.lineage else {}

    def restore(self, model: DDFNet):
        """Copy the saved tensors into `model`; unsaved groups keep their values."""
        if asdict(model.config) != self.model_config:
            raise ConfigError("checkpoint was trained with a different model config")
        unexpected = model.load_state_dict(self.state, strict=False).unexpected_keys
        if unexpected:
            raise ConfigError(f"checkpoint has parameters the model lacks: {unexpected[:5]}")

    def save(self, path: str) -> str:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        torch.save({
            "state": self.state,
            "model_config": self.model_config,
            "lineage": self.lineage,
            "seed": self.seed,
            "config_digest": self.config_digest,
        }, path)
        log.info(f"checkpoint saved to {path} (stages {self.stages})")
        return path

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        if not os.path.exists(path):
            raise LineageError(f"checkpoint not found: {path}")
        data = torch.load(path, map_location="cpu", weights_only=True)
        cfg = data["model_config"]
        return cls(state=data["state"], model_config=cfg, lineage=data["lineage"],
                   seed=data["seed"], config_digest=data["config_digest"])

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.state):
            h.update(name.encode())
            h.update(self.state[name].cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


def model_config_from(ckpt: Checkpoint) -> BackboneConfig:
    return BackboneConfig(**ckpt.model_config)


def build_model(config: BackboneConfig, seed: int = 0, dtype=torch.float32,
                deterministic: bool = False) -> DDFNet:
    """Seeded model construction; deterministic=True also pins one thread."""
    if deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(seed)
    return DDFNet(config).to(dtype)


def reset_group(model: DDFNet, group: str, seed: int):
    """Seeded re-initialization of every module inside one group (afm / efm)."""
    torch.manual_seed(seed)
    for module in model.backbone.ddf.values():
        targets = [module.afm] if group == "afm" else [module.efm_rgb, module.efm_tir]
        for target in targets:
            for m in target.modules():
                if hasattr(m, "reset_parameters"):
                    m.reset_parameters()


# ============================================================
# TRAINING SAMPLES
# ============================================================

@dataclass
class TrainingBatch:
    train_rgb: List[torch.Tensor]     # T x (B, 3, S, S)
    train_tir: List[torch.Tensor]     # T x (B, 1, S, S)
    train_boxes: List[torch.Tensor]   # T x (B, 4), crop pixels
    test_rgb: torch.Tensor
    test_tir: torch.Tensor
    test_boxes: torch.Tensor


class TrainingSampler:
    """Draws (train frames, test frame) crops around jittered GT boxes."""

    def __init__(self, clips: Sequence[ClipManifest], input_resolution: int,
                 train_frames: int = TRAIN_FRAMES, center_jitter: float = TRAIN_CENTER_JITTER,
                 seed: int = 0, dtype=torch.float32,
                 search_area_factor: float = SEARCH_AREA_FACTOR):
        if not clips:
            raise DataError("training split is empty")
        self.clips = list(clips)
        self.size = input_resolution
        self.train_frames = train_frames
        self.center_jitter = center_jitter
        self.search_area_factor = search_area_factor
        self.dtype = dtype
        self.rng = np.random.default_rng(seed)

    def _crop(self, clip: ClipManifest, t: int):
        gt = clip.gt_rgb[t]
        region = search_region(gt, self.search_area_factor)
        shift = self.rng.uniform(-1, 1, size=2) * self.center_jitter * region.w
        region = BBox(region.x + shift[0], region.y + shift[1], region.w, region.h)
        rgb = torch.as_tensor(clip.frames_rgb[t], dtype=self.dtype).permute(2, 0, 1)[None]
        tir = torch.as_tensor(clip.frames_tir[t], dtype=self.dtype)[None, None]
        box = box_to_crop(gt, region, self.size)
        return (crop_region(rgb, region, self.size), crop_region(tir, region, self.size),
                torch.tensor(box.as_list(), dtype=self.dtype))

    def sample(self, batch_size: int) -> TrainingBatch:
        n_frames = self.train_frames + 1
        per_frame = [[] for _ in range(n_frames)]
        for _ in range(batch_size):
            clip = self.clips[int(self.rng.integers(len(self.clips)))]
            frames = np.sort(self.rng.choice(len(clip), size=n_frames,
                                             replace=len(clip) < n_frames))
            for slot, t in enumerate(frames):
                per_frame[slot].append(self._crop(clip, int(t)))

        def _stack(slot):
            rgb, tir, box = zip(*per_frame[slot])
            return torch.cat(rgb), torch.cat(tir), torch.stack(box)

        stacked = [_stack(s) for s in range(n_frames)]
        return TrainingBatch(
            train_rgb=[s[0] for s in stacked[:-1]],
            train_tir=[s[1] for s in stacked[:-1]],
            train_boxes=[s[2] for s in stacked[:-1]],
            test_rgb=stacked[-1][0], test_tir=stacked[-1][1], test_boxes=stacked[-1][2],
        )


def batch_loss(model: DDFNet, batch: TrainingBatch):
    scores, ltrb = model(batch.train_rgb, batch.train_tir, batch.train_boxes,
                         batch.test_rgb, batch.test_tir)
    return tracking_loss(scores, ltrb, batch.test_boxes / model.stride)


@torch.no_grad()
def validation_loss(model: DDFNet, clips: Sequence[ClipManifest], n_batches: int = 4,
                    batch_size: int = 4, seed: int = 12345, route: Optional[str] = None,
                    train_frames: int = TRAIN_FRAMES) -> float:
    """Mean loss on a fixed, seeded set of crops (same crops on every call)."""
    previous = model.route
    if route is not None:
        model.set_fusion_route(route)
    dtype = next(model.parameters()).dtype
    sampler = TrainingSampler(clips, model.config.input_resolution, train_frames,
                              center_jitter=0.0, seed=seed, dtype=dtype)
    try:
        losses = [float(batch_loss(model, sampler.sample(batch_size))[0]) for _ in range(n_batches)]
    finally:
        model.set_fusion_route(previous)
    return float(np.mean(losses))


# ============================================================
# TRAINING LOOP
# ============================================================

def _train(model: DDFNet, clips: Sequence[ClipManifest], cfg: StageConfig,
           training_log: Optional[TrainingLog], config_digest: str,
           verbose: bool) -> Dict:
    groups = list(model.parameter_groups())
    rates = cfg.resolve_rates(groups)
    if not rates:
        raise ConfigError(f"stage {cfg.stage} has nothing to train in this model")
    mask = FreezeMask(frozenset(groups) - set(rates))
    mask.apply(model)
    optimizer = make_optimizer(model, rates, cfg.weight_decay)
    dtype = next(model.parameters()).dtype
    sampler = TrainingSampler(clips, model.config.input_resolution, cfg.train_frames,
                              cfg.center_jitter, seed=cfg.seed, dtype=dtype)

    if verbose:
        print(f"  [TRAIN] stage {cfg.stage}: route={model.route} "
              f"trainable={sorted(rates)} frozen={sorted(mask.frozen)}")

    model.train()
    iteration_losses, iteration_cls = [], []
    epoch_means = []
    total = cfg.epochs * cfg.iterations_per_epoch
    bar = tqdm(total=total, desc=f"stage {cfg.stage}", disable=not verbose, leave=False)
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        for _ in range(cfg.iterations_per_epoch):
            loss, cls_loss, reg_loss = batch_loss(model, sampler.sample(cfg.batch_size))
            if not torch.isfinite(loss):
                raise DataError(f"stage {cfg.stage}: non-finite loss at epoch {epoch}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            values = (float(loss), float(cls_loss), float(reg_loss))
            sums += values
            iteration_losses.append(values[0])
            iteration_cls.append(values[1])
            bar.update(1)
        means = sums / cfg.iterations_per_epoch
        epoch_means.append(float(means[0]))
        if training_log is not None:
            training_log.log_epoch(cfg.stage, epoch, cfg.iterations_per_epoch, means[0],
                                   means[1], means[2], rates, config_digest)
        log.info(f"stage {cfg.stage} epoch {epoch}: loss {means[0]:.5f} "
                 f"(cls {means[1]:.5f}, reg {means[2]:.5f})")
    bar.close()

    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    return {
        "learning_rates": rates,
        "frozen": sorted(mask.frozen),
        "trained": sorted(rates),
        "iterations": total,
        "epoch_losses": epoch_means,
        "iteration_losses": iteration_losses,
        "iteration_cls_losses": iteration_cls,
    }


def _record(cfg: StageConfig, stats: Dict, saved: Sequence[str], before: Dict[str, str],
            after: Dict[str, str], config_digest: str, **extra) -> Dict:
    unchanged_frozen = {g: before[g] == after[g] for g in stats["frozen"]}
    broken = sorted(g for g, same in unchanged_frozen.items() if not same)
    if broken:
        raise DataError(f"stage {cfg.stage}: frozen groups changed: {broken}")
    record = {
        "stage": cfg.stage,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "split": cfg.split,
        "weight_decay": cfg.weight_decay,
        "saved_groups": sorted(saved),
        "hashes_before": before,
        "hashes_after": after,
        "config_digest": config_digest,
        "finished_at": datetime.now().isoformat(timespec="seconds"),
    }
    record.update(stats)
    record.update(extra)
    return record


def _state_for(model: DDFNet, groups: Sequence[str]) -> Dict[str, torch.Tensor]:
    wanted = set(groups)
    return {name: p.detach().clone() for name, p in model.named_parameters()
            if model.group_of(name) in wanted}


def _check_model(model: DDFNet, ckpt: Optional[Checkpoint]):
    if ckpt is not None:
        ckpt.restore(model)


def check_lineage(stage: str, ckpt: Optional[Checkpoint]):
    """Raise LineageError unless `ckpt` carries the stages `stage` depends on."""
    key, _ = parse_stage(stage)
    have = set(ckpt.stages) if ckpt is not None else set()
    if key == "0":
        return
    if key == "1-GEN":
        extra = have - {"0"}
        if extra:
            raise LineageError(f"stage 1-GEN starts a new lineage; checkpoint already has {sorted(extra)}")
        return
    if ckpt is None:
        raise LineageError(f"stage {stage} needs a checkpoint; none given")
    if key == "1-ATTR":
        needed = {"1-GEN"}
    elif key == "2":
        needed = {"1-GEN"} | {f"1-ATTR:{a.value}" for a in SPECIFIC_ATTRIBUTES}
    else:
        needed = {"2"}
    missing = sorted(needed - have)
    if missing:
        raise LineageError(f"stage {stage} needs {missing} in the checkpoint lineage "
                           f"(has {ckpt.stages})")


def _finish(model: DDFNet, ckpt: Optional[Checkpoint], cfg: StageConfig, state: Dict,
            record: Dict, config_digest: str) -> Checkpoint:
    lineage = list(ckpt.lineage) if ckpt is not None else []
    return Checkpoint(state=state, model_config=asdict(model.config),
                      lineage=lineage + [record], seed=cfg.seed, config_digest=config_digest)


# ============================================================
# STAGES
# ============================================================

def run_stage0_warmup(model: DDFNet, clips: Sequence[ClipManifest], cfg: StageConfig,
                      training_log: TrainingLog = None, config_digest: str = "",
                      verbose: bool = False) -> Checkpoint:
    check_lineage("0", None)
    model.set_fusion_route(stage_route("0"))
    before = group_hashes(model)
    stats = _train(model, clips, cfg, training_log, config_digest, verbose)
    after = group_hashes(model)
    saved = ["backbone", "predictor"]
    record = _record(cfg, stats, saved, before, after, config_digest)
    return _finish(model, None, cfg, _state_for(model, saved), record, config_digest)


def run_stage1_gen(model: DDFNet, clips: Sequence[ClipManifest], cfg: StageConfig,
                   ckpt: Optional[Checkpoint] = None, training_log: TrainingLog = None,
                   config_digest: str = "", verbose: bool = False) -> Checkpoint:
    check_lineage("1-GEN", ckpt)
    _check_model(model, ckpt)
    model.set_fusion_route(stage_route("1-GEN"))
    before = group_hashes(model)
    stats = _train(model, clips, cfg, training_log, config_digest, verbose)
    after = group_hashes(model)
    saved = [g for g in ("backbone", "predictor", branch_group(AttributeId.GEN)) if g in after]
    record = _record(cfg, stats, saved, before, after, config_digest)
    return _finish(model, ckpt, cfg, _state_for(model, saved), record, config_digest)


def run_stage1_attr(model: DDFNet, ckpt: Checkpoint, attribute, clips: Sequence[ClipManifest],
                    cfg: StageConfig, training_log: TrainingLog = None,
                    config_digest: str = "", verbose: bool = False) -> Checkpoint:
    attr = AttributeId.parse(attribute)
    stage = canonical_stage(f"1-ATTR:{attr.value}")
    if cfg.stage != stage:
        raise ConfigError(f"stage config is for {cfg.stage}, not {stage}")
    check_lineage(stage, ckpt)
    _check_model(model, ckpt)
    route = stage_route(stage)
    model.set_fusion_route(route)

    val_before = validation_loss(model, clips, cfg.validation_batches, route=route)
    before = group_hashes(model)
    stats = _train(model, clips, cfg, training_log, config_digest, verbose)
    after = group_hashes(model)
    val_after = validation_loss(model, clips, cfg.validation_batches, route=route)

    group = branch_group(attr)
    state = dict(ckpt.state)
    state.update(_state_for(model, [group]))
    reduction = 1.0 - val_after / val_before if val_before > 0 else 0.0
    record = _record(cfg, stats, [group], before, after, config_digest,
                     validation={"attribute": attr.value, "before": val_before,
                                 "after": val_after, "reduction": reduction})
    if verbose:
        print(f"  [TRAIN] {attr.value} branch validation loss "
              f"{val_before:.5f} -> {val_after:.5f} ({reduction:.1%} lower)")
    return _finish(model, ckpt, cfg, state, record, config_digest)


def run_stage2_afm(model: DDFNet, ckpt: Checkpoint, clips: Sequence[ClipManifest],
                   cfg: StageConfig, training_log: TrainingLog = None,
                   config_digest: str = "", verbose: bool = False) -> Checkpoint:
    check_lineage("2", ckpt)
    _check_model(model, ckpt)
    reset_group(model, "afm", cfg.seed)
    model.set_fusion_route(stage_route("2"))
    before = group_hashes(model)
    stats = _train(model, clips, cfg, training_log, config_digest, verbose)
    after = group_hashes(model)
    record = _record(cfg, stats, list(after), before, after, config_digest)
    return _finish(model, ckpt, cfg, _state_for(model, list(after)), record, config_digest)


def run_stage3_efm(model: DDFNet, ckpt: Checkpoint, clips: Sequence[ClipManifest],
                   cfg: StageConfig, training_log: TrainingLog = None,
                   config_digest: str = "", verbose: bool = False) -> Checkpoint:
    check_lineage("3", ckpt)
    _check_model(model, ckpt)
    reset_group(model, "efm", cfg.seed)
    model.set_fusion_route(stage_route("3"))
    before = group_hashes(model)
    stats = _train(model, clips, cfg, training_log, config_digest, verbose)
    after = group_hashes(model)
    record = _record(cfg, stats, list(after), before, after, config_digest)
    return _finish(model, ckpt, cfg, _state_for(model, list(after)), record, config_digest)


def run_stage(stage: str, model: DDFNet, ckpt: Optional[Checkpoint],
              clips: Sequence[ClipManifest], cfg: StageConfig, **kwargs) -> Checkpoint:
    """Dispatch to the stage runner for `stage`."""
    key, attr = parse_stage(stage)
    if not clips:
        raise DataError(f"stage {stage}: split {cfg.split!r} has no clips")
    if key == "0":
        return run_stage0_warmup(model, clips, cfg, **kwargs)
    if key == "1-GEN":
        return run_stage1_gen(model, clips, cfg, ckpt=ckpt, **kwargs)
    if key == "1-ATTR":
        return run_stage1_attr(model, ckpt, attr, clips, cfg, **kwargs)
    if key == "2":
        return run_stage2_afm(model, ckpt, clips, cfg, **kwargs)
    return run_stage3_efm(model, ckpt, clips, cfg, **kwargs)


def full_stage_sequence(include_warmup: bool = True) -> List[str]:
    stages = ["0"] if include_warmup else []
    stages += ["1-GEN"] + [f"1-ATTR:{a.value}" for a in SPECIFIC_ATTRIBUTES] + ["2", "3"]
    return stages


def specialization_report(ckpt: Checkpoint) -> Dict[str, Dict]:
    """Per-attribute validation loss before/after its 1-ATTR stage."""
    return {r["validation"]["attribute"]: r["validation"]
            for r in ckpt.lineage if "validation" in r}


def loss_reduction(values: Sequence[float], window: int = 5) -> float:
    """1 - (mean of last `window`) / (mean of first `window`)."""
    if len(values) == 0:
        return 0.0
    w = max(1, min(window, len(values) // 2 or 1))
    first, last = float(np.mean(values[:w])), float(np.mean(values[-w:]))
    return 0.0 if first <= 0 or math.isnan(first) else 1.0 - last / first
