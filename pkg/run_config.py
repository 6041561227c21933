"""
Run Configuration - Profiles, INI Files, Digest
================================================
A RunConfig bundles everything a command needs: model config, scene
config, training schedule, tracking policy, seed and output directory.

Precedence (lowest first):
  profile defaults  ->  --config INI file  ->  CLI flags
  output directory: --out, else $DDFNET_OUT_DIR, else file / profile

INI schema (schema_version = 1):

    [run]       schema_version, profile, seed, out_dir, frame_format,
                dtype, deterministic
    [model]     BackboneConfig fields; tuples as comma lists
    [scene]     SceneConfig fields
    [training]  clips_per_attribute, iterations_per_epoch, batch_size,
                lr_scale, epochs.<stage>
    [tracking]  TrackingPolicy fields
    [evaluation] pr_threshold

Unknown sections or keys are errors. `digest()` is SHA-256 over the
canonical JSON of everything except the output directory.

Change log:
  2026-10-18  Initial implementation
"""

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Optional

import torch

from ddf_config import (
    CONFIG_SCHEMA_VERSION, DEFAULT_PROFILE, FRAME_FORMATS, OUT_DIR, OUT_DIR_ENV,
    PR_THRESHOLD, PROFILES, STAGE_EPOCHS,
)
from ddf_errors import ConfigError
from synthetic_data import SceneConfig
from tracker_core import BackboneConfig, TrackingPolicy
from training_pipeline import StageConfig, parse_stage

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def _profile(name: str) -> Dict:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
    return PROFILES[name]


@dataclass
class TrainingSchedule:
    clips_per_attribute: int
    iterations_per_epoch: int
    batch_size: int
    lr_scale: float
    epochs: Dict[str, int]

    def __post_init__(self):
        if min(self.clips_per_attribute, self.iterations_per_epoch, self.batch_size) < 1:
            raise ConfigError("clips_per_attribute, iterations_per_epoch and batch_size must be >= 1")
        if self.lr_scale <= 0:
            raise ConfigError(f"lr_scale {self.lr_scale} must be positive")
        unknown = set(self.epochs) - set(STAGE_EPOCHS)
        if unknown:
            raise ConfigError(f"epochs given for unknown stages {sorted(unknown)}")


@dataclass
class RunConfig:
    profile: str = DEFAULT_PROFILE
    seed: int = 0
    out_dir: str = OUT_DIR
    frame_format: str = "npz"
    dtype: str = "float32"
    deterministic: bool = False
    model: BackboneConfig = field(default_factory=BackboneConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    training: TrainingSchedule = None
    tracking: TrackingPolicy = field(default_factory=TrackingPolicy)
    pr_threshold: float = PR_THRESHOLD
    schema_version: int = CONFIG_SCHEMA_VERSION

    def __post_init__(self):
        if self.frame_format not in FRAME_FORMATS:
            raise ConfigError(f"frame_format {self.frame_format!r} not in {FRAME_FORMATS}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype {self.dtype!r} not in {sorted(DTYPES)}")
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"config schema_version {self.schema_version} unsupported "
                              f"(expected {CONFIG_SCHEMA_VERSION})")
        if self.pr_threshold <= 0:
            raise ConfigError(f"pr_threshold {self.pr_threshold} must be positive")
        if self.training is None:
            self.training = _schedule_from_profile(_profile(self.profile))

    # --------------------------------------------------------
    # construction
    # --------------------------------------------------------
    @classmethod
    def from_profile(cls, profile: str = DEFAULT_PROFILE, seed: int = 0,
                     out_dir: Optional[str] = None) -> "RunConfig":
        p = _profile(profile)
        model = BackboneConfig(
            channels=p["channels"], strides=p["strides"],
            input_resolution=p["input_resolution"], ddf_layers=p["ddf_layers"],
            predictor_dim=p["predictor_dim"], predictor_heads=p["predictor_heads"],
            encoder_layers=p["encoder_layers"], decoder_layers=p["decoder_layers"],
        )
        scene = SceneConfig(canvas=p["canvas"], frames=p["frames"])
        return cls(profile=profile, seed=seed,
                   out_dir=out_dir or os.path.join(OUT_DIR, profile),
                   model=model, scene=scene, training=_schedule_from_profile(p))

    @classmethod
    def load(cls, path: Optional[str] = None, profile: Optional[str] = None,
             seed: Optional[int] = None, out_dir: Optional[str] = None) -> "RunConfig":
        """Profile defaults, then the INI file, then explicit overrides."""
        parser = configparser.ConfigParser()
        if path is not None:
            if not os.path.exists(path):
                raise ConfigError(f"config file not found: {path}")
            parser.read(path, encoding="utf-8")
        known_sections = {"run", "model", "scene", "training", "tracking", "evaluation"}
        unknown = set(parser.sections()) - known_sections
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")

        run = dict(parser["run"]) if parser.has_section("run") else {}
        version = int(run.pop("schema_version", CONFIG_SCHEMA_VERSION))
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"config schema_version {version} unsupported")
        cfg = cls.from_profile(profile or run.pop("profile", DEFAULT_PROFILE))
        run.pop("profile", None)

        for key, raw in run.items():
            if key not in ("seed", "out_dir", "frame_format", "dtype", "deterministic"):
                raise ConfigError(f"unknown key [run] {key}")
            setattr(cfg, key, _coerce(raw, getattr(cfg, key), f"[run] {key}"))
        if parser.has_section("model"):
            cfg.model = _override(cfg.model, parser["model"], "model")
        if parser.has_section("scene"):
            cfg.scene = _override(cfg.scene, parser["scene"], "scene")
        if parser.has_section("tracking"):
            cfg.tracking = _override(cfg.tracking, parser["tracking"], "tracking")
        if parser.has_section("training"):
            cfg.training = _override_schedule(cfg.training, parser["training"])
        if parser.has_section("evaluation"):
            for key, raw in parser["evaluation"].items():
                if key != "pr_threshold":
                    raise ConfigError(f"unknown key [evaluation] {key}")
                cfg.pr_threshold = float(raw)

        if seed is not None:
            cfg.seed = int(seed)
        env_out = os.environ.get(OUT_DIR_ENV)
        if out_dir:
            cfg.out_dir = out_dir
        elif env_out:
            cfg.out_dir = env_out
        cfg.__post_init__()
        return cfg

    # --------------------------------------------------------
    # derived objects
    # --------------------------------------------------------
    @property
    def torch_dtype(self):
        return DTYPES[self.dtype]

    def stage_config(self, stage: str) -> StageConfig:
        key, _ = parse_stage(stage)
        return StageConfig.for_stage(
            stage, profile=self.profile, seed=self.seed,
            lr_scale=self.training.lr_scale,
            epochs=self.training.epochs.get(key, STAGE_EPOCHS[key]),
            iterations_per_epoch=self.training.iterations_per_epoch,
            batch_size=self.training.batch_size,
        )

    def to_dict(self) -> Dict:
        return {
            "schema_version": self.schema_version,
            "profile": self.profile,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "frame_format": self.frame_format,
            "dtype": self.dtype,
            "deterministic": self.deterministic,
            "model": asdict(self.model),
            "scene": self.scene.as_dict(),
            "training": asdict(self.training),
            "tracking": asdict(self.tracking),
            "pr_threshold": self.pr_threshold,
        }

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=list).encode()).hexdigest()

    def write_ini(self, path: str) -> str:
        parser = configparser.ConfigParser()
        parser["run"] = {
            "schema_version": str(self.schema_version), "profile": self.profile,
            "seed": str(self.seed), "out_dir": self.out_dir,
            "frame_format": self.frame_format, "dtype": self.dtype,
            "deterministic": str(self.deterministic).lower(),
        }
        parser["model"] = {k: _render(v) for k, v in asdict(self.model).items()}
        parser["scene"] = {k: _render(v) for k, v in asdict(self.scene).items()}
        training = asdict(self.training)
        epochs = training.pop("epochs")
        parser["training"] = {k: _render(v) for k, v in training.items()}
        parser["training"].update({f"epochs.{k}": str(v) for k, v in epochs.items()})
        parser["tracking"] = {k: _render(v) for k, v in asdict(self.tracking).items()}
        parser["evaluation"] = {"pr_threshold": _render(self.pr_threshold)}
        with open(path, "w", encoding="utf-8") as f:
            parser.write(f)
        return path


# ============================================================
# VALUE COERCION
# ============================================================

def _schedule_from_profile(p: Dict) -> TrainingSchedule:
    return TrainingSchedule(
        clips_per_attribute=p["clips_per_attribute"],
        iterations_per_epoch=p["iterations_per_epoch"],
        batch_size=p["batch_size"], lr_scale=p["lr_scale"], epochs=dict(p["epochs"]),
    )


def _render(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, bool):
        return str(value).lower()
    return str(value)


def _coerce(raw: str, like, where: str):
    """Parse `raw` to the type of the existing value `like`."""
    try:
        if isinstance(like, bool):
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if like and isinstance(like[0], str):
                return tuple(items)
            if like and isinstance(like[0], int):
                return tuple(int(s) for s in items)
            return tuple(float(s) if "." in s else int(s) for s in items)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(like).__name__}") from None


def _override(obj, section, name: str):
    current = asdict(obj)
    names = {f.name for f in fields(obj)}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"unknown key [{name}] {key}")
        current[key] = _coerce(raw, current[key], f"[{name}] {key}")
    return type(obj)(**current)


def _override_schedule(schedule: TrainingSchedule, section) -> TrainingSchedule:
    current = asdict(schedule)
    epochs = dict(current.pop("epochs"))
    for key, raw in section.items():
        if key.startswith("epochs."):
            stage = key.split(".", 1)[1].upper()
            epochs[stage] = _coerce(raw, 0, f"[training] {key}")
        elif key in current:
            current[key] = _coerce(raw, current[key], f"[training] {key}")
        else:
            raise ConfigError(f"unknown key [training] {key}")
    return TrainingSchedule(epochs=epochs, **current)
