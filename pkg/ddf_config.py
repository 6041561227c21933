"""
DDFNet Configuration - Centralized Constants
=============================================
All tunables in one place. Every module (fusion_units, dynamic_branch,
aggregation_enhancement, tracker_core, synthetic_data, training_pipeline,
evaluation, ddfnet CLI) imports from here.

Two profiles are shipped:
  - standard : full schedule (30 / 30 / 60 epochs, AdamW,
               weight decay 1e-4, rates 1e-5 / 5e-6 / 1e-6)
  - toy      : 2 backbone layers x 16 channels, 1 DDF layer, tiny
               epochs, rates scaled up so desk-scale runs move

Change log:
  2026-10-18  Initial configuration
"""

from enum import Enum


# ============================================================
# ATTRIBUTE TAXONOMY
# ============================================================
class AttributeId(str, Enum):
    """Challenge attributes, one dynamic fusion branch each."""

    EI = "EI"     # extreme illumination
    TC = "TC"     # thermal crossover
    OCC = "OCC"   # occlusion
    LR = "LR"     # low resolution
    SA = "SA"     # similar appearance
    GEN = "GEN"   # general, always present

    @classmethod
    def parse(cls, name) -> "AttributeId":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            from ddf_errors import ConfigError
            raise ConfigError(f"unknown attribute {name!r}; expected one of "
                              f"{[a.value for a in cls]}") from None


# Branch order inside a DDF module (AFM weights follow this order)
ATTRIBUTES = (AttributeId.EI, AttributeId.TC, AttributeId.OCC,
              AttributeId.LR, AttributeId.SA, AttributeId.GEN)

# Branches trained one by one after the general branch
SPECIFIC_ATTRIBUTES = tuple(a for a in ATTRIBUTES if a is not AttributeId.GEN)


# ============================================================
# FUSION UNITS
# ============================================================
ROUTER_REDUCTION = 4        # hidden width = in_features / r
SFU_REDUCTION = 4           # reduce 2C -> C/r, expand C/r -> C
AFM_REDUCTION = 4           # reduce C -> C/r, expand C/r -> 6C
SCFU_GATES = 2              # one weight for SAE, one for CAE
SFU_GATES = 1

# Gate record columns, in export order
GATE_COLUMNS = ("w_sae_rgb", "w_cae_rgb", "w_sae_tir", "w_cae_tir", "w_sfu")

# Units a branch may be built with (unit ablation)
BRANCH_UNITS = ("scfu_rgb", "sfu", "scfu_tir")


# ============================================================
# DDF ROUTES
# ============================================================
# none     plain two-stream backbone
# bypass   one branch, fused map added to both streams (stage 1)
# sum      all branch maps summed onto both streams (AFM/EFM removed)
# afm      AFM output added to both streams (no EFM, stage 2)
# full     AFM + per-modality EFM (stage 3 and inference)
DDF_ROUTES = ("none", "bypass", "sum", "afm", "full")


# ============================================================
# BACKBONE / PREDICTOR DEFAULTS
# ============================================================
BACKBONE_CHANNELS = (16, 32, 64)
BACKBONE_STRIDES = (2, 2, 2)
INPUT_CHANNELS = 3            # TIR is replicated to 3 channels
INPUT_RESOLUTION = 64
DDF_LAYERS = (1, 2, 3)

PREDICTOR_DIM = 64
PREDICTOR_HEADS = 4
PREDICTOR_ENCODER_LAYERS = 2
PREDICTOR_DECODER_LAYERS = 1
PREDICTOR_FFN_MULT = 2
USE_POSITIONAL_ENCODING = True
LTRB_LOGIT_CLAMP = 10.0       # exp(.) argument bound in the box head


# ============================================================
# LABELS, LOSSES, TRACKING POLICY
# ============================================================
GAUSSIAN_SIGMA_FACTOR = 0.25  # sigma = factor * box diagonal (grid units)
CLS_LOSS_WEIGHT = 1.0
REG_LOSS_WEIGHT = 1.0
SEARCH_AREA_FACTOR = 4.0      # search region area = factor * box area
TRAIN_CENTER_JITTER = 0.15    # crop-centre jitter, fraction of crop side
TRAIN_FRAMES = 2              # memory frames per training sample

MEMORY_CAPACITY = 3
MEMORY_REFRESH_INTERVAL = 1   # frames between memory updates
LOST_SCORE_FLOOR = 0.05       # max score below this -> lost, keep previous box
MIN_BOX_SIZE = 2.0            # pixels, after clipping


# ============================================================
# SYNTHETIC SCENES
# ============================================================
SCENE_CANVAS = 64
SCENE_FRAMES = 24
TARGET_SIZE_RANGE = (10, 16)
MAX_SPEED = 1.5               # pixels / frame
ALIGNMENT_JITTER = 1.0        # max RGB/TIR centre offset, pixels
OCC_COVERAGE = 0.5
OCC_INTERVAL = (0.25, 0.75)   # fraction of clip length
LR_FACTOR = 4
EI_GAIN_RANGE = (0.15, 3.0)
TC_STRENGTH = 0.9
TC_INTERVAL = (0.3, 0.9)
SA_DISTRACTORS = 2
FRAME_FORMATS = ("npz", "png")


# ============================================================
# TRAINING STAGES
# ============================================================
# AdamW everywhere; frozen groups are left out of the optimizer entirely.
WEIGHT_DECAY = 1e-4

STAGE_LEARNING_RATES = {
    "0":      {"backbone": 1e-4, "predictor": 1e-4},
    "1-GEN":  {"branch_GEN": 1e-5, "backbone": 5e-6, "predictor": 5e-6},
    "1-ATTR": {"branch": 1e-5},
    "2":      {"afm": 1e-5},
    "3":      {"efm": 1e-5, "*": 1e-6},
}

STAGE_EPOCHS = {"0": 5, "1-GEN": 30, "1-ATTR": 30, "2": 30, "3": 60}

PARAMETER_GROUPS = ("backbone", "predictor", "afm", "efm") + tuple(
    f"branch_{a.value}" for a in ATTRIBUTES)


# ============================================================
# PROFILES
# ============================================================
PROFILES = {
    "standard": {
        "channels": BACKBONE_CHANNELS,
        "strides": BACKBONE_STRIDES,
        "input_resolution": INPUT_RESOLUTION,
        "ddf_layers": DDF_LAYERS,
        "predictor_dim": PREDICTOR_DIM,
        "predictor_heads": PREDICTOR_HEADS,
        "encoder_layers": PREDICTOR_ENCODER_LAYERS,
        "decoder_layers": PREDICTOR_DECODER_LAYERS,
        "canvas": SCENE_CANVAS,
        "frames": SCENE_FRAMES,
        "clips_per_attribute": 20,
        "epochs": STAGE_EPOCHS,
        "iterations_per_epoch": 100,
        "batch_size": 8,
        "lr_scale": 1.0,
    },
    "toy": {
        "channels": (16, 16),
        "strides": (2, 2),
        "input_resolution": 32,
        "ddf_layers": (2,),
        "predictor_dim": 16,
        "predictor_heads": 2,
        "encoder_layers": 1,
        "decoder_layers": 1,
        "canvas": 48,
        "frames": 8,
        "clips_per_attribute": 1,
        "epochs": {"0": 1, "1-GEN": 1, "1-ATTR": 1, "2": 1, "3": 1},
        "iterations_per_epoch": 4,
        "batch_size": 2,
        "lr_scale": 100.0,
    },
}
DEFAULT_PROFILE = "standard"


# ============================================================
# EVALUATION
# ============================================================
PR_THRESHOLD = 20.0           # pixels
PR_THRESHOLD_GTOT = 5.0
PR_CURVE_MAX = 50             # precision plot x-range, pixels
SUCCESS_GRID_POINTS = 21      # 0:0.05:1, success counts overlap > t
NPR_GRID_MAX = 0.5
NPR_GRID_POINTS = 51          # 0:0.01:0.5, counts normalized error < t


# ============================================================
# OUTPUT, LOGGING, EXIT CODES
# ============================================================
OUT_DIR = "runs"
OUT_DIR_ENV = "DDFNET_OUT_DIR"
LOG_DIR = "logs"
SYSTEM_LOG_FILE = "logs/system.log"
TRAINING_LOG_NAME = "training_log.tsv"
CONFIG_SCHEMA_VERSION = 1

EXIT_CODES = {
    "ok": 0,
    "internal": 1,
    "config": 2,
    "lineage": 3,
    "data": 4,
    "shape": 5,
    "io": 6,
}


# ============================================================
# VALIDATION HELPERS
# ============================================================

def stage_key(stage: str) -> str:
    """Map a concrete stage name to its learning-rate / epoch table key.
    '1-ATTR:OCC' and '1-ATTR' share the table entry '1-ATTR'."""
    return "1-ATTR" if stage.startswith("1-ATTR") else stage


def is_known_stage(stage: str) -> bool:
    return stage_key(stage) in STAGE_LEARNING_RATES


def branch_group(attribute) -> str:
    """Parameter-group name of an attribute's branch."""
    return f"branch_{AttributeId.parse(attribute).value}"
