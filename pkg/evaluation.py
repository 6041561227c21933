"""
Evaluation - PR / SR / NPR, Two-Mode Maximization, Attribute Reports
=====================================================================
Conventions (fixed here, shared by the CLI and the plots):
  PR    fraction of frames with centre error <= threshold (20 px, 5 px GTOT)
  SR    mean over the 21 overlap thresholds 0:0.05:1 of the fraction of
        frames with IoU > threshold (identical boxes give 20/21)
  NPR   centre error normalised component-wise by the GT (w, h), then the
        Euclidean norm; mean over the 51 thresholds 0:0.01:0.5 of the
        fraction with normalised error < threshold (pred == gt gives 50/51)

Multi-sequence reports pool frames, so the overall value is the
frame-weighted mean of the per-sequence values. The "maximum" variants
take the better of the RGB and TIR ground truths, on the aggregate by
default or per sequence on request.

Change log:
  2026-10-18  Initial implementation
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ddf_config import (
    ATTRIBUTES, AttributeId, NPR_GRID_MAX, NPR_GRID_POINTS, PR_CURVE_MAX,
    PR_THRESHOLD, SUCCESS_GRID_POINTS,
)
from ddf_errors import DataError
from geometry import BBox, Trajectory, boxes_to_array

log = logging.getLogger("ddfnet.evaluation")

BoxesLike = Union[Trajectory, Sequence[BBox], np.ndarray]
MODES = ("rgb", "tir", "max")


# ============================================================
# PER-FRAME MEASURES
# ============================================================

def _as_array(boxes: BoxesLike) -> np.ndarray:
    if isinstance(boxes, Trajectory):
        return boxes.as_array()
    if isinstance(boxes, np.ndarray):
        return np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return boxes_to_array(boxes)


def _pair(pred: BoxesLike, gt: BoxesLike) -> Tuple[np.ndarray, np.ndarray]:
    p, g = _as_array(pred), _as_array(gt)
    if len(p) != len(g):
        raise DataError(f"trajectory has {len(p)} frames, ground truth {len(g)}")
    if len(p) == 0:
        raise DataError("cannot evaluate an empty trajectory")
    return p, g


def _centers(a: np.ndarray) -> np.ndarray:
    return a[:, :2] + a[:, 2:] / 2.0


def center_errors(pred: BoxesLike, gt: BoxesLike) -> np.ndarray:
    p, g = _pair(pred, gt)
    d = _centers(p) - _centers(g)
    return np.hypot(d[:, 0], d[:, 1])


def overlaps(pred: BoxesLike, gt: BoxesLike) -> np.ndarray:
    p, g = _pair(pred, gt)
    iw = np.minimum(p[:, 0] + p[:, 2], g[:, 0] + g[:, 2]) - np.maximum(p[:, 0], g[:, 0])
    ih = np.minimum(p[:, 1] + p[:, 3], g[:, 1] + g[:, 3]) - np.maximum(p[:, 1], g[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = p[:, 2] * p[:, 3] + g[:, 2] * g[:, 3] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return np.clip(iou, 0.0, 1.0)


def normalized_center_errors(pred: BoxesLike, gt: BoxesLike) -> np.ndarray:
    p, g = _pair(pred, gt)
    if not (np.isfinite(g).all() and (g[:, 2] > 0).all() and (g[:, 3] > 0).all()):
        raise DataError("normalized precision needs nondegenerate ground-truth boxes")
    d = (_centers(p) - _centers(g)) / g[:, 2:]
    return np.hypot(d[:, 0], d[:, 1])


def center_error(pred: BBox, gt: BBox) -> float:
    return float(center_errors([pred], [gt])[0])


def overlap(pred: BBox, gt: BBox) -> float:
    return float(overlaps([pred], [gt])[0])


# ============================================================
# CURVES & SCALARS
# ============================================================

def precision_thresholds(max_threshold: float = PR_CURVE_MAX) -> np.ndarray:
    return np.arange(0, int(max_threshold) + 1, dtype=np.float64)


def success_thresholds() -> np.ndarray:
    return np.linspace(0.0, 1.0, SUCCESS_GRID_POINTS)


def npr_thresholds() -> np.ndarray:
    return np.linspace(0.0, NPR_GRID_MAX, NPR_GRID_POINTS)


def precision_curve(pred: BoxesLike, gt: BoxesLike, max_threshold: float = PR_CURVE_MAX):
    errors = center_errors(pred, gt)
    thr = precision_thresholds(max_threshold)
    return thr, (errors[None, :] <= thr[:, None]).mean(axis=1)


def precision_rate(pred: BoxesLike, gt: BoxesLike, threshold: float = PR_THRESHOLD) -> float:
    return float((center_errors(pred, gt) <= threshold).mean())


def success_curve(pred: BoxesLike, gt: BoxesLike):
    iou = overlaps(pred, gt)
    thr = success_thresholds()
    return thr, (iou[None, :] > thr[:, None]).mean(axis=1)


def success_rate_auc(pred: BoxesLike, gt: BoxesLike) -> float:
    return float(success_curve(pred, gt)[1].mean())


def normalized_precision_curve(pred: BoxesLike, gt: BoxesLike):
    errors = normalized_center_errors(pred, gt)
    thr = npr_thresholds()
    return thr, (errors[None, :] < thr[:, None]).mean(axis=1)


def normalized_precision(pred: BoxesLike, gt: BoxesLike) -> float:
    """AUC of the normalized precision curve over 0:0.01:0.5."""
    return float(normalized_precision_curve(pred, gt)[1].mean())


# ============================================================
# METRIC REPORT
# ============================================================

@dataclass
class MetricReport:
    pr: float
    sr: float
    npr: float
    threshold: float
    n_frames: int
    mode: str = "rgb"
    curves: Dict[str, List[float]] = field(default_factory=dict)
    per_sequence: Dict[str, Dict[str, float]] = field(default_factory=dict)
    per_attribute: Dict[str, "MetricReport"] = field(default_factory=dict)
    config_digest: str = ""

    def __post_init__(self):
        for name in ("pr", "sr", "npr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"metric {name} = {v} outside [0, 1]")

    @property
    def sequences(self) -> List[str]:
        return sorted(self.per_sequence)

    def to_dict(self) -> Dict:
        return {
            "pr": self.pr, "sr": self.sr, "npr": self.npr,
            "threshold": self.threshold, "n_frames": self.n_frames, "mode": self.mode,
            "curves": self.curves, "per_sequence": self.per_sequence,
            "per_attribute": {k: v.to_dict() for k, v in self.per_attribute.items()},
            "config_digest": self.config_digest,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        return cls(
            pr=d["pr"], sr=d["sr"], npr=d["npr"], threshold=d["threshold"],
            n_frames=d["n_frames"], mode=d.get("mode", "rgb"), curves=d.get("curves", {}),
            per_sequence=d.get("per_sequence", {}),
            per_attribute={k: cls.from_dict(v) for k, v in d.get("per_attribute", {}).items()},
            config_digest=d.get("config_digest", ""),
        )

    def write_json(self, path: str) -> str:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path

    def summary_table(self) -> pd.DataFrame:
        """One row for 'overall' plus one per attribute."""
        rows = [{"subset": "overall", "pr": self.pr, "sr": self.sr, "npr": self.npr,
                 "n_frames": self.n_frames}]
        for key, sub in self.per_attribute.items():
            rows.append({"subset": key, "pr": sub.pr, "sr": sub.sr, "npr": sub.npr,
                         "n_frames": sub.n_frames})
        return pd.DataFrame(rows)


def evaluate(trajectories: Mapping[str, BoxesLike], ground_truth: Mapping[str, BoxesLike],
             threshold: float = PR_THRESHOLD, mode: str = "rgb") -> MetricReport:
    """Pooled-frame report over a set of sequences against one GT mode."""
    if not trajectories:
        raise DataError("no trajectories to evaluate")
    missing = set(trajectories) - set(ground_truth)
    if missing:
        raise DataError(f"no ground truth for sequences {sorted(missing)}")

    ids = sorted(trajectories)
    preds = [_as_array(trajectories[i]) for i in ids]
    gts = [_as_array(ground_truth[i]) for i in ids]
    per_sequence = {}
    for i, p, g in zip(ids, preds, gts):
        per_sequence[i] = {
            "pr": precision_rate(p, g, threshold),
            "sr": success_rate_auc(p, g),
            "npr": normalized_precision(p, g),
            "n_frames": int(len(p)),
        }

    pred_all, gt_all = np.concatenate(preds), np.concatenate(gts)
    _, pr_curve = precision_curve(pred_all, gt_all)
    _, sr_curve = success_curve(pred_all, gt_all)
    _, npr_curve = normalized_precision_curve(pred_all, gt_all)
    return MetricReport(
        pr=precision_rate(pred_all, gt_all, threshold),
        sr=float(sr_curve.mean()),
        npr=float(npr_curve.mean()),
        threshold=float(threshold),
        n_frames=int(len(pred_all)),
        mode=mode,
        curves={"precision": pr_curve.tolist(), "success": sr_curve.tolist(),
                "normalized_precision": npr_curve.tolist()},
        per_sequence=per_sequence,
    )


def max_over_modes(report_rgb: MetricReport, report_tir: MetricReport,
                   per_sequence: bool = False) -> MetricReport:
    """Per-metric maximum of two single-mode reports over the same sequences.

    per_sequence=True takes the maximum inside each sequence first and
    re-pools the maxima frame-weighted.
    """
    if set(report_rgb.per_sequence) != set(report_tir.per_sequence):
        raise DataError("max_over_modes needs reports over the same sequence set")
    if report_rgb.threshold != report_tir.threshold:
        raise DataError("max_over_modes needs reports at the same PR threshold")

    curves = {k: np.maximum(report_rgb.curves[k], report_tir.curves[k]).tolist()
              for k in report_rgb.curves if k in report_tir.curves}
    seqs = {}
    for sid, a in report_rgb.per_sequence.items():
        b = report_tir.per_sequence[sid]
        seqs[sid] = {"pr": max(a["pr"], b["pr"]), "sr": max(a["sr"], b["sr"]),
                     "npr": max(a["npr"], b["npr"]), "n_frames": a["n_frames"]}

    if per_sequence and seqs:
        n = np.array([s["n_frames"] for s in seqs.values()], dtype=np.float64)
        pr, sr, npr = (float(np.dot(n, [s[k] for s in seqs.values()]) / n.sum())
                       for k in ("pr", "sr", "npr"))
    else:
        pr = max(report_rgb.pr, report_tir.pr)
        sr = max(report_rgb.sr, report_tir.sr)
        npr = max(report_rgb.npr, report_tir.npr)

    per_attribute = {}
    for key in report_rgb.per_attribute:
        if key in report_tir.per_attribute:
            per_attribute[key] = max_over_modes(report_rgb.per_attribute[key],
                                                report_tir.per_attribute[key], per_sequence)
    return MetricReport(pr=min(pr, 1.0), sr=min(sr, 1.0), npr=min(npr, 1.0),
                        threshold=report_rgb.threshold, n_frames=report_rgb.n_frames,
                        mode="max", curves=curves, per_sequence=seqs,
                        per_attribute=per_attribute, config_digest=report_rgb.config_digest)


def evaluate_modes(trajectories: Mapping[str, BoxesLike], clips: Mapping,
                   threshold: float = PR_THRESHOLD, per_sequence: bool = False):
    """(rgb report, tir report, max report) against a clip's two ground truths."""
    gt_rgb = {cid: clips[cid].gt_rgb for cid in trajectories if cid in clips}
    gt_tir = {cid: clips[cid].gt_tir for cid in trajectories if cid in clips}
    rgb = evaluate(trajectories, gt_rgb, threshold, mode="rgb")
    tir = evaluate(trajectories, gt_tir, threshold, mode="tir")
    return rgb, tir, max_over_modes(rgb, tir, per_sequence)


def attribute_report(trajectories: Mapping[str, BoxesLike], clips: Mapping,
                     threshold: float = PR_THRESHOLD, mode: str = "max",
                     attributes: Sequence = ATTRIBUTES,
                     per_sequence: bool = False) -> MetricReport:
    """Overall report plus one sub-report per attribute-tagged subset.

    `clips` maps clip_id -> object with `attribute`, `gt_rgb`, `gt_tir`.
    Attributes with no clips are left out with a warning.
    """
    if mode not in MODES:
        raise DataError(f"unknown evaluation mode {mode!r}; expected one of {MODES}")
    tags = {}
    for cid in trajectories:
        clip = clips.get(cid)
        if clip is None or getattr(clip, "attribute", None) is None:
            raise DataError(f"trajectory {cid!r} has no attribute-tagged clip")
        tags[cid] = AttributeId.parse(clip.attribute)

    def _report(ids):
        trajs = {cid: trajectories[cid] for cid in ids}
        rgb, tir, best = evaluate_modes(trajs, clips, threshold, per_sequence)
        return {"rgb": rgb, "tir": tir, "max": best}[mode]

    overall = _report(list(trajectories))
    for attr in attributes:
        attr = AttributeId.parse(attr)
        ids = [cid for cid, a in tags.items() if a is attr]
        if not ids:
            log.warning(f"attribute subset {attr.value} is empty; omitted from the report")
            continue
        overall.per_attribute[attr.value] = _report(ids)
    return overall
