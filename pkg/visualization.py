"""
Visualization - Feature Heat Maps, Metric Plots, Gate Traces
=============================================================
All figures are written with the Agg backend; nothing is shown.

  - save_ddf_heatmaps   per-channel-mean heat maps of each branch's fused
                        map, the aggregated map and the enhanced streams
  - plot_precision / plot_success   curves stored in a MetricReport
  - plot_attribute_bars             per-attribute PR / SR / NPR
  - plot_gate_trace                 the five gates of a branch over frames

Change log:
  2026-10-18  Initial implementation
"""

import logging
import os
from typing import Dict, List, Mapping, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import torch

from ddf_config import GATE_COLUMNS, PR_THRESHOLD
from evaluation import MetricReport, precision_thresholds, success_thresholds

log = logging.getLogger("ddfnet.visualization")

Reports = Union[MetricReport, Mapping[str, MetricReport]]


def _as_named(reports: Reports) -> Dict[str, MetricReport]:
    if isinstance(reports, MetricReport):
        return {reports.mode: reports}
    return dict(reports)


def feature_heatmap(f: torch.Tensor) -> np.ndarray:
    """Per-channel mean of the first sample, (H, W) float64."""
    if f.dim() == 4:
        f = f[0]
    return f.detach().cpu().double().mean(dim=0).numpy()


def save_heatmap(f: torch.Tensor, path: str, title: str = "") -> str:
    fig, ax = plt.subplots(figsize=(3, 3))
    im = ax.imshow(feature_heatmap(f), cmap="jet")
    ax.set_title(title, fontsize=8)
    ax.axis("off")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return path


def save_ddf_heatmaps(ddf_outputs: Mapping, out_dir: str, prefix: str = "") -> List[str]:
    """Heat maps for every DDF layer in `ddf_outputs` ({layer: DDFOutput})."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for layer, out in sorted(ddf_outputs.items()):
        stem = os.path.join(out_dir, f"{prefix}layer{layer}")
        for attr, branch in out.branches.items():
            paths.append(save_heatmap(branch.fused, f"{stem}_branch_{attr}.png",
                                      f"layer {layer} {attr} branch"))
        if out.aggregated is not None:
            paths.append(save_heatmap(out.aggregated, f"{stem}_aggregated.png",
                                      f"layer {layer} aggregated"))
        paths.append(save_heatmap(out.rgb, f"{stem}_enhanced_rgb.png", f"layer {layer} RGB out"))
        paths.append(save_heatmap(out.tir, f"{stem}_enhanced_tir.png", f"layer {layer} TIR out"))
    log.info(f"{len(paths)} heat maps written to {out_dir}")
    return paths


def plot_precision(reports: Reports, path: str, threshold: float = PR_THRESHOLD) -> str:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for name, rep in _as_named(reports).items():
        curve = rep.curves["precision"]
        ax.plot(precision_thresholds(len(curve) - 1), curve, label=f"{name} [{rep.pr:.3f}]")
    ax.axvline(threshold, color="gray", linestyle=":", linewidth=0.8)
    ax.set_xlabel("Location error threshold (px)")
    ax.set_ylabel("Precision")
    ax.set_ylim(0, 1.01)
    ax.legend(fontsize=7, loc="lower right")
    ax.set_title("Precision plot")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_success(reports: Reports, path: str) -> str:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for name, rep in _as_named(reports).items():
        ax.plot(success_thresholds(), rep.curves["success"], label=f"{name} [{rep.sr:.3f}]")
    ax.set_xlabel("Overlap threshold")
    ax.set_ylabel("Success rate")
    ax.set_ylim(0, 1.01)
    ax.legend(fontsize=7, loc="lower left")
    ax.set_title("Success plot")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def attribute_table(report: MetricReport) -> pd.DataFrame:
    return report.summary_table().set_index("subset")


def plot_attribute_bars(report: MetricReport, path: str) -> str:
    table = attribute_table(report)[["pr", "sr", "npr"]]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    table.plot.bar(ax=ax, rot=0)
    ax.set_ylim(0, 1.0)
    ax.set_ylabel("score")
    ax.set_title("Per-attribute results")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_gate_trace(trace: pd.DataFrame, path: str, title: str = "") -> str:
    fig, ax = plt.subplots(figsize=(6, 3))
    for col in GATE_COLUMNS:
        ax.plot(trace["frame_index"], trace[col], label=col)
    ax.set_ylim(0, 1.0)
    ax.set_xlabel("frame")
    ax.set_ylabel("gate")
    ax.legend(fontsize=6, ncol=5, loc="upper center")
    ax.set_title(title)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
