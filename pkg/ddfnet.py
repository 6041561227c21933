"""
DDFNet - Command-Line Interface
================================
Generate synthetic data, run the training stages, track + evaluate, trace
branch gates and dump feature heat maps, run the hierarchical ablation.

Usage:
    python ddfnet.py generate --profile toy
    python ddfnet.py train --profile toy --stage 1-GEN
    python ddfnet.py train --profile toy --stage 1-ATTR:OCC
    python ddfnet.py train --profile toy --stage all
    python ddfnet.py eval  --profile toy --threshold 5
    python ddfnet.py trace --profile toy --clip occ_000 --branch OCC
    python ddfnet.py ablate --profile toy

Common flags: --config FILE.ini, --profile {standard,toy}, --seed N,
--out DIR (or $DDFNET_OUT_DIR), --verbose.

Output layout under the output directory:
    config.ini               resolved run config
    data/                    index.json + one folder per clip
    checkpoints/             stage_<stage>.pt, latest.pt, specialization.json
    training_log.tsv         one line per epoch
    eval/                    reports, trajectories, plots
    trace/<clip>/            gate CSVs, segment means, gate plots, heat maps
    ablation/                ablation.json, ablation.csv
    logs/system.log

Exit codes: 0 ok, 1 internal, 2 config, 3 lineage, 4 data, 5 shape, 6 io.
Failures print one JSON line {"error", "message", "exit_code"} on stderr.

Change log:
  2026-10-18  Initial implementation
  2026-10-18  trace: segment gate means over the degraded interval
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

import pandas as pd
import torch

from ddf_config import (
    ATTRIBUTES, AttributeId, DEFAULT_PROFILE, EXIT_CODES, PROFILES, SYSTEM_LOG_FILE,
    TRAINING_LOG_NAME,
)
from ddf_errors import ConfigError, DataError, DDFError
from dynamic_branch import (
    branch_structure_trace, degraded_interval, export_gate_trace, segment_mean_gates,
)
from evaluation import MetricReport, attribute_report, evaluate_modes
from run_config import RunConfig
from run_logger import TrainingLog, get_system_logger
from synthetic_data import ManifestIndex, audit_index, make_attribute_subsets
from tracker_core import (
    DDFNet, backbone_forward, crop_region, frame_to_tensors,
    search_region, track_sequence,
)
from training_pipeline import (
    Checkpoint, build_model, canonical_stage, full_stage_sequence, model_config_from,
    parse_stage, run_stage, specialization_report, stage_route,
)
from visualization import (
    plot_attribute_bars, plot_gate_trace, plot_precision, plot_success,
    save_ddf_heatmaps,
)

log = logging.getLogger("ddfnet.cli")

ABLATION_LAYER_SETS = ((), (1,), (1, 2), (1, 2, 3))
ABLATION_ROUTES = ("sum", "afm", "full")


# ────────────────────────────────────────────────────────────
# Helpers
# ────────────────────────────────────────────────────────────
def banner(msg: str):
    width = 60
    print("\n" + "=" * width)
    print(f"  {msg}")
    print("=" * width)


def _paths(cfg: RunConfig) -> Dict[str, str]:
    root = cfg.out_dir
    return {
        "root": root,
        "data": os.path.join(root, "data"),
        "checkpoints": os.path.join(root, "checkpoints"),
        "eval": os.path.join(root, "eval"),
        "trace": os.path.join(root, "trace"),
        "ablation": os.path.join(root, "ablation"),
        "training_log": os.path.join(root, TRAINING_LOG_NAME),
    }


def checkpoint_path(cfg: RunConfig, stage: str) -> str:
    safe = canonical_stage(stage).replace(":", "_")
    return os.path.join(_paths(cfg)["checkpoints"], f"stage_{safe}.pt")


def _latest(cfg: RunConfig) -> str:
    return os.path.join(_paths(cfg)["checkpoints"], "latest.pt")


def _load_index(cfg: RunConfig) -> ManifestIndex:
    path = _paths(cfg)["data"]
    if not os.path.exists(os.path.join(path, "index.json")):
        raise DataError(f"no manifest index under {path}; run `generate` first")
    return ManifestIndex.read(path)


def _default_resume(cfg: RunConfig, stage: str) -> Optional[str]:
    key, _ = parse_stage(stage)
    if key == "0":
        return None
    if key == "1-GEN":
        warm = checkpoint_path(cfg, "0")
        return warm if os.path.exists(warm) else None
    latest = _latest(cfg)
    return latest if os.path.exists(latest) else None


def _write_json(obj, path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
    return path


def model_for(ckpt: Checkpoint, cfg: RunConfig) -> DDFNet:
    """Model rebuilt from a checkpoint's own config, on its last route."""
    model = build_model(model_config_from(ckpt), cfg.seed,
                        cfg.torch_dtype, cfg.deterministic)
    ckpt.restore(model)
    if ckpt.stages:
        model.set_fusion_route(stage_route(ckpt.stages[-1]))
    return model


# ────────────────────────────────────────────────────────────
# Commands
# ────────────────────────────────────────────────────────────
def cmd_generate(cfg: RunConfig, args) -> int:
    """Generate the attribute subsets and write index + clips."""
    banner("Generate synthetic RGB/TIR clips")
    paths = _paths(cfg)
    index = make_attribute_subsets(cfg.scene, cfg.training.clips_per_attribute, cfg.seed)
    problems = audit_index(index)
    if problems:
        raise DataError(f"{len(problems)} audit problems, first: {problems[0]}")
    index.write(paths["data"], cfg.frame_format)
    cfg.write_ini(os.path.join(paths["root"], "config.ini"))
    for key, ids in index.subsets.items():
        print(f"  [DATA] {key:<4} {len(ids)} clips")
    print(f"  [DATA] index digest {index.digest()[:16]}  ->  {paths['data']}")
    return EXIT_CODES["ok"]


def _train_one(cfg: RunConfig, stage: str, index: ManifestIndex,
               resume: Optional[str], verbose: bool) -> Checkpoint:
    stage = canonical_stage(stage)
    ckpt = Checkpoint.load(resume) if resume else None
    stage_cfg = cfg.stage_config(stage)
    clips = index.load_split(stage_cfg.split)
    model = build_model(cfg.model, cfg.seed, cfg.torch_dtype, cfg.deterministic)
    tlog = TrainingLog(_paths(cfg)["training_log"])
    print(f"  [TRAIN] stage {stage}: {len(clips)} clips, {stage_cfg.epochs} epochs x "
          f"{stage_cfg.iterations_per_epoch} iterations, resume={resume or '-'}")
    ckpt = run_stage(stage, model, ckpt, clips, stage_cfg, training_log=tlog,
                     config_digest=cfg.digest(), verbose=verbose)
    ckpt.save(checkpoint_path(cfg, stage))
    ckpt.save(_latest(cfg))
    record = ckpt.last_record()
    print(f"  [TRAIN] stage {stage} done: final epoch loss "
          f"{record['epoch_losses'][-1] if record['epoch_losses'] else float('nan'):.5f}")
    report = specialization_report(ckpt)
    if report:
        _write_json(report, os.path.join(_paths(cfg)["checkpoints"], "specialization.json"))
    return ckpt


def cmd_train(cfg: RunConfig, args) -> int:
    """Run one training stage (or the whole sequence with --stage all)."""
    banner(f"Train - stage {args.stage}")
    index = _load_index(cfg)
    if args.stage == "all":
        resume = None
        for stage in full_stage_sequence(include_warmup=True):
            ckpt = _train_one(cfg, stage, index, resume, args.verbose)
            resume = checkpoint_path(cfg, stage)
    else:
        resume = args.resume or _default_resume(cfg, args.stage)
        ckpt = _train_one(cfg, args.stage, index, resume, args.verbose)
    print(f"  [TRAIN] lineage: {' -> '.join(ckpt.stages)}")
    return EXIT_CODES["ok"]


def evaluate_checkpoint(cfg: RunConfig, ckpt: Checkpoint, index: ManifestIndex,
                        out_dir: str, threshold: float, split: str = "all",
                        route: Optional[str] = None, per_sequence: bool = False,
                        plots: bool = True) -> MetricReport:
    """Track every clip of a split and write reports, trajectories, plots."""
    model = model_for(ckpt, cfg)
    if route is not None:
        model.set_fusion_route(route)
    os.makedirs(os.path.join(out_dir, "trajectories"), exist_ok=True)
    clips = {cid: index.clip(cid) for cid in index.split(split)}
    trajectories = {}
    for cid, clip in clips.items():
        traj = track_sequence(clip, model, cfg.tracking)
        traj.write(os.path.join(out_dir, "trajectories", f"{cid}.txt"))
        trajectories[cid] = traj

    report = attribute_report(trajectories, clips, threshold, mode="max",
                              per_sequence=per_sequence)
    rgb, tir, _ = evaluate_modes(trajectories, clips, threshold, per_sequence)
    for rep in (report, rgb, tir):
        rep.config_digest = cfg.digest()
    report.write_json(os.path.join(out_dir, "report.json"))
    rgb.write_json(os.path.join(out_dir, "report_rgb.json"))
    tir.write_json(os.path.join(out_dir, "report_tir.json"))
    report.summary_table().to_csv(os.path.join(out_dir, "attributes.csv"), index=False)
    if plots:
        plot_precision({"rgb": rgb, "tir": tir, "max": report},
                       os.path.join(out_dir, "precision.png"), threshold)
        plot_success({"rgb": rgb, "tir": tir, "max": report}, os.path.join(out_dir, "success.png"))
        plot_attribute_bars(report, os.path.join(out_dir, "attributes.png"))
    return report


def cmd_eval(cfg: RunConfig, args) -> int:
    """Track all clips with a checkpoint and write metric reports."""
    banner("Evaluate")
    ckpt = Checkpoint.load(args.resume or _latest(cfg))
    index = _load_index(cfg)
    threshold = args.threshold if args.threshold is not None else cfg.pr_threshold
    out_dir = _paths(cfg)["eval"]
    report = evaluate_checkpoint(cfg, ckpt, index, out_dir, threshold, args.split,
                                 per_sequence=args.per_sequence)
    print(f"  [EVAL] lineage {' -> '.join(ckpt.stages)}, threshold {threshold:g} px")
    print(report.summary_table().to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"  [EVAL] reports written to {out_dir}")
    return EXIT_CODES["ok"]


def cmd_trace(cfg: RunConfig, args) -> int:
    """Per-frame gate traces and DDF heat maps for one clip."""
    banner("Trace branch structure")
    ckpt = Checkpoint.load(args.resume or _latest(cfg))
    index = _load_index(cfg)
    model = model_for(ckpt, cfg)
    if not model.config.ddf_layers:
        raise ConfigError("model has no DDF layers to trace")
    clip_id = args.clip or index.all[0]
    if clip_id not in index.all:
        raise DataError(f"clip {clip_id!r} not in the manifest index")
    clip = index.clip(clip_id)
    attrs = [AttributeId.parse(args.branch)] if args.branch else list(ATTRIBUTES)
    out_dir = os.path.join(_paths(cfg)["trace"], clip_id)
    os.makedirs(out_dir, exist_ok=True)

    # Backbone outputs per frame, cropped around the RGB ground truth
    size = model.config.input_resolution
    outputs = []
    with torch.no_grad():
        for t in range(len(clip)):
            rgb, tir = frame_to_tensors(clip.frames_rgb[t], clip.frames_tir[t], cfg.torch_dtype)
            region = search_region(clip.gt_rgb[t], cfg.tracking.search_area_factor)
            outputs.append(backbone_forward(crop_region(rgb, region, size),
                                            crop_region(tir, region, size),
                                            model.backbone, model.route))

    interval = degraded_interval(clip.metadata)
    written = []
    for layer in model.config.ddf_layers:
        frames = [o.ddf_inputs[layer] for o in outputs]
        for attr in attrs:
            branch = model.backbone.ddf[str(layer)].branches[attr.value]
            trace = branch_structure_trace(frames, branch)
            stem = os.path.join(out_dir, f"gates_{attr.value}_layer{layer}")
            written.append(export_gate_trace(trace, stem + ".csv"))
            plot_gate_trace(trace, stem + ".png", f"{clip_id} {attr.value} layer {layer}")
            if interval is not None:
                segment_mean_gates(trace, *interval).to_csv(stem + "_segments.csv")
    frame = min(args.frame, len(clip) - 1)
    save_ddf_heatmaps(outputs[frame].ddf, out_dir, prefix=f"frame{frame:03d}_")
    _write_json({"clip_id": clip_id, "frames": len(clip), "route": model.route,
                 "lineage": ckpt.stages, "config_digest": cfg.digest(),
                 "degraded_interval": list(interval) if interval else None,
                 "gate_files": [os.path.basename(p) for p in written]},
                os.path.join(out_dir, "trace.json"))
    print(f"  [TRACE] {len(written)} gate traces for {clip_id} ({len(clip)} frames) -> {out_dir}")
    return EXIT_CODES["ok"]


def cmd_ablate(cfg: RunConfig, args) -> int:
    """Hierarchical (ddf_layers) and aggregation-route ablations."""
    banner("Ablation")
    index = _load_index(cfg)
    depth = len(cfg.model.channels)
    rows = []
    full_ckpt = None
    for layers in ABLATION_LAYER_SETS:
        if layers and max(layers) > depth:
            continue
        label = "{" + ",".join(str(l) for l in layers) + "}"
        run_cfg = replace(cfg, model=replace(cfg.model, ddf_layers=layers),
                          out_dir=os.path.join(_paths(cfg)["ablation"], f"layers_{'_'.join(map(str, layers)) or 'none'}"))
        stages = ["0", "1-GEN"] if not layers else full_stage_sequence(include_warmup=True)
        resume = None
        for stage in stages:
            ckpt = _train_one(run_cfg, stage, index, resume, args.verbose)
            resume = checkpoint_path(run_cfg, stage)
        report = evaluate_checkpoint(run_cfg, ckpt, index, _paths(run_cfg)["eval"],
                                     cfg.pr_threshold, plots=False)
        rows.append({"variant": "ddf_layers", "setting": label,
                     "pr": report.pr, "sr": report.sr, "npr": report.npr})
        full_ckpt = ckpt if layers else full_ckpt

    if full_ckpt is not None:
        base = _paths(cfg)["ablation"]
        for route in ABLATION_ROUTES:
            out = os.path.join(base, f"route_{route}")
            report = evaluate_checkpoint(cfg, full_ckpt, index, out, cfg.pr_threshold,
                                         route=route, plots=False)
            rows.append({"variant": "route", "setting": route,
                         "pr": report.pr, "sr": report.sr, "npr": report.npr})

    table = pd.DataFrame(rows)
    base = _paths(cfg)["ablation"]
    os.makedirs(base, exist_ok=True)
    table.to_csv(os.path.join(base, "ablation.csv"), index=False)
    _write_json({"config_digest": cfg.digest(), "rows": rows}, os.path.join(base, "ablation.json"))
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return EXIT_CODES["ok"]


# ────────────────────────────────────────────────────────────
# Main
# ────────────────────────────────────────────────────────────
COMMANDS = {
    "generate": cmd_generate,
    "train":    cmd_train,
    "eval":     cmd_eval,
    "trace":    cmd_trace,
    "ablate":   cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="DDFNet - dynamic disentangled fusion RGBT tracking")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", help="INI run config")
    parser.add_argument("--profile", choices=sorted(PROFILES), default=None,
                        help=f"settings profile (default {DEFAULT_PROFILE})")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--stage", default="all",
                        help="train: 0, 1-GEN, 1-ATTR:<ATTR>, 2, 3 or all")
    parser.add_argument("--resume", default=None, help="checkpoint to resume / evaluate")
    parser.add_argument("--threshold", type=float, default=None,
                        help="eval: PR threshold in pixels (20 default, 5 for GTOT-style)")
    parser.add_argument("--split", default="all", help="eval: split to evaluate")
    parser.add_argument("--per-sequence", action="store_true",
                        help="eval: maximize over modes per sequence")
    parser.add_argument("--clip", default=None, help="trace: clip id")
    parser.add_argument("--branch", default=None, help="trace: branch (EI, TC, OCC, LR, SA, GEN)")
    parser.add_argument("--frame", type=int, default=0, help="trace: frame for heat maps")
    parser.add_argument("--verbose", action="store_true")
    return parser


def _fail(category: str, message: str) -> int:
    code = EXIT_CODES.get(category, EXIT_CODES["internal"])
    print(json.dumps({"error": category, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, profile=args.profile, seed=args.seed, out_dir=args.out)
        os.makedirs(cfg.out_dir, exist_ok=True)
        get_system_logger(log_file=os.path.join(cfg.out_dir, SYSTEM_LOG_FILE))
        log.info(f"{args.command} profile={cfg.profile} seed={cfg.seed} digest={cfg.digest()[:12]}")
        if args.verbose:
            print(f"  Profile: {cfg.profile}   Seed: {cfg.seed}   Out: {cfg.out_dir}")
        return COMMANDS[args.command](cfg, args)
    except DDFError as e:
        log.info(f"{args.command} failed: {e}")
        return _fail(e.category, str(e))
    except OSError as e:
        log.info(f"{args.command} I/O failure: {e}")
        return _fail("io", str(e))
    except Exception as e:  # noqa: BLE001
        log.info(f"{args.command} crashed", exc_info=True)
        return _fail("internal", f"{type(e).__name__}: {e}")


if __name__ == "__main__":
    sys.exit(main())
