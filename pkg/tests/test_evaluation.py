from types import SimpleNamespace

import numpy as np
import pytest

from ddf_config import PR_THRESHOLD_GTOT
from ddf_errors import DataError
from evaluation import (
    MetricReport, attribute_report, center_error, center_errors, evaluate,
    evaluate_modes, max_over_modes, normalized_precision, overlap, overlaps,
    precision_curve, precision_rate, success_rate_auc,
)
from geometry import BBox, Trajectory


def _shifted(dx_list, w=10.0, h=10.0):
    gt = np.array([[0.0, 0.0, w, h]] * len(dx_list))
    pred = gt.copy()
    pred[:, 0] += np.asarray(dx_list, dtype=np.float64)
    return pred, gt


def test_center_error_three_four_five():
    assert center_error(BBox(3, 4, 10, 10), BBox(0, 0, 10, 10)) == pytest.approx(5.0, abs=1e-12)


def test_overlap_one_third():
    assert overlap(BBox(0, 0, 2, 1), BBox(1, 0, 2, 1)) == pytest.approx(1 / 3, abs=1e-12)
    assert overlap(BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)) == 0.0


def test_precision_rate_example():
    pred, gt = _shifted([5, 25, 10, 30])
    assert precision_rate(pred, gt, 20) == pytest.approx(0.5, abs=1e-12)
    # inclusive threshold
    assert precision_rate(pred, gt, 25) == pytest.approx(0.75, abs=1e-12)
    assert precision_rate(pred, gt, PR_THRESHOLD_GTOT) == pytest.approx(0.25, abs=1e-12)
    thr, curve = precision_curve(pred, gt)
    assert len(thr) == 51 and curve[-1] == 1.0 and curve[0] == 0.0


def test_identical_boxes_give_grid_fractions():
    gt = np.array([[3.0, 4.0, 10.0, 6.0], [1.0, 2.0, 5.0, 5.0]])
    assert success_rate_auc(gt, gt) == pytest.approx(20 / 21, abs=1e-12)
    assert normalized_precision(gt, gt) == pytest.approx(50 / 51, abs=1e-12)
    assert precision_rate(gt, gt, 0.0) == 1.0


def test_npr_is_scale_invariant():
    rng = np.random.default_rng(0)
    gt = np.column_stack([rng.uniform(0, 50, (20, 2)), rng.uniform(5, 20, (20, 2))])
    pred = gt + rng.normal(0, 2, gt.shape)
    pred[:, 2:] = np.abs(pred[:, 2:]) + 1
    assert normalized_precision(2 * pred, 2 * gt) == pytest.approx(normalized_precision(pred, gt))


def test_overlaps_match_brute_force_oracle():
    rng = np.random.default_rng(42)
    pred = np.column_stack([rng.uniform(0, 20, (1000, 2)), rng.uniform(1, 10, (1000, 2))])
    gt = np.column_stack([rng.uniform(0, 20, (1000, 2)), rng.uniform(1, 10, (1000, 2))])
    expected = []
    for (px, py, pw, ph), (gx, gy, gw, gh) in zip(pred.tolist(), gt.tolist()):
        iw = max(0.0, min(px + pw, gx + gw) - max(px, gx))
        ih = max(0.0, min(py + ph, gy + gh) - max(py, gy))
        inter = iw * ih
        expected.append(inter / (pw * ph + gw * gh - inter))
    assert np.allclose(overlaps(pred, gt), expected, atol=1e-12, rtol=0)

    errors = center_errors(pred, gt)
    oracle = [((px + pw / 2) - (gx + gw / 2)) ** 2 + ((py + ph / 2) - (gy + gh / 2)) ** 2
              for (px, py, pw, ph), (gx, gy, gw, gh) in zip(pred.tolist(), gt.tolist())]
    assert np.allclose(errors, np.sqrt(oracle), atol=1e-12, rtol=0)
    sr = np.mean([[o > t for o in expected] for t in np.linspace(0, 1, 21)])
    assert success_rate_auc(pred, gt) == pytest.approx(sr, abs=1e-12)


def test_mismatched_or_empty_inputs_are_data_errors():
    with pytest.raises(DataError):
        overlaps(np.zeros((2, 4)), np.zeros((3, 4)))
    with pytest.raises(DataError):
        center_errors(np.zeros((0, 4)), np.zeros((0, 4)))
    with pytest.raises(DataError):
        normalized_precision(np.ones((1, 4)), np.array([[0.0, 0.0, 0.0, 1.0]]))


def test_report_values_are_range_checked():
    with pytest.raises(DataError):
        MetricReport(pr=1.2, sr=0.5, npr=0.5, threshold=20, n_frames=1)


def test_evaluate_pools_frames():
    pred_a, gt_a = _shifted([0, 0, 0])
    pred_b, gt_b = _shifted([30])
    report = evaluate({"a": pred_a, "b": pred_b}, {"a": gt_a, "b": gt_b}, threshold=20)
    assert report.pr == pytest.approx(0.75)
    assert report.n_frames == 4
    assert report.per_sequence["a"]["pr"] == 1.0 and report.per_sequence["b"]["pr"] == 0.0
    seq_mean = (3 * report.per_sequence["a"]["sr"] + report.per_sequence["b"]["sr"]) / 4
    assert report.sr == pytest.approx(seq_mean)


def test_evaluate_accepts_trajectories():
    traj = Trajectory([BBox(0, 0, 10, 10), BBox(5, 0, 10, 10)], [0, 0])
    report = evaluate({"s": traj}, {"s": [BBox(0, 0, 10, 10)] * 2}, threshold=5)
    assert report.pr == 1.0


def _clip(attribute, gt_rgb, gt_tir):
    return SimpleNamespace(attribute=attribute, gt_rgb=gt_rgb, gt_tir=gt_tir)


def test_max_over_modes_takes_better_mode():
    gt_rgb = np.array([[0.0, 0.0, 10.0, 10.0]] * 4)
    gt_tir = gt_rgb + np.array([25.0, 0, 0, 0])
    pred = gt_tir.copy()
    clips = {"s": _clip("GEN", gt_rgb, gt_tir)}
    rgb, tir, best = evaluate_modes({"s": pred}, clips, threshold=20)
    assert rgb.pr == 0.0 and tir.pr == 1.0
    assert best.pr == 1.0 and best.mode == "max"
    assert best.sr == pytest.approx(max(rgb.sr, tir.sr))


def test_max_over_modes_per_sequence_differs_from_aggregate():
    gt = np.array([[0.0, 0.0, 10.0, 10.0]] * 2)
    far = gt + np.array([40.0, 0, 0, 0])
    clips = {
        "a": _clip("GEN", gt, far),       # tracker follows RGB truth
        "b": _clip("GEN", far, gt),       # tracker follows TIR truth
    }
    trajs = {"a": gt, "b": gt}
    _, _, aggregate = evaluate_modes(trajs, clips, threshold=20)
    _, _, per_seq = evaluate_modes(trajs, clips, threshold=20, per_sequence=True)
    assert aggregate.pr == pytest.approx(0.5)
    assert per_seq.pr == pytest.approx(1.0)


def test_max_over_modes_requires_same_sequences():
    a = evaluate({"a": np.ones((1, 4))}, {"a": np.ones((1, 4))})
    b = evaluate({"b": np.ones((1, 4))}, {"b": np.ones((1, 4))})
    with pytest.raises(DataError):
        max_over_modes(a, b)


def test_attribute_report_splits_by_tag(caplog):
    gt = np.array([[0.0, 0.0, 10.0, 10.0]] * 3)
    miss = gt + np.array([50.0, 0, 0, 0])
    clips = {"occ_000": _clip("OCC", gt, gt), "gen_000": _clip("GEN", gt, gt)}
    report = attribute_report({"occ_000": miss, "gen_000": gt}, clips, threshold=20)
    assert report.pr == pytest.approx(0.5)
    assert report.per_attribute["OCC"].pr == 0.0
    assert report.per_attribute["GEN"].pr == 1.0
    assert "LR" not in report.per_attribute
    assert "LR is empty" in caplog.text
    table = report.summary_table()
    assert table["subset"].tolist()[0] == "overall"

    back = MetricReport.from_dict(report.to_dict())
    assert back.per_attribute["GEN"].pr == 1.0


def test_attribute_report_needs_tags():
    gt = np.ones((1, 4))
    with pytest.raises(DataError):
        attribute_report({"x": gt}, {"x": SimpleNamespace(attribute=None, gt_rgb=gt, gt_tir=gt)})
    with pytest.raises(DataError):
        attribute_report({"x": gt}, {})


def test_pr_npr_and_mode_max_match_brute_force_oracle():
    rng = np.random.default_rng(7)
    n = 1000
    gt = np.column_stack([rng.uniform(0, 100, (n, 2)), rng.uniform(5, 30, (n, 2))])
    pred = gt + np.column_stack([rng.normal(0, 15, (n, 2)), rng.normal(0, 2, (n, 2))])
    pred[:, 2:] = np.maximum(pred[:, 2:], 1.0)

    rows = list(zip(pred.tolist(), gt.tolist()))
    centre = lambda b: (b[0] + b[2] / 2, b[1] + b[3] / 2)
    errs, nerrs = [], []
    for p, g in rows:
        (px, py), (gx, gy) = centre(p), centre(g)
        errs.append(((px - gx) ** 2 + (py - gy) ** 2) ** 0.5)
        nerrs.append((((px - gx) / g[2]) ** 2 + ((py - gy) / g[3]) ** 2) ** 0.5)
    pr = sum(e <= 20 for e in errs) / n
    npr = sum(sum(e < k / 100 for e in nerrs) for k in range(51)) / (51 * n)
    assert precision_rate(pred, gt, 20) == pytest.approx(pr, abs=1e-12)
    assert normalized_precision(pred, gt) == pytest.approx(npr, abs=1e-12)

    shifted = gt + np.array([30.0, 0, 0, 0])
    rgb = evaluate({"s": pred}, {"s": gt}, threshold=20)
    tir = evaluate({"s": pred}, {"s": shifted}, threshold=20)
    best = max_over_modes(rgb, tir)
    assert best.pr == pytest.approx(max(rgb.pr, tir.pr), abs=1e-12)
    assert best.sr == pytest.approx(max(rgb.sr, tir.sr), abs=1e-12)
    assert best.npr == pytest.approx(max(rgb.npr, tir.npr), abs=1e-12)
