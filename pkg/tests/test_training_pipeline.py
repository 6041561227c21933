from dataclasses import replace

import numpy as np
import pytest
import torch

from ddf_config import ATTRIBUTES, SPECIFIC_ATTRIBUTES
from ddf_errors import ConfigError, DataError, LineageError
from evaluation import center_errors
from run_config import RunConfig
from run_logger import TrainingLog
from synthetic_data import make_attribute_subsets
from tracker_core import TrackingPolicy, track_sequence
from training_pipeline import (
    Checkpoint, FreezeMask, StageConfig, build_model, canonical_stage, check_lineage,
    full_stage_sequence, loss_reduction, make_optimizer, parse_stage,
    run_stage, specialization_report, stage_route, stage_split, validation_loss,
)

D = torch.float64


def _cfg(stage, **kwargs):
    params = dict(profile="toy", seed=0, epochs=1, iterations_per_epoch=2,
                  batch_size=2, validation_batches=1)
    params.update(kwargs)
    return StageConfig.for_stage(stage, **params)


def _run(stage, model, ckpt, index, **kwargs):
    cfg = _cfg(stage)
    return run_stage(stage, model, ckpt, index.load_split(cfg.split), cfg, **kwargs)


@pytest.fixture
def gen_ckpt(tiny_model, tiny_index):
    return _run("1-GEN", tiny_model, None, tiny_index)


def _with_attr_lineage(ckpt):
    """Checkpoint whose lineage claims every 1-ATTR stage (for stage 2/3 tests)."""
    fake = [{"stage": f"1-ATTR:{a.value}"} for a in SPECIFIC_ATTRIBUTES]
    return Checkpoint(state=dict(ckpt.state), model_config=ckpt.model_config,
                      lineage=ckpt.lineage + fake, seed=ckpt.seed)


# ------------------------------------------------------------
# stage names and tables
# ------------------------------------------------------------

def test_stage_names():
    assert parse_stage("1-ATTR:occ")[1].value == "OCC"
    assert canonical_stage("1-attr:sa") == "1-ATTR:SA"
    assert stage_route("0") == "none"
    assert stage_route("1-GEN") == "bypass:GEN"
    assert stage_route("1-ATTR:LR") == "bypass:LR"
    assert stage_route("2") == "afm" and stage_route("3") == "full"
    assert stage_split("0") == "GEN" and stage_split("1-ATTR:EI") == "EI"
    assert stage_split("2") == "all"
    for bad in ("4", "1-ATTR", "1-ATTR:GEN", "1-ATTR:XX"):
        with pytest.raises(ConfigError):
            parse_stage(bad)


def test_learning_rate_tables():
    gen = StageConfig.for_stage("1-GEN")
    assert gen.learning_rates == {"branch_GEN": 1e-5, "backbone": 5e-6, "predictor": 5e-6}
    assert gen.epochs == 30
    attr = StageConfig.for_stage("1-ATTR:OCC")
    assert attr.learning_rates == {"branch_OCC": 1e-5}
    assert attr.split == "OCC"
    final = StageConfig.for_stage("3")
    assert final.epochs == 60
    rates = final.resolve_rates(["backbone", "predictor", "afm", "efm", "branch_GEN"])
    assert rates == {"efm": 1e-5, "backbone": 1e-6, "predictor": 1e-6, "afm": 1e-6, "branch_GEN": 1e-6}
    toy = StageConfig.for_stage("2", profile="toy")
    assert toy.learning_rates == {"afm": pytest.approx(1e-3)}
    with pytest.raises(ConfigError):
        StageConfig(stage="2", learning_rates={"afm": 0.0})
    with pytest.raises(ConfigError):
        StageConfig.for_stage("2", profile="huge")


def test_freeze_mask_and_optimizer(tiny_model):
    with pytest.raises(ConfigError):
        FreezeMask(frozenset({"nope"})).validate(list(tiny_model.parameter_groups()))
    groups = tiny_model.parameter_groups()
    FreezeMask(frozenset(groups) - {"afm"}).apply(tiny_model)
    assert all(p.requires_grad for _, p in groups["afm"])
    assert not any(p.requires_grad for _, p in groups["backbone"])
    opt = make_optimizer(tiny_model, {"afm": 1e-3}, 1e-4)
    assert len(opt.param_groups) == 1
    assert len(opt.param_groups[0]["params"]) == len(groups["afm"])
    assert opt.param_groups[0]["weight_decay"] == 1e-4


# ------------------------------------------------------------
# lineage
# ------------------------------------------------------------

def _ckpt(*stages):
    return Checkpoint(state={}, model_config={}, lineage=[{"stage": s} for s in stages])


def test_lineage_rules():
    check_lineage("0", None)
    check_lineage("1-GEN", None)
    check_lineage("1-GEN", _ckpt("0"))
    check_lineage("1-ATTR:OCC", _ckpt("1-GEN"))
    with pytest.raises(LineageError):
        check_lineage("1-GEN", _ckpt("0", "1-GEN"))
    with pytest.raises(LineageError):
        check_lineage("1-ATTR:OCC", None)
    with pytest.raises(LineageError):
        check_lineage("1-ATTR:OCC", _ckpt("0"))
    with pytest.raises(LineageError):
        check_lineage("2", _ckpt("1-GEN", "1-ATTR:OCC"))
    with pytest.raises(LineageError):
        check_lineage("3", _with_attr_lineage(_ckpt("1-GEN")))
    check_lineage("3", _ckpt("2"))


def test_stage_two_refuses_incomplete_lineage(tiny_model, tiny_index, gen_ckpt):
    with pytest.raises(LineageError):
        _run("2", tiny_model, gen_ckpt, tiny_index)


def test_empty_split_is_a_data_error(tiny_model):
    with pytest.raises(DataError):
        run_stage("0", tiny_model, None, [], _cfg("0"))


# ------------------------------------------------------------
# training stages
# ------------------------------------------------------------

def test_stage_one_gen_trains_and_saves_its_groups(tiny_model, tiny_index, tmp_path):
    tlog = TrainingLog(str(tmp_path / "training_log.tsv"))
    ckpt = _run("1-GEN", tiny_model, None, tiny_index, training_log=tlog, config_digest="abc")
    record = ckpt.last_record()
    assert ckpt.stages == ["1-GEN"]
    assert record["trained"] == ["backbone", "branch_GEN", "predictor"]
    assert record["saved_groups"] == ["backbone", "branch_GEN", "predictor"]
    for g in record["frozen"]:
        assert record["hashes_before"][g] == record["hashes_after"][g]
    assert record["hashes_before"]["branch_GEN"] != record["hashes_after"]["branch_GEN"]
    assert {tiny_model.group_of(k) for k in ckpt.state} == {"backbone", "branch_GEN", "predictor"}
    assert tiny_model.route == "bypass:GEN"
    assert all(p.requires_grad for p in tiny_model.parameters())

    log = tlog.read()
    assert len(log) == 1
    assert log.loc[0, "stage"] == "1-GEN" and log.loc[0, "config_digest"] == "abc"


def test_attribute_stage_only_touches_its_branch(tiny_config, tiny_index, gen_ckpt):
    model = build_model(tiny_config, seed=0, dtype=D)
    ckpt = _run("1-ATTR:OCC", model, gen_ckpt, tiny_index)
    record = ckpt.last_record()
    assert record["trained"] == ["branch_OCC"]
    assert set(record["frozen"]) == set(model.parameter_groups()) - {"branch_OCC"}
    for g in record["frozen"]:
        assert record["hashes_before"][g] == record["hashes_after"][g]
    assert set(gen_ckpt.state) < set(ckpt.state)
    for name, value in gen_ckpt.state.items():
        assert torch.equal(ckpt.state[name], value)
    assert {"before", "after", "reduction"} <= set(record["validation"])
    assert specialization_report(ckpt)["OCC"]["attribute"] == "OCC"
    assert ckpt.stages == ["1-GEN", "1-ATTR:OCC"]


def test_stages_two_and_three(tiny_config, tiny_index, gen_ckpt):
    model = build_model(tiny_config, seed=0, dtype=D)
    ckpt2 = _run("2", model, _with_attr_lineage(gen_ckpt), tiny_index)
    r2 = ckpt2.last_record()
    assert r2["trained"] == ["afm"]
    assert model.route == "afm"
    assert {model.group_of(k) for k in ckpt2.state} == set(model.parameter_groups())

    model3 = build_model(tiny_config, seed=0, dtype=D)
    ckpt3 = _run("3", model3, ckpt2, tiny_index)
    r3 = ckpt3.last_record()
    assert r3["learning_rates"]["efm"] == pytest.approx(1e-3)
    assert r3["learning_rates"]["backbone"] == pytest.approx(1e-4)
    assert r3["frozen"] == []
    assert model3.route == "full"
    assert ckpt3.stages[-2:] == ["2", "3"]


def test_training_is_deterministic(tiny_config, tiny_index):
    digests = []
    for _ in range(2):
        model = build_model(tiny_config, seed=0, dtype=D, deterministic=True)
        digests.append(_run("0", model, None, tiny_index).digest())
    assert digests[0] == digests[1]


def test_validation_loss_is_repeatable(tiny_model, tiny_index):
    clips = tiny_index.load_split("GEN")
    a = validation_loss(tiny_model, clips, n_batches=2, batch_size=2, route="bypass:GEN")
    b = validation_loss(tiny_model, clips, n_batches=2, batch_size=2, route="bypass:GEN")
    assert a == b
    assert tiny_model.route == "full"


def test_checkpoint_round_trip(tmp_path, tiny_config, gen_ckpt):
    path = gen_ckpt.save(str(tmp_path / "ckpt" / "stage_1-GEN.pt"))
    back = Checkpoint.load(path)
    assert back.digest() == gen_ckpt.digest()
    assert back.stages == ["1-GEN"]
    assert back.model_config == gen_ckpt.model_config

    model = build_model(tiny_config, seed=9, dtype=D)
    back.restore(model)
    params = dict(model.named_parameters())
    for name, value in back.state.items():
        assert torch.equal(params[name], value)

    other = build_model(replace(tiny_config, ddf_layers=(1,)), dtype=D)
    with pytest.raises(ConfigError):
        back.restore(other)
    with pytest.raises(LineageError):
        Checkpoint.load(str(tmp_path / "missing.pt"))


def test_loss_reduction():
    assert loss_reduction([4.0, 4.0, 2.0, 2.0], window=2) == pytest.approx(0.5)
    assert loss_reduction([]) == 0.0


def test_full_stage_sequence_order():
    seq = full_stage_sequence()
    assert seq[0] == "0" and seq[1] == "1-GEN" and seq[-2:] == ["2", "3"]
    assert seq[2:7] == [f"1-ATTR:{a.value}" for a in ATTRIBUTES if a.value != "GEN"]


@pytest.mark.slow
def test_full_pipeline_then_track(tiny_config, tiny_index):
    ckpt = None
    for stage in full_stage_sequence():
        model = build_model(tiny_config, seed=0, dtype=D)
        ckpt = _run(stage, model, ckpt, tiny_index)
    assert ckpt.stages == full_stage_sequence()
    assert set(specialization_report(ckpt)) == {a.value for a in SPECIFIC_ATTRIBUTES}
    traj = track_sequence(tiny_index.clip("gen_000"), model, TrackingPolicy())
    assert len(traj) == len(tiny_index.clip("gen_000"))


@pytest.mark.slow
def test_warmup_overfits_its_training_clips():
    run = RunConfig.from_profile("toy")
    index = make_attribute_subsets(run.scene, counts={"GEN": 8}, seed=0)
    model = build_model(run.model, seed=0, dtype=D)
    cfg = _cfg("0", epochs=4, iterations_per_epoch=50, batch_size=8, center_jitter=0.0,
               lr_scale=50.0)
    ckpt = run_stage("0", model, None, index.load_split("GEN"), cfg)
    record = ckpt.last_record()
    assert record["iterations"] == 200
    assert loss_reduction(record["iteration_cls_losses"], window=10) >= 0.9

    errors = []
    for clip in index.load_split("GEN"):
        traj = track_sequence(clip, model, TrackingPolicy())
        errors.extend(center_errors(traj, clip.gt_rgb).tolist())
    assert np.mean(errors) <= 2.0


@pytest.mark.slow
def test_attribute_branches_specialize_on_their_subsets():
    run = RunConfig.from_profile("toy")
    index = make_attribute_subsets(run.scene, counts=2, seed=0)
    model = build_model(run.model, seed=0, dtype=D)
    ckpt = None
    for stage in ("0", "1-GEN"):
        cfg = _cfg(stage, epochs=2, iterations_per_epoch=25, batch_size=4)
        ckpt = run_stage(stage, model, ckpt, index.load_split(cfg.split), cfg)
    for attr in SPECIFIC_ATTRIBUTES:
        stage = f"1-ATTR:{attr.value}"
        cfg = _cfg(stage, epochs=2, iterations_per_epoch=50, batch_size=4, lr_scale=100.0,
                   validation_batches=4)
        model = build_model(run.model, seed=0, dtype=D)
        ckpt = run_stage(stage, model, ckpt, index.load_split(cfg.split), cfg)
    report = specialization_report(ckpt)
    assert set(report) == {a.value for a in SPECIFIC_ATTRIBUTES}
    for attr, entry in report.items():
        assert entry["reduction"] >= 0.5, f"{attr}: {entry}"
