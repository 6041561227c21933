import pytest
import torch

from ddf_config import OUT_DIR_ENV, STAGE_EPOCHS
from ddf_errors import ConfigError
from run_config import RunConfig, TrainingSchedule


@pytest.fixture(autouse=True)
def _no_env_out_dir(monkeypatch):
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)


def _ini(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_toy_profile():
    cfg = RunConfig.from_profile("toy", seed=3)
    assert cfg.model.channels == (16, 16) and cfg.model.ddf_layers == (2,)
    assert cfg.scene.canvas == 48 and cfg.scene.frames == 8
    assert cfg.training.lr_scale == 100.0
    assert cfg.out_dir.endswith("toy")
    assert cfg.seed == 3
    assert cfg.torch_dtype is torch.float32
    with pytest.raises(ConfigError):
        RunConfig.from_profile("huge")


def test_ini_overrides_profile(tmp_path):
    path = _ini(tmp_path, """
[run]
profile = toy
seed = 11
dtype = float64
deterministic = yes

[model]
ddf_layers = 1, 2

[scene]
frames = 5
ei_gain_range = 0.2, 2.5

[training]
batch_size = 3
epochs.1-gen = 7

[tracking]
capacity = 4

[evaluation]
pr_threshold = 5
""")
    cfg = RunConfig.load(path)
    assert cfg.profile == "toy" and cfg.seed == 11
    assert cfg.dtype == "float64" and cfg.deterministic is True
    assert cfg.model.ddf_layers == (1, 2)
    assert cfg.scene.frames == 5 and cfg.scene.ei_gain_range == (0.2, 2.5)
    assert cfg.training.batch_size == 3
    assert cfg.training.epochs["1-GEN"] == 7
    assert cfg.tracking.capacity == 4
    assert cfg.pr_threshold == 5.0


def test_explicit_flags_win_over_the_file(tmp_path):
    path = _ini(tmp_path, "[run]\nprofile = toy\nseed = 11\n")
    cfg = RunConfig.load(path, profile="standard", seed=2)
    assert cfg.profile == "standard" and cfg.seed == 2


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[run]\ncolour = red\n",
    "[model]\nwidth = 3\n",
    "[training]\nwarmup = 2\n",
    "[training]\nepochs.9 = 2\n",
    "[evaluation]\nsr_grid = 21\n",
    "[run]\nseed = many\n",
    "[run]\ndeterministic = maybe\n",
    "[run]\ndtype = float16\n",
    "[run]\nframe_format = jpg\n",
    "[run]\nschema_version = 2\n",
    "[tracking]\ncapacity = 0\n",
])
def test_bad_config_is_a_config_error(tmp_path, text):
    with pytest.raises(ConfigError):
        RunConfig.load(_ini(tmp_path, text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(str(tmp_path / "nope.ini"))


def test_out_dir_precedence(tmp_path, monkeypatch):
    path = _ini(tmp_path, "[run]\nprofile = toy\nout_dir = from_file\n")
    assert RunConfig.load(path).out_dir == "from_file"
    monkeypatch.setenv(OUT_DIR_ENV, "from_env")
    assert RunConfig.load(path).out_dir == "from_env"
    assert RunConfig.load(path, out_dir="from_flag").out_dir == "from_flag"


def test_digest_ignores_out_dir_only():
    a = RunConfig.from_profile("toy", out_dir="x")
    b = RunConfig.from_profile("toy", out_dir="y")
    assert a.digest() == b.digest()
    c = RunConfig.from_profile("toy", seed=1)
    assert c.digest() != a.digest()


def test_written_ini_reloads_to_the_same_config(tmp_path):
    cfg = RunConfig.from_profile("toy", seed=4, out_dir=str(tmp_path / "run"))
    cfg.tracking.capacity = 3
    path = cfg.write_ini(str(tmp_path / "config.ini"))
    back = RunConfig.load(path)
    assert back.digest() == cfg.digest()
    assert back.out_dir == cfg.out_dir
    assert back.to_dict() == cfg.to_dict()


def test_stage_config_uses_schedule():
    cfg = RunConfig.from_profile("toy")
    sc = cfg.stage_config("1-ATTR:OCC")
    assert sc.epochs == 1
    assert sc.iterations_per_epoch == 4 and sc.batch_size == 2
    assert sc.learning_rates == {"branch_OCC": pytest.approx(1e-3)}

    full = RunConfig.from_profile("standard")
    assert full.stage_config("3").epochs == STAGE_EPOCHS["3"]
    with pytest.raises(ConfigError):
        cfg.stage_config("5")


def test_training_schedule_validation():
    with pytest.raises(ConfigError):
        TrainingSchedule(clips_per_attribute=0, iterations_per_epoch=1, batch_size=1,
                         lr_scale=1.0, epochs={})
    with pytest.raises(ConfigError):
        TrainingSchedule(clips_per_attribute=1, iterations_per_epoch=1, batch_size=1,
                         lr_scale=0.0, epochs={})
