import logging

from run_logger import TRAINING_LOG_COLUMNS, TrainingLog, get_system_logger


def test_training_log_writes_header_once_and_appends(tmp_path):
    path = str(tmp_path / "run" / "training_log.tsv")
    tlog = TrainingLog(path)
    tlog.log_epoch("0", 0, 4, 0.5, 0.1, 0.4, {"backbone": 1e-4}, "abc")
    TrainingLog(path).log_epoch("1-GEN", 0, 4, 0.25, 0.05, 0.2, {"branch_GEN": 1e-3}, "abc")

    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0].split("\t") == list(TRAINING_LOG_COLUMNS)
    assert len(lines) == 3

    df = tlog.read()
    assert df["stage"].astype(str).tolist() == ["0", "1-GEN"]
    assert df["loss"].tolist() == [0.5, 0.25]
    assert df.loc[1, "learning_rates"] == "branch_GEN=0.001"


def test_read_missing_log_is_empty(tmp_path):
    tlog = TrainingLog(str(tmp_path / "t.tsv"))
    tlog.log_file = str(tmp_path / "gone.tsv")
    df = tlog.read()
    assert df.empty and list(df.columns) == list(TRAINING_LOG_COLUMNS)


def test_system_logger_is_configured_once(tmp_path):
    path = str(tmp_path / "logs" / "system.log")
    logger = get_system_logger("run_logger_test", log_file=path)
    again = get_system_logger("run_logger_test", log_file=str(tmp_path / "other.log"))
    assert again is logger
    assert len(logger.handlers) == 2
    logger.info("hello")
    for h in logger.handlers:
        h.flush()
    assert "hello" in open(path, encoding="utf-8").read()
    console = [h for h in logger.handlers if not isinstance(h, logging.FileHandler)]
    assert console[0].level == logging.WARNING
