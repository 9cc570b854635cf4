import json
import math
import os

import numpy as np
import pytest

from config import BrwConfig
from run_logger import RunRecorder, format_value, pin_or_compare, read_csv, validate_summary


@pytest.fixture
def recorder(tmp_path):
    return RunRecorder(BrwConfig(None), "oracle", log_dir=str(tmp_path), max_runs=3)


def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(np.float64(0.25)) == "0.25"
    assert format_value(np.int32(7)) == "7"
    assert format_value(True) == "1"
    assert format_value("ab") == "ab"


def test_csv_round_trip(recorder, tmp_path):
    path = recorder.write_csv("table.csv", ["m", "p"], [[0, 0.25], [1, 0.75]])
    with open(path) as f:
        assert f.readline().strip() == recorder.header_line()
    rows = read_csv(path)
    assert rows == [{"m": "0", "p": "0.25"}, {"m": "1", "p": "0.75"}]


def test_summary_replaces_infinities(recorder, tmp_path):
    document = recorder.write_summary("s.json", {"rate": -math.inf, "grid": np.array([1.0, 2.0])})
    assert document["values"]["rate"] is None
    with open(os.path.join(tmp_path, "s.json")) as f:
        assert json.load(f)["values"]["grid"] == [1.0, 2.0]


def test_validate_summary(recorder):
    good = recorder.summary({"x": 1})
    assert validate_summary(good) == []
    bad = dict(good, schema="other", config_hash="abc")
    problems = validate_summary(bad)
    assert len(problems) == 2


def test_manifest_keeps_latest_runs(tmp_path):
    config = BrwConfig(None)
    for i in range(5):
        recorder = RunRecorder(config, f"run{i}", log_dir=str(tmp_path), max_runs=3)
        recorder.finish()
    runs = RunRecorder(config, "last", log_dir=str(tmp_path)).get_recent_runs()
    assert [r["command"] for r in runs] == ["run2", "run3", "run4"]
    assert all(r["config_hash"] == config.config_hash() for r in runs)


def test_pin_or_compare(tmp_path):
    path = str(tmp_path / "pin.csv")
    rows = [[0, 0.5], [1, 0.25]]
    assert pin_or_compare(path, ["m", "p"], rows) == []
    assert pin_or_compare(path, ["m", "p"], rows) == []
    assert pin_or_compare(path, ["m", "p"], [[0, 0.5], [1, 0.2500001]]) != []
    assert pin_or_compare(path, ["m", "p"], [[0, 0.5], [2, 0.25]]) != []
    assert pin_or_compare(path, ["m", "p"], rows[:1]) != []
