# tests/test_cli.py
import logging

import numpy as np
import orjson
import pytest
import yaml
from typer.testing import CliRunner

from app.cli import app as cli_app
from app.core.analysis import FeatureMask
from app.core.features import FeatureSchema
from app.core.simworld import DEFAULT_ROLES

runner = CliRunner()


def _invoke(*args):
    return runner.invoke(cli_app, [str(a) for a in args])


def _write_config(path, out, **extra):
    values = {"seed": 5, "num_players": 60, "days": 6, "matches_per_day": 30, "k_days": 5, "out": str(out)}
    values.update(extra)
    path.write_text(yaml.safe_dump(values))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """A small end-to-end run shared by the tests below."""
    out = tmp_path_factory.mktemp("run")
    config = _write_config(out / "config.yaml", out)
    steps = [
        ("simulate", "--config", config),
        ("featurize", "--config", config),
        ("select-features", "--config", config, "--keep-k", 5),
        ("train", "--config", config, "--models", "Dummy,Linear"),
        ("evaluate", "--config", config, "--models", "Dummy,Linear", "--model-dir", out / "models"),
        ("benchmark", "--config", config, "--models", "Dummy,Linear", "--repetitions", 3),
        ("matchmake", "--config", config, "--model", out / "models" / "Linear.cbmf", "--matches", 10),
    ]
    for step in steps:
        result = _invoke(*step)
        assert result.exit_code == 0, f"{step[0]} failed: {result.output}"
    return out, config


def test_pipeline_outputs(run_dir):
    out, _ = run_dir
    for name in ("matchlog.jsonl", "features.csv", "schema.json", "best_subset.json", "significance.csv",
                 "eval_report.csv", "eval_report.json", "timing_report.csv", "session_summary.json"):
        assert (out / name).exists(), name
    assert (out / "models" / "Dummy.cbmf").exists()
    summary = orjson.loads((out / "session_summary.json").read_bytes())
    assert summary["gated"]["matches"] == summary["gate_free"]["matches"] == 10


def test_simulate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        result = _invoke("simulate", "--seed", 3, "--days", 2, "--matches-per-day", 10, "--players", 30,
                         "--out", tmp_path / name)
        assert result.exit_code == 0, result.output
    assert (tmp_path / "a" / "matchlog.jsonl").read_bytes() == (tmp_path / "b" / "matchlog.jsonl").read_bytes()


def test_report_renders_files(run_dir):
    out, _ = run_dir
    result = _invoke("report", out / "eval_report.csv", out / "eval_report.json", out / "timing_report.json")
    assert result.exit_code == 0, result.output
    assert _invoke("report", out / "missing.csv").exit_code == 1


def test_schema_mismatch_fails(run_dir, tmp_path):
    out, _ = run_dir
    other = _write_config(tmp_path / "other.yaml", out, population={"actions": ["goal", "assist"]})
    result = _invoke("evaluate", "--config", other, "--models", "Dummy")
    assert result.exit_code == 1
    assert "feature schema" in result.output


def test_bad_inputs_fail_cleanly(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("colour: red\n")
    result = _invoke("simulate", "--config", bad)
    assert result.exit_code == 1
    assert "unknown config keys" in result.output

    missing = _invoke("featurize", "--log", tmp_path / "nope.jsonl", "--out", tmp_path)
    assert missing.exit_code == 1

    assert _invoke("simulate", "--bogus").exit_code != 0
    zero_theta = _invoke("evaluate", "--out", tmp_path, "--theta", 0)
    assert zero_theta.exit_code == 1
    assert "theta" in zero_theta.output


def test_stale_best_subset_is_reported(tmp_path, caplog):
    config = _write_config(tmp_path / "config.yaml", tmp_path)
    for step in ("simulate", "featurize"):
        assert _invoke(step, "--config", config).exit_code == 0
    other = FeatureSchema(roles=DEFAULT_ROLES, actions=("goal", "assist"))
    keep = np.zeros(other.dim, dtype=bool)
    keep[:3] = True
    FeatureMask(keep=keep, names=other.names).write(tmp_path / "best_subset.json")

    with caplog.at_level(logging.WARNING, logger="app.cli"):
        result = _invoke("evaluate", "--config", config, "--models", "Dummy,Linear")
    assert result.exit_code == 0, result.output
    assert any("different feature schema" in r.getMessage() for r in caplog.records)
