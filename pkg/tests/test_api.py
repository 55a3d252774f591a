# tests/test_api.py
import io
import time

import pandas as pd
import pytest
from fastapi.testclient import TestClient

from app.core.matchlog import write_matchlog
from app.core.simworld import PopulationConfig, run_season
from app.main import app


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


@pytest.fixture(scope="module")
def match_log(tmp_path_factory):
    cfg = PopulationConfig(num_players=60, days=5, matches_per_day=40, seed=2)
    path = tmp_path_factory.mktemp("api") / "matchlog.jsonl"
    write_matchlog(path, run_season(cfg))
    return str(path)


def _wait_for(client, report_id, timeout=120.0):
    """Poll until the report leaves the Running state."""
    deadline = time.time() + timeout
    while time.time() < deadline:
        response = client.get(f"/api/get_report/{report_id}")
        assert response.status_code == 200
        if response.headers["content-type"].startswith("text/csv"):
            return response
        if response.json()["status"] != "Running":
            return response
        time.sleep(0.2)
    pytest.fail(f"report {report_id} still running after {timeout}s")


def test_root_and_health(client):
    assert client.get("/health").json() == {"status": "healthy"}
    root = client.get("/").json()
    assert "trigger_report" in root["endpoints"]
    assert "MlpSoftmax" in root["model_kinds"]


def test_missing_log_is_404(client, tmp_path):
    response = client.post("/api/trigger_report", json={"log_path": str(tmp_path / "nope.jsonl")})
    assert response.status_code == 404


def test_unreadable_log_is_400(client, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("not a match log\n")
    response = client.post("/api/trigger_report", json={"log_path": str(bad)})
    assert response.status_code == 400
    assert response.json()["error"] == "FormatError"


def test_request_validation(client, match_log):
    assert client.post("/api/trigger_report", json={"log_path": match_log, "models": ["Bogus"]}).status_code == 422
    assert client.post("/api/trigger_report", json={"log_path": match_log, "theta": 0}).status_code == 422
    assert client.post("/api/trigger_report", json={"log_path": match_log, "k_days": 3}).status_code == 422


def test_unknown_report_is_404(client):
    assert client.get("/api/get_report/does-not-exist").status_code == 404


def test_evaluation_report(client, match_log):
    response = client.post("/api/trigger_report", json={
        "kind": "evaluate", "log_path": match_log, "models": ["Dummy", "Linear"], "k_days": 4,
    })
    assert response.status_code == 200
    report = _wait_for(client, response.json()["report_id"])
    assert report.headers["content-type"].startswith("text/csv"), report.text
    frame = pd.read_csv(io.StringIO(report.text))
    assert list(frame["model"]) == ["Dummy", "Linear"]
    assert frame["f1_mean"].between(0.0, 1.0).all()


def test_significance_report(client, match_log):
    response = client.post("/api/trigger_report", json={"kind": "significance", "log_path": match_log})
    report = _wait_for(client, response.json()["report_id"])
    assert report.headers["content-type"].startswith("text/csv"), report.text
    frame = pd.read_csv(io.StringIO(report.text))
    assert {"feature", "coefficient", "p_value", "description"} <= set(frame.columns)
