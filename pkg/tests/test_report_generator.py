# tests/test_report_generator.py
import pytest
from sqlalchemy.orm import Session

from app.core.matchlog import write_matchlog
from app.core.report_generator import evaluation_frame, generate_report, run_config_from
from app.core.simworld import PopulationConfig, run_season
from app.db import Base, SessionLocal, engine
from app.models import Report


@pytest.fixture(scope="module", autouse=True)
def tables():
    Base.metadata.create_all(bind=engine)


@pytest.fixture()
def db_session():
    """
    Session bound to a connection with an outer transaction that is
    rolled back at the end of the test.
    """
    conn = engine.connect()
    trans = conn.begin()
    session = Session(bind=conn)
    try:
        yield session
    finally:
        session.close()
        trans.rollback()
        conn.close()


@pytest.fixture(scope="module")
def match_log(tmp_path_factory):
    path = tmp_path_factory.mktemp("jobs") / "matchlog.jsonl"
    write_matchlog(path, run_season(PopulationConfig(num_players=45, days=5, matches_per_day=30, seed=4)))
    return str(path)


def _committed_report(kind="evaluate"):
    db = SessionLocal()
    try:
        report = Report(kind=kind, params="{}")
        db.add(report)
        db.commit()
        return report.report_id
    finally:
        db.close()


def _status(report_id):
    db = SessionLocal()
    try:
        return db.query(Report).filter(Report.report_id == report_id).one()
    finally:
        db.close()


def test_report_defaults(db_session):
    report = Report(kind="significance")
    db_session.add(report)
    db_session.flush()
    assert len(report.report_id) == 36
    assert report.status == "Running"
    assert report.created_at is not None


def test_run_config_from_request():
    cfg = run_config_from({"models": ["Dummy"], "theta": 2.0, "k_days": 5, "mode": "6v6", "max_windows": None})
    assert cfg.models == ["Dummy"]
    assert cfg.theta == 2.0 and cfg.k_days == 5
    assert cfg.mode == "6v6"
    assert cfg.omega == 0.3


def test_evaluation_frame_keeps_request_order(match_log):
    frame = evaluation_frame({"log_path": match_log, "models": ["Linear", "Dummy"], "k_days": 4})
    assert list(frame["model"]) == ["Linear", "Dummy"]


def test_completed_job_writes_csv(match_log):
    report_id = _committed_report()
    generate_report(report_id, {"kind": "evaluate", "log_path": match_log, "models": ["Dummy"], "k_days": 4})
    report = _status(report_id)
    assert report.status == "Complete"
    assert report.file_path.endswith(f"{report_id}.csv")


def test_failed_job_records_reason(tmp_path):
    report_id = _committed_report()
    generate_report(report_id, {"kind": "evaluate", "log_path": str(tmp_path / "gone.jsonl"), "models": ["Dummy"]})
    assert _status(report_id).status.startswith("Failed:")
