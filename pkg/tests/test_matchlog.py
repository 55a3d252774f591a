# tests/test_matchlog.py
import orjson
import pytest

from app.core.errors import FormatError
from app.core.matchlog import SCHEMA_HEADER, read_matchlog, records_frame, write_matchlog


def test_log_round_trip(tmp_path, season):
    path = tmp_path / "log.jsonl"
    count = write_matchlog(path, season[:50])
    assert count == 50
    assert read_matchlog(path) == season[:50]


def test_log_bytes_are_stable(tmp_path, season):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_matchlog(a, season[:20])
    write_matchlog(b, season[:20])
    assert a.read_bytes() == b.read_bytes()
    assert orjson.loads(a.read_bytes().splitlines()[0]) == SCHEMA_HEADER


def test_unknown_header_is_rejected(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_bytes(b'{"schema": "matchlog/9"}\n')
    with pytest.raises(FormatError):
        read_matchlog(path)


def test_missing_field_is_rejected(tmp_path, season):
    path = tmp_path / "log.jsonl"
    data = season[0].to_dict()
    del data["final_score"]
    path.write_bytes(orjson.dumps(SCHEMA_HEADER) + b"\n" + orjson.dumps(data) + b"\n")
    with pytest.raises(FormatError, match="missing fields"):
        read_matchlog(path)


def test_days_going_backwards_is_rejected(tmp_path, season):
    late = next(r for r in season if r.day_index > 0)
    path = tmp_path / "log.jsonl"
    write_matchlog(path, [late, season[0]])
    with pytest.raises(FormatError, match="backwards"):
        read_matchlog(path)


def test_records_frame(season):
    frame = records_frame(season[:10])
    assert len(frame) == 10
    assert (frame["score_1"] - frame["score_2"] == frame["score_diff"]).all()
