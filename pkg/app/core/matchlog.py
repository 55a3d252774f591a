# app/core/matchlog.py
"""JSON-Lines match logs: a schema header line, then one MatchRecord per line."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Iterator, List, Union

import orjson
import pandas as pd

from app.core.errors import FormatError, InvariantError
from app.core.simworld import MatchRecord

logger = logging.getLogger(__name__)

SCHEMA_HEADER = {"schema": "matchlog/1"}
REQUIRED_FIELDS = {"match_id", "day_index", "mode", "rosters", "human_count", "final_score", "score_diff"}

PathLike = Union[str, Path]


def dumps_line(payload: dict) -> bytes:
    return orjson.dumps(payload, option=orjson.OPT_SORT_KEYS) + b"\n"


def write_matchlog(path: PathLike, records: Iterable[MatchRecord]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "wb") as f:
        f.write(dumps_line(SCHEMA_HEADER))
        for record in records:
            f.write(dumps_line(record.to_dict()))
            count += 1
    logger.info("Wrote %d match records to %s", count, path)
    return count


def _read_header(f, path: Path) -> None:
    try:
        parsed = orjson.loads(f.readline())
    except orjson.JSONDecodeError as e:
        raise FormatError(f"{path}: unreadable schema header") from e
    if parsed != SCHEMA_HEADER:
        raise FormatError(f"{path}: unsupported schema header {parsed!r}")


def check_header(path: PathLike) -> None:
    """Raise FormatError unless ``path`` starts with a match log header."""
    with open(path, "rb") as f:
        _read_header(f, Path(path))


def iter_matchlog(path: PathLike) -> Iterator[MatchRecord]:
    path = Path(path)
    with open(path, "rb") as f:
        _read_header(f, path)

        last_day = -1
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                data = orjson.loads(line)
            except orjson.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: invalid JSON") from e
            missing = REQUIRED_FIELDS - set(data)
            if missing:
                raise FormatError(f"{path}:{lineno}: missing fields {sorted(missing)}")
            try:
                record = MatchRecord.from_dict(data)
            except (KeyError, TypeError, ValueError) as e:
                if isinstance(e, InvariantError):
                    raise
                raise FormatError(f"{path}:{lineno}: malformed record ({e})") from e
            if record.day_index < last_day:
                raise FormatError(f"{path}:{lineno}: day_index goes backwards")
            last_day = record.day_index
            yield record


def read_matchlog(path: PathLike) -> List[MatchRecord]:
    records = list(iter_matchlog(path))
    logger.info("Loaded %d match records from %s", len(records), path)
    return records


def records_frame(records: Iterable[MatchRecord]) -> pd.DataFrame:
    """One summary row per match, for quick inspection and reports."""
    rows = [
        {
            "match_id": r.match_id,
            "day_index": r.day_index,
            "mode": r.mode,
            "score_1": r.final_score[0],
            "score_2": r.final_score[1],
            "score_diff": r.score_diff,
            "humans_1": r.human_count[0],
            "humans_2": r.human_count[1],
            "dropouts": sum(s.dropped_out for roster in r.rosters for s in roster),
        }
        for r in records
    ]
    return pd.DataFrame(rows, columns=[
        "match_id", "day_index", "mode", "score_1", "score_2", "score_diff", "humans_1", "humans_2", "dropouts",
    ])
