# app/core/features.py
"""Player profiles, team aggregates and the match feature vector M = (t1, t2, m).

Player profiles are cumulative counters folded online as matches complete.
A match is described by both teams' per-feature mean and standard deviation,
the absolute and signed differences of the team means, skill-rating
statistics and the human headcount of each team.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
import pandas as pd

from app.core.errors import (
    AggregationError,
    InvariantError,
    LeakageError,
    OrderingError,
    ParameterError,
    SchemaError,
)
from app.core.simworld import MatchRecord

logger = logging.getLogger(__name__)

SKILL_NAMES = (
    "t1_avg_skill",
    "t2_avg_skill",
    "avg_skill_diff",
    "avg_skill_abs_diff",
    "max_skill_diff",
    "min_skill_diff",
    "t1_skill_std",
    "t2_skill_std",
)
HEADCOUNT_NAMES = ("t1_humans", "t2_humans")
META_COLUMNS = ("match_id", "day_index", "score_diff")


def player_feature_names(roles: Sequence[str], actions: Sequence[str]) -> List[str]:
    return (
        ["num_matches", "num_wins", "freq_wins"]
        + [f"num_role_{r}" for r in roles]
        + [f"freq_role_{r}" for r in roles]
        + [f"num_action_{a}" for a in actions]
        + [f"avg_num_action_{a}" for a in actions]
        + ["num_dropout", "freq_dropout"]
    )


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered coordinate names of M; a pure function of (roles, actions)."""

    roles: Tuple[str, ...]
    actions: Tuple[str, ...]
    player_names: Tuple[str, ...] = field(init=False)
    names: Tuple[str, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "roles", tuple(self.roles))
        object.__setattr__(self, "actions", tuple(self.actions))
        player = tuple(player_feature_names(self.roles, self.actions))
        names = (
            [f"t1_mean_{f}" for f in player]
            + [f"t1_std_{f}" for f in player]
            + [f"t2_mean_{f}" for f in player]
            + [f"t2_std_{f}" for f in player]
            + [f"absdiff_{f}" for f in player]
            + [f"diff_{f}" for f in player]
            + list(SKILL_NAMES)
            + list(HEADCOUNT_NAMES)
        )
        object.__setattr__(self, "player_names", player)
        object.__setattr__(self, "names", tuple(names))

    @property
    def player_dim(self) -> int:
        return len(self.player_names)

    @property
    def dim(self) -> int:
        return len(self.names)

    def block(self, name: str) -> slice:
        p = self.player_dim
        starts = {
            "t1_mean": 0, "t1_std": p, "t2_mean": 2 * p, "t2_std": 3 * p,
            "absdiff": 4 * p, "diff": 5 * p,
        }
        if name in starts:
            return slice(starts[name], starts[name] + p)
        if name == "skill":
            return slice(6 * p, 6 * p + len(SKILL_NAMES))
        if name == "headcount":
            return slice(6 * p + len(SKILL_NAMES), self.dim)
        raise KeyError(name)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def to_json(self) -> bytes:
        return orjson.dumps(
            {"roles": list(self.roles), "actions": list(self.actions), "names": list(self.names)},
            option=orjson.OPT_SORT_KEYS,
        )

    @classmethod
    def from_json(cls, payload: Union[bytes, str]) -> "FeatureSchema":
        data = orjson.loads(payload)
        schema = cls(roles=tuple(data["roles"]), actions=tuple(data["actions"]))
        if "names" in data and tuple(data["names"]) != schema.names:
            raise SchemaError("serialized feature names do not match the roles/actions layout")
        return schema

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_json()).hexdigest()

    def swap_layout(self) -> Tuple[np.ndarray, np.ndarray]:
        """(permutation, signs) such that swapped = values[perm] * signs."""
        perm = np.arange(self.dim)
        signs = np.ones(self.dim)
        for a, b in (("t1_mean", "t2_mean"), ("t1_std", "t2_std")):
            sa, sb = self.block(a), self.block(b)
            perm[sa], perm[sb] = np.arange(sb.start, sb.stop), np.arange(sa.start, sa.stop)
        signs[self.block("diff")] = -1.0
        skill = self.block("skill").start
        # t1_avg <-> t2_avg, std pair swapped; signed skill diffs negated
        perm[skill + 0], perm[skill + 1] = skill + 1, skill + 0
        perm[skill + 6], perm[skill + 7] = skill + 7, skill + 6
        signs[[skill + 2, skill + 4, skill + 5]] = -1.0
        head = self.block("headcount").start
        perm[head], perm[head + 1] = head + 1, head
        return perm, signs


@dataclass(frozen=True)
class PlayerProfile:
    roles: Tuple[str, ...]
    actions: Tuple[str, ...]
    num_matches: int = 0
    num_wins: int = 0
    num_role: Mapping[str, int] = field(default_factory=dict)
    num_action: Mapping[str, int] = field(default_factory=dict)
    num_dropout: int = 0
    last_day: int = -1

    @classmethod
    def empty(cls, roles: Sequence[str], actions: Sequence[str]) -> "PlayerProfile":
        return cls(
            roles=tuple(roles),
            actions=tuple(actions),
            num_role={r: 0 for r in roles},
            num_action={a: 0 for a in actions},
        )

    def _ratio(self, count: float) -> float:
        return count / self.num_matches if self.num_matches else 0.0

    @property
    def freq_wins(self) -> float:
        return self._ratio(self.num_wins)

    @property
    def freq_dropout(self) -> float:
        return self._ratio(self.num_dropout)

    def freq_role(self, role: str) -> float:
        return self._ratio(self.num_role[role])

    def avg_num_action(self, action: str) -> float:
        return self._ratio(self.num_action[action])


def update_player_profile(profile: PlayerProfile, record: MatchRecord, player_id: int) -> PlayerProfile:
    slot = record.slot(player_id)
    if record.day_index < profile.last_day:
        raise OrderingError(
            f"match {record.match_id} on day {record.day_index} arrives after day {profile.last_day} "
            f"for player {player_id}"
        )
    if slot.role not in profile.num_role:
        raise InvariantError(f"role {slot.role!r} is not part of the profile layout")

    num_role = dict(profile.num_role)
    num_role[slot.role] += 1
    num_action = dict(profile.num_action)
    for action in profile.actions:
        num_action[action] += int(slot.actions.get(action, 0))

    return replace(
        profile,
        num_matches=profile.num_matches + 1,
        num_wins=profile.num_wins + int(record.won(player_id)),
        num_role=num_role,
        num_action=num_action,
        num_dropout=profile.num_dropout + int(slot.dropped_out),
        last_day=record.day_index,
    )


def player_features(profile: PlayerProfile, cold_start_defaults: Optional[np.ndarray] = None) -> np.ndarray:
    """Player vector in schema order; zero-history players get the cold-start vector."""
    dim = 5 + 2 * len(profile.roles) + 2 * len(profile.actions)
    if profile.num_matches == 0:
        if cold_start_defaults is None:
            return np.zeros(dim)
        cold = np.asarray(cold_start_defaults, dtype=float)
        if cold.shape != (dim,):
            raise SchemaError(f"cold-start vector has shape {cold.shape}, expected ({dim},)")
        return cold.copy()

    values = [profile.num_matches, profile.num_wins, profile.freq_wins]
    values += [profile.num_role[r] for r in profile.roles]
    values += [profile.freq_role(r) for r in profile.roles]
    values += [profile.num_action[a] for a in profile.actions]
    values += [profile.avg_num_action(a) for a in profile.actions]
    values += [profile.num_dropout, profile.freq_dropout]
    return np.asarray(values, dtype=float)


@dataclass(frozen=True)
class TeamFeatureVector:
    mean: np.ndarray
    std: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([self.mean, self.std])


def team_features(members: Sequence[np.ndarray]) -> TeamFeatureVector:
    """Per-coordinate mean and population standard deviation over human members."""
    if len(members) == 0:
        raise AggregationError("cannot aggregate a team without human members")
    try:
        stacked = np.vstack([np.asarray(m, dtype=float) for m in members])
    except ValueError as e:
        raise SchemaError("member vectors have different lengths") from e
    return TeamFeatureVector(mean=stacked.mean(axis=0), std=stacked.std(axis=0))


@dataclass(frozen=True)
class MatchFeatureVector:
    values: np.ndarray
    schema: FeatureSchema

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.schema.names, map(float, self.values)))


def match_features(
    t1: TeamFeatureVector,
    t2: TeamFeatureVector,
    skill_ratings_1: Sequence[float],
    skill_ratings_2: Sequence[float],
    human_counts: Tuple[int, int],
    schema: FeatureSchema,
) -> MatchFeatureVector:
    p = schema.player_dim
    for team in (t1, t2):
        if team.mean.shape != (p,) or team.std.shape != (p,):
            raise SchemaError(f"team block has dimension {team.mean.shape}, schema expects {p}")
    r1 = np.asarray(skill_ratings_1, dtype=float)
    r2 = np.asarray(skill_ratings_2, dtype=float)
    if r1.size == 0 or r2.size == 0:
        raise AggregationError("skill statistics need at least one rated human per team")

    diff = t1.mean - t2.mean
    avg1, avg2 = r1.mean(), r2.mean()
    skill = [
        avg1,
        avg2,
        avg1 - avg2,
        abs(avg1 - avg2),
        r1.max() - r2.max(),
        r1.min() - r2.min(),
        r1.std(),
        r2.std(),
    ]
    values = np.concatenate([
        t1.mean, t1.std, t2.mean, t2.std,
        np.abs(diff), diff,
        np.asarray(skill, dtype=float),
        np.asarray(human_counts, dtype=float),
    ])
    if values.shape != (schema.dim,):
        raise SchemaError(f"assembled {values.shape[0]} coordinates, schema has {schema.dim}")
    if not np.all(np.isfinite(values)):
        raise InvariantError("match feature vector has non-finite coordinates")
    return MatchFeatureVector(values=values, schema=schema)


class ProfileStore:
    """Single-writer profile store ordered by match completion.

    Readers call :meth:`check_read` with the day of the match being
    featurized; any read that could see records from that day or later
    raises :class:`LeakageError`. With ``audit=True`` every read is kept.
    """

    def __init__(self, roles: Sequence[str], actions: Sequence[str], audit: bool = False):
        self.roles = tuple(roles)
        self.actions = tuple(actions)
        self._profiles: Dict[int, PlayerProfile] = {}
        self.max_day_applied = -1
        self.audit = audit
        self.reads: List[Tuple[int, int]] = []

    def __len__(self) -> int:
        return len(self._profiles)

    def get(self, player_id: int) -> PlayerProfile:
        profile = self._profiles.get(player_id)
        return profile if profile is not None else PlayerProfile.empty(self.roles, self.actions)

    def apply(self, record: MatchRecord) -> None:
        if record.day_index < self.max_day_applied:
            raise OrderingError(
                f"match {record.match_id} (day {record.day_index}) is older than day {self.max_day_applied}"
            )
        for pid in record.player_ids():
            self._profiles[pid] = update_player_profile(self.get(pid), record, pid)
        self.max_day_applied = record.day_index

    def copy(self) -> "ProfileStore":
        clone = ProfileStore(self.roles, self.actions, audit=self.audit)
        clone._profiles = dict(self._profiles)
        clone.max_day_applied = self.max_day_applied
        return clone

    def snapshot(self) -> Dict[int, PlayerProfile]:
        # profiles are frozen, a shallow copy is an immutable view
        return dict(self._profiles)

    def check_read(self, match_day: int) -> None:
        if self.max_day_applied >= match_day:
            raise LeakageError(
                f"featurizing a day-{match_day} match with profiles updated through day {self.max_day_applied}"
            )
        if self.audit:
            self.reads.append((match_day, self.max_day_applied))

    def vector(self, player_id: int, cold_start: Optional[np.ndarray] = None) -> np.ndarray:
        return player_features(self.get(player_id), cold_start)


def features_for_rosters(
    rosters: Sequence[Sequence[Tuple[int, float]]],
    store: ProfileStore,
    schema: FeatureSchema,
    cold_start: Optional[np.ndarray] = None,
) -> MatchFeatureVector:
    """Assemble M for two rosters of ``(player_id, rating)`` pairs (humans only)."""
    teams = [team_features([store.vector(pid, cold_start) for pid, _ in roster]) for roster in rosters]
    ratings = [[rating for _, rating in roster] for roster in rosters]
    return match_features(
        teams[0], teams[1], ratings[0], ratings[1], (len(rosters[0]), len(rosters[1])), schema
    )


def features_for_record(
    record: MatchRecord,
    store: ProfileStore,
    schema: FeatureSchema,
    cold_start: Optional[np.ndarray] = None,
) -> MatchFeatureVector:
    store.check_read(record.day_index)
    rosters = [[(s.player_id, s.rating) for s in roster] for roster in record.rosters]
    return features_for_rosters(rosters, store, schema, cold_start)


def featurize_log(
    records: Iterable[MatchRecord],
    schema: FeatureSchema,
    cold_start: Optional[np.ndarray] = None,
    store: Optional[ProfileStore] = None,
) -> pd.DataFrame:
    """Feature frame for a day-ordered log.

    All matches of a day are featurized from profiles frozen at the end of
    the previous day, then that day's records are folded into the store.
    """
    store = store if store is not None else ProfileStore(schema.roles, schema.actions)
    rows: List[np.ndarray] = []
    meta: List[Tuple[int, int, int]] = []
    pending: List[MatchRecord] = []
    current_day: Optional[int] = None

    def flush():
        for rec in pending:
            store.apply(rec)
        pending.clear()

    for record in records:
        if current_day is not None and record.day_index < current_day:
            raise OrderingError(f"match {record.match_id} breaks day order")
        if record.day_index != current_day:
            flush()
            current_day = record.day_index
        rows.append(features_for_record(record, store, schema, cold_start).values)
        meta.append((record.match_id, record.day_index, record.score_diff))
        pending.append(record)
    flush()

    matrix = np.vstack(rows) if rows else np.zeros((0, schema.dim))
    frame = pd.DataFrame(matrix, columns=list(schema.names))
    meta_frame = pd.DataFrame(meta, columns=list(META_COLUMNS), dtype="int64")
    frame = pd.concat([meta_frame, frame], axis=1)
    logger.info("Featurized %d matches into %d coordinates", len(frame), schema.dim)
    return frame


def feature_matrix(frame: pd.DataFrame, schema: FeatureSchema) -> np.ndarray:
    missing = [n for n in schema.names if n not in frame.columns]
    if missing:
        raise SchemaError(f"feature frame lacks {len(missing)} schema columns, e.g. {missing[0]!r}")
    return frame.loc[:, list(schema.names)].to_numpy(dtype=float)


def batch_profiles(records: Iterable[MatchRecord], roles: Sequence[str], actions: Sequence[str]) -> Dict[int, PlayerProfile]:
    """Recompute every profile from the full log in one pass over a flat table."""
    rows = []
    for record in records:
        for team, roster in enumerate(record.rosters):
            won = record.final_score[team] > record.final_score[1 - team]
            for slot in roster:
                row = {"player_id": slot.player_id, "won": int(won), "role": slot.role,
                       "dropped": int(slot.dropped_out), "day": record.day_index}
                row.update({f"a_{a}": slot.actions.get(a, 0) for a in actions})
                rows.append(row)
    if not rows:
        return {}
    flat = pd.DataFrame(rows)
    role_counts = pd.crosstab(flat["player_id"], flat["role"]).reindex(columns=list(roles), fill_value=0)
    totals = flat.groupby("player_id").agg(
        num_matches=("won", "size"),
        num_wins=("won", "sum"),
        num_dropout=("dropped", "sum"),
        last_day=("day", "max"),
        **{f"a_{a}": (f"a_{a}", "sum") for a in actions},
    )
    out = {}
    for pid, row in totals.iterrows():
        out[int(pid)] = PlayerProfile(
            roles=tuple(roles),
            actions=tuple(actions),
            num_matches=int(row["num_matches"]),
            num_wins=int(row["num_wins"]),
            num_role={r: int(role_counts.loc[pid, r]) for r in roles},
            num_action={a: int(row[f"a_{a}"]) for a in actions},
            num_dropout=int(row["num_dropout"]),
            last_day=int(row["last_day"]),
        )
    return out


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def apply(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=float)
        if rows.shape[-1] != self.dim:
            raise SchemaError(f"row dimension {rows.shape[-1]} does not match normalizer dimension {self.dim}")
        safe = np.where(self.std > 0, self.std, 1.0)
        # constant coordinates map to 0
        return np.where(self.std > 0, (rows - self.mean) / safe, 0.0)


def fit_normalizer(rows: np.ndarray, schema: Optional[FeatureSchema] = None) -> Normalizer:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ParameterError("z-score normalization needs a matrix with at least 2 rows")
    if schema is not None and rows.shape[1] != schema.dim:
        raise SchemaError(f"matrix has {rows.shape[1]} columns, schema has {schema.dim}")
    return Normalizer(mean=rows.mean(axis=0), std=rows.std(axis=0))


def swap_teams(values: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Relabel team 1 as team 2 (row vector or matrix)."""
    perm, signs = schema.swap_layout()
    values = np.asarray(values, dtype=float)
    return values[..., perm] * signs


def symmetrize(X: np.ndarray, y: np.ndarray, schema: FeatureSchema) -> Tuple[np.ndarray, np.ndarray]:
    """Each match in both orientations; signed targets negate with the swap."""
    return np.vstack([X, swap_teams(X, schema)]), np.concatenate([y, -np.asarray(y, dtype=float)])


def write_schema(schema: FeatureSchema, path: Union[str, Path]) -> None:
    Path(path).write_bytes(schema.to_json())


def read_schema(path: Union[str, Path]) -> FeatureSchema:
    return FeatureSchema.from_json(Path(path).read_bytes())


def write_feature_csv(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    frame.to_csv(path, index=False, float_format="%.17g")


def read_feature_csv(path: Union[str, Path], schema: FeatureSchema) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    feature_matrix(frame, schema)
    return frame
