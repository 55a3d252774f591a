# app/core/matchmaker.py
"""Queue-based matchmaking with a competitive-balance quality gate.

Each tick new players join the queue; the matchmaker samples candidate
teams around the longest-waiting player, asks the balance model whether
the proposal is balanced and either launches it or resamples. After
``max_attempts`` rejections the proposal closest to balance launches anyway.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import ConfigError, GateError, InvariantError
from app.core.features import FeatureSchema, MatchFeatureVector, ProfileStore, features_for_rosters
from app.core.matchlog import dumps_line
from app.core.predictors import BalanceThresholds, TrainedModel, decide, predict
from app.core.seeding import derive_rng
from app.core.simworld import MODES, MatchRecord, MatchSimulator, Population, assign_roles

logger = logging.getLogger(__name__)

# stricter than the evaluation thresholds: launches need a near-even prediction
GATE_THRESHOLDS = BalanceThresholds(theta=1.0, omega=0.1)


@dataclass(frozen=True)
class QueueEntry:
    player_id: int
    rating: float
    enqueued_at: float
    mode: str = "3v3"


class MatchQueue:
    """Single-writer FIFO of waiting players for one mode."""

    def __init__(self, mode: str = "3v3"):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        self.mode = mode
        self.team_size = MODES[mode]
        self._entries: List[QueueEntry] = []
        self._ids = set()
        self.last_time = -math.inf

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __contains__(self, player_id: int) -> bool:
        return player_id in self._ids

    def push(self, entry: QueueEntry) -> None:
        if entry.enqueued_at < self.last_time:
            raise InvariantError(f"enqueue time {entry.enqueued_at} precedes {self.last_time}")
        if entry.mode != self.mode:
            raise InvariantError(f"entry for mode {entry.mode} pushed to the {self.mode} queue")
        if entry.player_id in self._ids:
            raise InvariantError(f"player {entry.player_id} is already queued")
        self._entries.append(entry)
        self._ids.add(entry.player_id)
        self.last_time = entry.enqueued_at

    def remove(self, player_ids: Iterable[int]) -> None:
        gone = set(player_ids)
        self._entries = [e for e in self._entries if e.player_id not in gone]
        self._ids -= gone

    @property
    def entries(self) -> Tuple[QueueEntry, ...]:
        return tuple(self._entries)


@dataclass(frozen=True)
class MatchmakerConfig:
    max_attempts: int = 10
    pool_factor: int = 4
    min_humans: int = 2
    # full matches wait until this many players are queued; 0 means two full teams
    min_queue: int = 0
    # candidates drawn from the whole queue instead of the rating neighbourhood
    random_assembly: bool = False
    # ticks before an entry starts to look closer in rating
    widen_after: float = 20.0
    widen_per_tick: float = 50.0
    # ticks the oldest entry waits before a bot-filled match may launch
    bot_fill_after: float = 3.0

    def __post_init__(self):
        if self.max_attempts < 1 or self.pool_factor < 2 or self.min_humans < 2 or self.min_queue < 0:
            raise ConfigError(f"invalid matchmaker config {self}")


@dataclass(frozen=True)
class MatchProposal:
    rosters: Tuple[Tuple[QueueEntry, ...], Tuple[QueueEntry, ...]]
    roles: Tuple[Tuple[str, ...], Tuple[str, ...]]
    features: MatchFeatureVector
    predicted: Optional[float] = None
    accepted: Optional[bool] = None

    @property
    def player_ids(self) -> List[int]:
        return [e.player_id for team in self.rosters for e in team]

    @property
    def human_count(self) -> Tuple[int, int]:
        return len(self.rosters[0]), len(self.rosters[1])

    def to_dict(self) -> dict:
        return {
            "rosters": [[e.player_id for e in team] for team in self.rosters],
            "roles": [list(r) for r in self.roles],
            "predicted": self.predicted,
            "accepted": self.accepted,
        }


def _candidate_pool(queue: MatchQueue, now: float, size: int, cfg: MatchmakerConfig) -> List[QueueEntry]:
    entries = list(queue)
    anchor = entries[0]
    if cfg.random_assembly:
        return entries

    def distance(e: QueueEntry) -> float:
        waited = max(0.0, now - e.enqueued_at - cfg.widen_after)
        return abs(e.rating - anchor.rating) - cfg.widen_per_tick * waited

    others = sorted(entries[1:], key=distance)  # stable: ties keep queue order
    return [anchor] + others[: size - 1]


def propose(
    queue: MatchQueue,
    rng: np.random.Generator,
    store: ProfileStore,
    schema: FeatureSchema,
    now: Optional[float] = None,
    cfg: MatchmakerConfig = MatchmakerConfig(),
    cold_start: Optional[np.ndarray] = None,
) -> Optional[MatchProposal]:
    """Sample two teams, or return None when the queue is too short (wait)."""
    T = queue.team_size
    humans = min(len(queue), 2 * T)
    if humans < cfg.min_humans:
        return None
    now = queue.last_time if now is None else now
    pool = _candidate_pool(queue, now, cfg.pool_factor * T, cfg)
    picked = [pool[0]] + [pool[i] for i in rng.choice(np.arange(1, len(pool)), size=humans - 1, replace=False)]
    order = rng.permutation(humans)
    picked = [picked[i] for i in order]
    split = math.ceil(humans / 2)
    teams = (tuple(picked[:split]), tuple(picked[split:]))
    roles = tuple(tuple(assign_roles(schema.roles, len(team), T, rng)) for team in teams)
    features = features_for_rosters(
        [[(e.player_id, e.rating) for e in team] for team in teams], store, schema, cold_start
    )
    return MatchProposal(rosters=teams, roles=roles, features=features)


@dataclass(frozen=True)
class GateResult:
    accept: bool
    predicted: float


def quality_gate(model: TrainedModel, proposal: MatchProposal, theta: float, omega: float = 0.3) -> GateResult:
    """Accept iff the model calls the proposed match balanced."""
    if model.schema_hash and proposal.features.schema.hash != model.schema_hash:
        raise GateError("model and proposal use different feature schemas")
    r = predict(model, proposal.features)
    decision = decide(model, np.array([r]), BalanceThresholds(theta=theta, omega=omega))
    return GateResult(accept=bool(decision[0]), predicted=r)


def imbalance(model: Optional[TrainedModel], predicted: float) -> float:
    """Distance from a perfectly balanced prediction, used by the fallback."""
    if model is not None and model.kind.is_classifier:
        return abs(predicted - 0.5)
    return abs(predicted)


Gate = Callable[[MatchProposal], GateResult]


@dataclass(frozen=True)
class Launch:
    tick: float
    proposal: MatchProposal
    attempts: int
    fallback: bool


class SessionLog:
    """JSON-Lines log of proposals, gate decisions and launches."""

    def __init__(self, path: Union[str, Path, None] = None):
        self.path = Path(path) if path is not None else None
        self.events: List[dict] = []

    def record(self, event: str, **payload) -> None:
        self.events.append({"event": event, **payload})

    def write(self) -> Optional[Path]:
        if self.path is None:
            return None
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "wb") as f:
            for e in self.events:
                f.write(dumps_line(e))
        return self.path


def run_matchmaking(
    ticks: Iterable[Tuple[float, Sequence[QueueEntry]]],
    model: Optional[TrainedModel],
    store: ProfileStore,
    schema: FeatureSchema,
    rng: np.random.Generator,
    thresholds: BalanceThresholds = GATE_THRESHOLDS,
    cfg: MatchmakerConfig = MatchmakerConfig(),
    mode: str = "3v3",
    gate: Optional[Gate] = None,
    log: Optional[SessionLog] = None,
    on_launch: Optional[Callable[[Launch], None]] = None,
) -> Iterator[Launch]:
    """Process ``(time, arrivals)`` ticks and yield launched matches.

    Full matches launch while the queue holds two full teams; a shorter
    match with bots launches once the oldest entry has waited
    ``bot_fill_after``. ``gate`` overrides the model gate (for example an
    accept-all gate for gate-free matchmaking).
    """
    if gate is None:
        if model is None:
            raise ConfigError("run_matchmaking needs a model or an explicit gate")
        gate = lambda p: quality_gate(model, p, thresholds.theta, thresholds.omega)  # noqa: E731
    queue = MatchQueue(mode)

    for now, arrivals in ticks:
        for entry in arrivals:
            queue.push(entry)
        while _ready(queue, now, cfg):
            best: Optional[MatchProposal] = None
            launched: Optional[Launch] = None
            for attempt in range(1, cfg.max_attempts + 1):
                proposal = propose(queue, rng, store, schema, now, cfg)
                if proposal is None:
                    break
                result = gate(proposal)
                proposal = replace(proposal, predicted=result.predicted, accepted=result.accept)
                if log is not None:
                    log.record("proposal", tick=now, attempt=attempt, **proposal.to_dict())
                if result.accept:
                    launched = Launch(now, proposal, attempt, fallback=False)
                    break
                if best is None or imbalance(model, proposal.predicted) < imbalance(model, best.predicted):
                    best = proposal
            if launched is None:
                if best is None:
                    break
                launched = Launch(now, best, cfg.max_attempts, fallback=True)
            queue.remove(launched.proposal.player_ids)
            if log is not None:
                log.record("launch", tick=now, attempts=launched.attempts, fallback=launched.fallback,
                           **launched.proposal.to_dict())
            if on_launch is not None:
                on_launch(launched)
            yield launched


def _ready(queue: MatchQueue, now: float, cfg: MatchmakerConfig) -> bool:
    full = 2 * queue.team_size
    if len(queue) >= max(full, cfg.min_queue):
        return True
    # bot-filled launch for a short queue whose oldest entry has waited long enough
    return cfg.min_humans <= len(queue) < full and now - queue.entries[0].enqueued_at >= cfg.bot_fill_after


def accept_all(proposal: MatchProposal) -> GateResult:
    return GateResult(accept=True, predicted=0.0)


@dataclass
class SessionResult:
    records: List[MatchRecord] = field(default_factory=list)
    launches: List[Launch] = field(default_factory=list)

    @property
    def mean_abs_diff(self) -> float:
        return float(np.mean([abs(r.score_diff) for r in self.records])) if self.records else 0.0

    @property
    def fallback_rate(self) -> float:
        return float(np.mean([launch.fallback for launch in self.launches])) if self.launches else 0.0


def simulate_session(
    population: Population,
    model: Optional[TrainedModel],
    store: ProfileStore,
    schema: FeatureSchema,
    n_matches: int,
    seed: int,
    thresholds: BalanceThresholds = GATE_THRESHOLDS,
    cfg: MatchmakerConfig = MatchmakerConfig(),
    arrivals_per_tick: int = 12,
    ticks_per_day: int = 250,
    gated: bool = True,
    log: Optional[SessionLog] = None,
    queue_depth: int = 120,
) -> SessionResult:
    """Drive matchmaking with synthetic arrivals and resolve launches with the simulator.

    Arrivals and match outcomes draw from streams derived from ``seed``, so a
    gated and a gate-free session with the same seed see the same arrival
    sequence. Launches wait for ``queue_depth`` queued players (at most half
    the population). The gate-free session assembles teams at random from the
    whole queue. ``store`` is copied; profiles grow with the session's own matches.
    """
    if n_matches < 1:
        raise ConfigError("n_matches must be positive")
    if queue_depth < 0:
        raise ConfigError("queue_depth must be non-negative")
    cfg = replace(cfg, min_queue=max(cfg.min_queue, min(queue_depth, len(population) // 2)),
                  random_assembly=cfg.random_assembly or not gated)
    mode = population.config.mode
    store = store.copy()
    simulator = MatchSimulator(population)
    arrivals_rng = derive_rng(seed, "arrivals")
    proposal_rng = derive_rng(seed, "proposals")
    outcome_rng = derive_rng(seed, "outcomes")
    first_day = store.max_day_applied + 1
    result = SessionResult()
    busy: set = set()

    def ticks():
        tick = 0
        while len(result.records) < n_matches:
            free = np.setdiff1d(np.arange(len(population)), np.fromiter(busy, dtype=int, count=len(busy)))
            k = min(arrivals_per_tick, free.size)
            chosen = arrivals_rng.choice(free, size=k, replace=False) if k else []
            entries = [QueueEntry(int(p), float(population.rating[p]), float(tick), mode) for p in chosen]
            busy.update(int(p) for p in chosen)
            yield float(tick), entries
            tick += 1

    def resolve(launch: Launch) -> None:
        teams = [[e.player_id for e in team] for team in launch.proposal.rosters]
        day = first_day + int(launch.tick) // ticks_per_day
        record = simulator.simulate_match(teams[0], teams[1], launch.proposal.roles, outcome_rng,
                                          match_id=len(result.records), day_index=day)
        store.apply(record)
        busy.difference_update(launch.proposal.player_ids)
        result.records.append(record)
        result.launches.append(launch)

    gate = None if gated else accept_all
    for _ in run_matchmaking(ticks(), model, store, schema, proposal_rng, thresholds, cfg, mode,
                             gate=gate, log=log, on_launch=resolve):
        if len(result.records) >= n_matches:
            break
    logger.info(
        "%s session: %d matches, mean |score diff| %.3f, fallback rate %.2f",
        "Gated" if gated else "Gate-free", len(result.records), result.mean_abs_diff, result.fallback_rate,
    )
    return result
