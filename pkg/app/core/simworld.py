# app/core/simworld.py
"""Seeded synthetic player population and match logs.

Stands in for production telemetry: each team's score is a Poisson count
whose rate depends on the strength gap between the teams, so the planted
effects (skill gap, dropouts, bot slots) are known exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ConfigError, InvariantError, PlayerLookupError
from app.core.seeding import derive_rng

logger = logging.getLogger(__name__)

DEFAULT_ROLES = ("defense", "left_wing", "right_wing")
DEFAULT_ACTIONS = ("goal", "assist", "hit", "takeaway")
MODES = {"3v3": 3, "6v6": 6}


def mode_for_team_size(team_size: int) -> str:
    return f"{team_size}v{team_size}"


@dataclass(frozen=True)
class PopulationConfig:
    num_players: int = 3000
    roles: Tuple[str, ...] = DEFAULT_ROLES
    actions: Tuple[str, ...] = DEFAULT_ACTIONS
    team_size: int = 3
    skill_scale: float = 1.0
    dropout_rate_range: Tuple[float, float] = (0.0, 0.3)
    days: int = 90
    matches_per_day: int = 250
    seed: int = 7
    # calibration knobs, not observed quantities
    base_rate: float = 2.0
    beta: float = 1.0
    dropout_penalty: float = 0.3
    bot_penalty: float = 0.3
    bot_fill_prob: float = 0.1
    rating_noise: float = 0.1
    rating_offset: float = 1100.0
    rating_scale: float = 400.0

    def __post_init__(self):
        object.__setattr__(self, "roles", tuple(self.roles))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "dropout_rate_range", tuple(float(v) for v in self.dropout_rate_range))

        if self.num_players <= 0:
            raise ConfigError("num_players must be positive")
        if not self.roles:
            raise ConfigError("roles must not be empty")
        if not self.actions:
            raise ConfigError("actions must not be empty")
        if len(set(self.roles)) != len(self.roles) or len(set(self.actions)) != len(self.actions):
            raise ConfigError("role and action names must be unique")
        if self.team_size not in MODES.values():
            raise ConfigError(f"team_size must be 3 or 6, got {self.team_size}")
        if self.skill_scale <= 0:
            raise ConfigError("skill_scale must be positive")
        lo, hi = self.dropout_rate_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ConfigError(f"dropout_rate_range {self.dropout_rate_range} is not inside [0, 1]")
        if self.days < 0 or self.matches_per_day < 0:
            raise ConfigError("days and matches_per_day must be non-negative")
        if self.base_rate <= 0:
            raise ConfigError("base_rate must be positive")
        for name in ("dropout_penalty", "bot_penalty", "bot_fill_prob"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.rating_noise < 0 or self.rating_scale <= 0:
            raise ConfigError("rating_noise must be >= 0 and rating_scale > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def mode(self) -> str:
        return mode_for_team_size(self.team_size)

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "PopulationConfig":
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}, expected one of {sorted(MODES)}")
        return cls(team_size=MODES[mode], **overrides)


@dataclass(frozen=True)
class LatentPlayer:
    player_id: int
    role_skill: Tuple[float, ...]
    aggressiveness: float
    dropout_propensity: float
    rating: float

    @property
    def mean_skill(self) -> float:
        return float(np.mean(self.role_skill))


@dataclass
class Population:
    """Generator ground truth, stored column-wise."""

    config: PopulationConfig
    role_skill: np.ndarray
    aggressiveness: np.ndarray
    dropout_propensity: np.ndarray
    rating: np.ndarray
    bot_skill: float

    def __len__(self) -> int:
        return self.role_skill.shape[0]

    def player(self, player_id: int) -> LatentPlayer:
        if not 0 <= player_id < len(self):
            raise PlayerLookupError(f"unknown player {player_id}")
        return LatentPlayer(
            player_id=player_id,
            role_skill=tuple(float(v) for v in self.role_skill[player_id]),
            aggressiveness=float(self.aggressiveness[player_id]),
            dropout_propensity=float(self.dropout_propensity[player_id]),
            rating=float(self.rating[player_id]),
        )

    def rating_order(self) -> np.ndarray:
        return np.argsort(self.rating, kind="stable")


@dataclass
class RosterSlot:
    player_id: int
    role: str
    rating: float
    actions: Dict[str, int] = field(default_factory=dict)
    dropped_out: bool = False

    def to_dict(self) -> dict:
        return {
            "player_id": self.player_id,
            "role": self.role,
            "rating": self.rating,
            "actions": dict(self.actions),
            "dropped_out": self.dropped_out,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RosterSlot":
        return cls(
            player_id=int(data["player_id"]),
            role=str(data["role"]),
            rating=float(data["rating"]),
            actions={str(k): int(v) for k, v in data["actions"].items()},
            dropped_out=bool(data["dropped_out"]),
        )


@dataclass
class MatchRecord:
    match_id: int
    day_index: int
    mode: str
    rosters: Tuple[List[RosterSlot], List[RosterSlot]]
    human_count: Tuple[int, int]
    final_score: Tuple[int, int]
    score_diff: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvariantError(f"match {self.match_id}: unknown mode {self.mode!r}")
        if self.day_index < 0:
            raise InvariantError(f"match {self.match_id}: negative day_index")
        if self.score_diff != self.final_score[0] - self.final_score[1]:
            raise InvariantError(f"match {self.match_id}: score_diff does not match final_score")
        if min(self.final_score) < 0:
            raise InvariantError(f"match {self.match_id}: negative score")
        team_size = MODES[self.mode]
        for team, roster in enumerate(self.rosters):
            if self.human_count[team] != len(roster) or len(roster) > team_size:
                raise InvariantError(f"match {self.match_id}: human_count inconsistent for team {team + 1}")

    def team_of(self, player_id: int) -> int:
        for team, roster in enumerate(self.rosters):
            if any(slot.player_id == player_id for slot in roster):
                return team
        raise PlayerLookupError(f"player {player_id} is not rostered in match {self.match_id}")

    def slot(self, player_id: int) -> RosterSlot:
        for roster in self.rosters:
            for slot in roster:
                if slot.player_id == player_id:
                    return slot
        raise PlayerLookupError(f"player {player_id} is not rostered in match {self.match_id}")

    def player_ids(self) -> List[int]:
        return [slot.player_id for roster in self.rosters for slot in roster]

    def won(self, player_id: int) -> bool:
        """Strictly more goals than the opponent; ties are not wins."""
        team = self.team_of(player_id)
        return self.final_score[team] > self.final_score[1 - team]

    def to_dict(self) -> dict:
        return {
            "match_id": self.match_id,
            "day_index": self.day_index,
            "mode": self.mode,
            "rosters": [[slot.to_dict() for slot in roster] for roster in self.rosters],
            "human_count": list(self.human_count),
            "final_score": list(self.final_score),
            "score_diff": self.score_diff,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MatchRecord":
        rosters = data["rosters"]
        return cls(
            match_id=int(data["match_id"]),
            day_index=int(data["day_index"]),
            mode=str(data["mode"]),
            rosters=(
                [RosterSlot.from_dict(s) for s in rosters[0]],
                [RosterSlot.from_dict(s) for s in rosters[1]],
            ),
            human_count=(int(data["human_count"][0]), int(data["human_count"][1])),
            final_score=(int(data["final_score"][0]), int(data["final_score"][1])),
            score_diff=int(data["score_diff"]),
        )


def generate_population(cfg: PopulationConfig) -> Population:
    """Draw ``cfg.num_players`` latent players; fully determined by ``cfg.seed``."""
    rng = derive_rng(cfg.seed, "population")
    n, n_roles = cfg.num_players, len(cfg.roles)

    ability = np.clip(rng.normal(1.0, 0.3, size=n), 0.05, None)
    role_skill = ability[:, None] * np.exp(rng.normal(0.0, 0.15, size=(n, n_roles)))
    aggressiveness = rng.beta(2.0, 2.0, size=n)
    lo, hi = cfg.dropout_rate_range
    dropout = rng.uniform(lo, hi, size=n)
    noise = rng.normal(0.0, cfg.rating_noise, size=n)
    rating = cfg.rating_offset + cfg.rating_scale * (role_skill.mean(axis=1) + noise)

    bot_skill = float(np.percentile(role_skill, 5))
    logger.info("Generated population of %d players (bot skill %.3f)", n, bot_skill)
    return Population(
        config=cfg,
        role_skill=role_skill,
        aggressiveness=aggressiveness,
        dropout_propensity=dropout,
        rating=rating,
        bot_skill=bot_skill,
    )


class MatchSimulator:
    def __init__(self, population: Population):
        self.population = population
        self.cfg = population.config
        self._role_index = {role: i for i, role in enumerate(self.cfg.roles)}

    def _check_team(self, roster: Sequence[int], roles: Sequence[str]) -> None:
        if len(roster) > self.cfg.team_size:
            raise InvariantError(f"roster of {len(roster)} exceeds team size {self.cfg.team_size}")
        if len(roles) != len(roster):
            raise InvariantError("role assignment does not cover the roster")
        for pid, role in zip(roster, roles):
            if role not in self._role_index:
                raise InvariantError(f"role {role!r} is not configured")
            if not 0 <= pid < len(self.population):
                raise InvariantError(f"player {pid} is not in the population")

    def team_strength(self, roster: Sequence[int], roles: Sequence[str], dropped: Sequence[bool]) -> float:
        pop, cfg = self.population, self.cfg
        total = sum(pop.role_skill[pid, self._role_index[role]] for pid, role in zip(roster, roles))
        bots = cfg.team_size - len(roster)
        total += bots * pop.bot_skill
        return float(total * (1.0 - cfg.dropout_penalty) ** int(sum(dropped)) * (1.0 - cfg.bot_penalty) ** bots)

    def simulate_match(
        self,
        roster_a: Sequence[int],
        roster_b: Sequence[int],
        role_assignment: Tuple[Sequence[str], Sequence[str]],
        rng: np.random.Generator,
        match_id: int = 0,
        day_index: int = 0,
    ) -> MatchRecord:
        rosters = (list(roster_a), list(roster_b))
        if len(role_assignment) != 2:
            raise InvariantError("role_assignment must hold one role list per team")
        for roster, roles in zip(rosters, role_assignment):
            self._check_team(roster, roles)
        if len(set(rosters[0]) | set(rosters[1])) != len(rosters[0]) + len(rosters[1]):
            raise InvariantError("rosters must be disjoint and free of duplicates")

        pop, cfg = self.population, self.cfg
        dropped = [rng.random(len(r)) < pop.dropout_propensity[r] for r in rosters]
        strength = [self.team_strength(r, roles, d) for r, roles, d in zip(rosters, role_assignment, dropped)]

        gap = (strength[0] - strength[1]) / cfg.skill_scale
        rates = (cfg.base_rate * math.exp(cfg.beta * gap), cfg.base_rate * math.exp(-cfg.beta * gap))
        scores = (int(rng.poisson(rates[0])), int(rng.poisson(rates[1])))

        slots: List[List[RosterSlot]] = []
        for team in range(2):
            slots.append(self._team_actions(rosters[team], role_assignment[team], dropped[team], scores[team], rng))

        return MatchRecord(
            match_id=match_id,
            day_index=day_index,
            mode=cfg.mode,
            rosters=(slots[0], slots[1]),
            human_count=(len(rosters[0]), len(rosters[1])),
            final_score=scores,
            score_diff=scores[0] - scores[1],
        )

    def _team_actions(
        self,
        roster: List[int],
        roles: Sequence[str],
        dropped: np.ndarray,
        score: int,
        rng: np.random.Generator,
    ) -> List[RosterSlot]:
        pop, cfg = self.population, self.cfg
        n = len(roster)
        bots = cfg.team_size - n
        skill = np.array([pop.role_skill[pid, self._role_index[role]] for pid, role in zip(roster, roles)])
        presence = np.where(dropped, 0.5, 1.0)
        aggr = pop.aggressiveness[roster] if n else np.zeros(0)

        # goals and assists are shares of the team score; bots take their share too
        weights = np.concatenate([skill * presence, np.full(bots, pop.bot_skill)])
        weights = weights / weights.sum() if weights.sum() > 0 else np.full(len(weights), 1.0 / max(len(weights), 1))
        goals = rng.multinomial(score, weights)[:n] if len(weights) else np.zeros(0, dtype=int)
        assists_total = int(rng.binomial(score, 0.7))
        assists = rng.multinomial(assists_total, weights)[:n] if len(weights) else np.zeros(0, dtype=int)
        hits = rng.poisson((1.0 + 3.0 * aggr) * presence) if n else np.zeros(0, dtype=int)
        takeaways = rng.poisson((0.5 + 2.0 * skill * (1.0 - aggr)) * presence) if n else np.zeros(0, dtype=int)
        drawn = {"goal": goals, "assist": assists, "hit": hits, "takeaway": takeaways}

        out = []
        for i, (pid, role) in enumerate(zip(roster, roles)):
            actions = {}
            for action in cfg.actions:
                # actions outside the built-in four scale with aggressiveness
                count = drawn[action][i] if action in drawn else rng.poisson(aggr[i] * presence[i])
                actions[action] = int(count)
            out.append(RosterSlot(
                player_id=int(pid),
                role=role,
                rating=float(pop.rating[pid]),
                actions=actions,
                dropped_out=bool(dropped[i]),
            ))
        return out


def assign_roles(roles: Sequence[str], n_humans: int, team_size: int, rng: np.random.Generator) -> List[str]:
    """Random role assignment: roles cycled over the team's slots, shuffled."""
    slots = [roles[i % len(roles)] for i in range(team_size)]
    order = rng.permutation(team_size)
    return [slots[i] for i in order[:n_humans]]


def run_season(cfg: PopulationConfig, population: Optional[Population] = None) -> Iterator[MatchRecord]:
    """Yield ``cfg.days * cfg.matches_per_day`` records in non-decreasing day order.

    Rosters come from naive rating-proximity grouping: a random window of
    neighbours in rating order, shuffled and split in two.
    """
    population = population if population is not None else generate_population(cfg)
    team_size = cfg.team_size
    if len(population) < 3 * team_size:
        raise ConfigError(f"a season needs at least {3 * team_size} players, got {len(population)}")

    simulator = MatchSimulator(population)
    rng = derive_rng(cfg.seed, "season")
    order = population.rating_order()
    window = 3 * team_size
    match_id = 0

    for day in range(cfg.days):
        for _ in range(cfg.matches_per_day):
            start = int(rng.integers(0, len(order) - window + 1))
            pool = order[start:start + window]
            chosen = rng.choice(pool, size=2 * team_size, replace=False)
            teams = [list(map(int, chosen[:team_size])), list(map(int, chosen[team_size:]))]
            for team in teams:
                if rng.random() < cfg.bot_fill_prob:
                    del team[team_size - int(rng.integers(1, team_size)):]
            roles = tuple(assign_roles(cfg.roles, len(t), team_size, rng) for t in teams)
            yield simulator.simulate_match(teams[0], teams[1], roles, rng, match_id=match_id, day_index=day)
            match_id += 1
        logger.debug("Simulated day %d (%d matches so far)", day, match_id)

    logger.info("Season complete: %d matches over %d days", match_id, cfg.days)
