# app/core/analysis.py
"""Feature selection and coefficient significance.

Correlation pruning and recursive feature elimination produce the "best
subset" masks used by the ``+`` model variants; the OLS significance table
explains which team-symmetric features drive imbalance.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
import pandas as pd
from scipy import stats

from app.core.errors import ParameterError, RankDeficiencyError, SchemaError
from app.core.features import FeatureSchema, fit_normalizer
from app.core.forest import ForestParams, fit_forest_arrays
from app.core.linear import design, least_squares

logger = logging.getLogger(__name__)

ImportanceFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
Names = Union[FeatureSchema, Sequence[str]]


def _names(names: Names, d: int) -> Tuple[str, ...]:
    out = tuple(names.names if isinstance(names, FeatureSchema) else names)
    if len(out) != d:
        raise SchemaError(f"{len(out)} names for {d} columns")
    return out


@dataclass(frozen=True)
class FeatureMask:
    keep: np.ndarray
    names: Tuple[str, ...]
    provenance: str = ""

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        object.__setattr__(self, "keep", keep)
        object.__setattr__(self, "names", tuple(self.names))
        if keep.shape != (len(self.names),):
            raise SchemaError(f"mask of length {keep.size} for {len(self.names)} features")
        if not keep.any():
            raise ParameterError("a feature mask must keep at least one coordinate")

    @property
    def kept(self) -> List[str]:
        return [n for n, k in zip(self.names, self.keep) if k]

    def to_json(self) -> bytes:
        return orjson.dumps(
            {"names": list(self.names), "keep": [bool(k) for k in self.keep], "provenance": self.provenance},
            option=orjson.OPT_SORT_KEYS,
        )

    @classmethod
    def from_json(cls, payload: Union[bytes, str]) -> "FeatureMask":
        data = orjson.loads(payload)
        return cls(keep=np.asarray(data["keep"], dtype=bool), names=tuple(data["names"]),
                   provenance=data.get("provenance", ""))

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_json())

    @classmethod
    def read(cls, path: Union[str, Path]) -> "FeatureMask":
        return cls.from_json(Path(path).read_bytes())


def correlation_prune(X: np.ndarray, names: Names, r_max: float = 0.95) -> FeatureMask:
    """Greedy scan in column order; a column correlated above ``r_max`` with an
    already kept column is dropped. Constant columns correlate 0 with everything."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ParameterError("correlation pruning needs at least 2 rows")
    labels = _names(names, X.shape[1])
    corr = pd.DataFrame(X).corr().fillna(0.0).to_numpy()

    kept: List[int] = []
    for j in range(X.shape[1]):
        if not kept or np.max(np.abs(corr[j, kept])) <= r_max:
            kept.append(j)
    keep = np.zeros(X.shape[1], dtype=bool)
    keep[kept] = True
    logger.info("Correlation pruning kept %d of %d features (r_max=%.2f)", len(kept), X.shape[1], r_max)
    return FeatureMask(keep=keep, names=labels, provenance=f"correlation_prune(r_max={r_max:g})")


def linear_importance(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """|coefficient| of a least-squares fit on z-scored inputs."""
    Z = fit_normalizer(X).apply(X)
    _, coef = least_squares(Z, y)
    return np.abs(coef)


def forest_importance(params: Optional[ForestParams] = None) -> ImportanceFn:
    """Importance function returning each feature's mean impurity decrease."""
    params = params or ForestParams(n_trees=25, seed=0)

    def importance(X: np.ndarray, y: np.ndarray) -> np.ndarray:
        return fit_forest_arrays(X, y, params)["importance"]

    return importance


@dataclass(frozen=True)
class RfeResult:
    ranking: List[str]
    elimination_order: List[str]
    mask: FeatureMask


def rfe(
    fit_fn: ImportanceFn,
    X: np.ndarray,
    y: np.ndarray,
    keep_k: int,
    step: int = 1,
    names: Optional[Names] = None,
) -> RfeResult:
    """Recursive feature elimination.

    Each round refits on the surviving columns and drops the ``step`` least
    important; on equal importance the later column goes first.
    """
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    labels = _names(names, d) if names is not None else tuple(f"x{i}" for i in range(d))
    if not 1 <= keep_k <= d:
        raise ParameterError(f"keep_k must lie in [1, {d}], got {keep_k}")
    if step < 1:
        raise ParameterError("step must be >= 1")

    active = np.arange(d)
    eliminated: List[int] = []
    importance = fit_fn(X, y)
    while active.size > keep_k:
        n_drop = min(step, active.size - keep_k)
        # ascending importance, then descending column index
        order = np.lexsort((-active, importance))
        drop = set(active[order[:n_drop]].tolist())
        eliminated.extend(int(i) for i in active[order[:n_drop]])
        active = np.array([i for i in active if i not in drop])
        importance = fit_fn(X[:, active], y)
        logger.debug("RFE: %d features left", active.size)

    survivors = active[np.lexsort((active, -importance))]
    ranking = [labels[i] for i in survivors] + [labels[i] for i in reversed(eliminated)]
    keep = np.zeros(d, dtype=bool)
    keep[active] = True
    mask = FeatureMask(keep=keep, names=labels, provenance=f"rfe(keep_k={keep_k}, step={step})")
    return RfeResult(ranking=ranking, elimination_order=[labels[i] for i in eliminated], mask=mask)


def select_best_subset(
    X: np.ndarray,
    y: np.ndarray,
    schema: FeatureSchema,
    keep_k: int = 20,
    r_max: float = 0.95,
    importance: str = "linear",
    step: int = 1,
) -> FeatureMask:
    """Correlation pruning followed by RFE; returns a mask over the full schema."""
    pruned = correlation_prune(X, schema, r_max)
    cols = np.flatnonzero(pruned.keep)
    cols = cols[independent_columns(X[:, cols])]
    k = min(keep_k, cols.size)
    if k < keep_k:
        logger.warning("Only %d features survive pruning, keeping all of them", cols.size)
    fit_fn = linear_importance if importance == "linear" else forest_importance()
    result = rfe(fit_fn, X[:, cols], y, k, step, [schema.names[i] for i in cols])
    keep = np.zeros(schema.dim, dtype=bool)
    keep[cols[result.mask.keep]] = True
    return FeatureMask(
        keep=keep,
        names=schema.names,
        provenance=f"{pruned.provenance}+{result.mask.provenance}+{importance}",
    )


@dataclass(frozen=True)
class SignificanceRow:
    feature: str
    coefficient: float
    std_error: float
    t_stat: float
    p_value: float


def ols_significance(X: np.ndarray, y: np.ndarray, names: Optional[Names] = None) -> List[SignificanceRow]:
    """Coefficient t-tests of an OLS fit with intercept, sorted by |coefficient|."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    labels = _names(names, d) if names is not None else tuple(f"x{i}" for i in range(d))
    if n <= d + 1:
        raise ParameterError(f"significance needs more than {d + 1} rows, got {n}")
    A = design(X)
    if np.linalg.matrix_rank(A) < d + 1:
        raise RankDeficiencyError("design matrix is rank deficient; prune correlated or constant features first")

    gram_inv = np.linalg.inv(A.T @ A)
    beta = gram_inv @ (A.T @ y)
    resid = y - A @ beta
    dof = n - d - 1
    sigma2 = float(resid @ resid) / dof
    se = np.sqrt(np.maximum(sigma2 * np.diag(gram_inv), 0.0))
    # a perfect fit has zero standard errors; t is then +-inf (or 0 for a zero coefficient)
    t = np.divide(beta, se, out=np.where(beta == 0, 0.0, np.copysign(np.inf, beta)), where=se > 0)
    p = 2.0 * stats.t.sf(np.abs(t), dof)

    rows = [
        SignificanceRow(labels[i], float(beta[i + 1]), float(se[i + 1]), float(t[i + 1]), float(p[i + 1]))
        for i in range(d)
    ]
    return sorted(rows, key=lambda r: -abs(r.coefficient))


def independent_columns(X: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Greedy left-to-right mask of columns outside the span of the intercept
    and the columns kept before them (Gram-Schmidt residual test)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    basis = [np.full(n, 1.0 / np.sqrt(n))]
    keep = np.zeros(X.shape[1], dtype=bool)
    for j in range(X.shape[1]):
        x = X[:, j]
        Q = np.column_stack(basis)
        resid = x - Q @ (Q.T @ x)
        resid -= Q @ (Q.T @ resid)
        norm = np.linalg.norm(resid)
        if norm > tol * max(np.linalg.norm(x), 1.0):
            basis.append(resid / norm)
            keep[j] = True
    return keep


def symmetric_view(X: np.ndarray, schema: FeatureSchema) -> Tuple[np.ndarray, List[str]]:
    """Team-symmetric design: averages and absolute differences of the team
    means, plus total headcount, average skill and the skill gap."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != schema.dim:
        raise SchemaError(f"matrix has {X.shape[1]} columns, schema has {schema.dim}")
    t1, t2 = X[:, schema.block("t1_mean")], X[:, schema.block("t2_mean")]
    absdiff = X[:, schema.block("absdiff")]
    col = schema.index
    extra = np.column_stack([
        X[:, col("t1_humans")] + X[:, col("t2_humans")],
        0.5 * (X[:, col("t1_avg_skill")] + X[:, col("t2_avg_skill")]),
        X[:, col("avg_skill_abs_diff")],
    ])
    names = (
        [f"avg_{f}" for f in schema.player_names]
        + [f"{f}_abs_diff" for f in schema.player_names]
        + ["cnt_players", "avg_skill", "skill_abs_diff"]
    )
    return np.hstack([0.5 * (t1 + t2), absdiff, extra]), names


_PHRASES = {
    "num_matches": "number of matches played",
    "num_wins": "number of wins",
    "freq_wins": "win rate",
    "num_dropout": "number of dropouts",
    "freq_dropout": "dropout rate",
}


def _phrase(feature: str) -> str:
    if feature in _PHRASES:
        return _PHRASES[feature]
    for prefix, template in (
        ("avg_num_action_", "{} actions per match"),
        ("num_action_", "total {} actions"),
        ("freq_role_", "rate of playing {}"),
        ("num_role_", "matches played as {}"),
    ):
        if feature.startswith(prefix):
            return template.format(feature[len(prefix):].replace("_", " "))
    return feature.replace("_", " ")


def describe_feature(name: str) -> str:
    special = {
        "cnt_players": "Number of human players in the match",
        "avg_skill": "Average skill rating of the players",
        "skill_abs_diff": "Absolute difference of the teams' average skill ratings",
    }
    if name in special:
        return special[name]
    if name.endswith("_abs_diff"):
        return f"Absolute team difference in {_phrase(name[:-len('_abs_diff')])}"
    for prefix, template in (
        ("avg_", "Average {} of the players"),
        ("t1_mean_", "Team 1 mean {}"),
        ("t2_mean_", "Team 2 mean {}"),
        ("t1_std_", "Team 1 spread of {}"),
        ("t2_std_", "Team 2 spread of {}"),
        ("absdiff_", "Absolute team difference in {}"),
        ("diff_", "Team 1 minus team 2 {}"),
    ):
        if name.startswith(prefix):
            return template.format(_phrase(name[len(prefix):]))
    return name.replace("_", " ").capitalize()


def significance_frame(rows: Sequence[SignificanceRow]) -> pd.DataFrame:
    frame = pd.DataFrame(
        [(r.feature, r.coefficient, r.std_error, r.t_stat, r.p_value) for r in rows],
        columns=["feature", "coefficient", "std_error", "t_stat", "p_value"],
    )
    frame["description"] = frame["feature"].map(describe_feature)
    return frame


def significance_report(X: np.ndarray, score_diff: np.ndarray, schema: FeatureSchema,
                        r_max: float = 0.95) -> pd.DataFrame:
    """Symmetric view, pruned and z-scored, regressed on |score_diff|."""
    view, names = symmetric_view(X, schema)
    pruned = correlation_prune(view, names, r_max)
    kept = view[:, pruned.keep]
    independent = independent_columns(kept)
    kept, kept_names = kept[:, independent], [n for n, i in zip(pruned.kept, independent) if i]
    Z = fit_normalizer(kept).apply(kept)
    rows = ols_significance(Z, np.abs(np.asarray(score_diff, dtype=float)), kept_names)
    return significance_frame(rows)
