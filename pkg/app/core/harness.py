# app/core/harness.py
"""Rolling-window evaluation and inference timing.

For a window whose test day is K, training uses every day from the first
day through K-3, validation uses days K-2 and K-1, and testing uses day K.
Windows advance one day at a time, so the training set keeps growing.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
import pandas as pd
from threadpoolctl import threadpool_limits

from app.core.errors import EvaluationError, ParameterError
from app.core.features import FeatureSchema, ProfileStore, feature_matrix, featurize_log
from app.core.predictors import (
    BalanceThresholds,
    ModelKind,
    TrainedModel,
    balance_labels,
    decide,
    train_model,
)
from app.core.simworld import MatchRecord

logger = logging.getLogger(__name__)

GROUP_SIZE = 20
DEFAULT_OMEGA_GRID = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)


@dataclass(frozen=True)
class WindowSplit:
    index: int
    train_days: Tuple[int, ...]
    val_days: Tuple[int, ...]
    test_days: Tuple[int, ...]


def rolling_splits(first_day: int, last_day: int, K: int) -> List[WindowSplit]:
    if K < 4:
        raise ParameterError(f"K must be at least 4, got {K}")
    if last_day - first_day + 1 < K:
        raise ParameterError(f"days {first_day}..{last_day} cannot hold a window of {K} days")
    return [
        WindowSplit(
            index=i,
            train_days=tuple(range(first_day, test - 2)),
            val_days=(test - 2, test - 1),
            test_days=(test,),
        )
        for i, test in enumerate(range(first_day + K - 1, last_day + 1))
    ]


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @classmethod
    def of(cls, preds: Sequence[int], labels: Sequence[int]) -> "Confusion":
        p = np.asarray(preds, dtype=int)
        y = np.asarray(labels, dtype=int)
        if p.shape != y.shape:
            raise ParameterError(f"{p.size} predictions for {y.size} labels")
        return cls(
            tp=int(np.sum((p == 1) & (y == 1))),
            fp=int(np.sum((p == 1) & (y == 0))),
            fn=int(np.sum((p == 0) & (y == 1))),
            tn=int(np.sum((p == 0) & (y == 0))),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def f1(self) -> float:
        precision = self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0
        recall = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def f1(preds: Sequence[int], labels: Sequence[int]) -> float:
    """F1 of the balanced class (label 1); 0 when precision + recall is 0."""
    return Confusion.of(preds, labels).f1


def aggregate_f1(preds: Sequence[int], labels: Sequence[int], group_size: int = GROUP_SIZE) -> Tuple[float, float, List[float]]:
    """Mean and standard deviation of F1 over consecutive groups of test matches.

    Only complete groups count; a sequence shorter than one group is scored
    as a single group.
    """
    p = np.asarray(preds, dtype=int)
    y = np.asarray(labels, dtype=int)
    if p.shape != y.shape:
        raise ParameterError(f"{p.size} predictions for {y.size} labels")
    if p.size == 0:
        raise ParameterError("no predictions to score")
    n_groups = p.size // group_size
    if n_groups == 0:
        scores = [f1(p, y)]
    else:
        scores = [f1(p[g * group_size:(g + 1) * group_size], y[g * group_size:(g + 1) * group_size])
                  for g in range(n_groups)]
    return float(np.mean(scores)), float(np.std(scores)), scores


@dataclass(frozen=True)
class ModelSpec:
    """One evaluated model: a kind plus optional feature mask and hyperparameters."""

    label: str
    kind: ModelKind
    mask: Optional[np.ndarray] = None
    hyper: Mapping = field(default_factory=dict)
    symmetrize: bool = False

    @classmethod
    def of(cls, kind: Union[str, ModelKind], **kwargs) -> "ModelSpec":
        kind = ModelKind.parse(kind)
        return cls(label=kwargs.pop("label", kind.value), kind=kind, **kwargs)


@dataclass
class ModelScore:
    label: str
    kind: str
    f1_mean: float
    f1_std: float
    train_f1_mean: float
    train_f1_std: float
    confusion: Confusion
    groups: int
    window_scores: List[float] = field(default_factory=list)
    tuned: List[dict] = field(default_factory=list)


@dataclass
class EvalReport:
    thresholds: BalanceThresholds
    K: int
    windows: List[WindowSplit]
    scores: Dict[str, ModelScore]
    base_rate: float
    n_test: int

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for s in self.scores.values():
            rows.append({
                "model": s.label,
                "kind": s.kind,
                "f1_mean": s.f1_mean,
                "f1_std": s.f1_std,
                "train_f1_mean": s.train_f1_mean,
                "train_f1_std": s.train_f1_std,
                "tp": s.confusion.tp,
                "fp": s.confusion.fp,
                "fn": s.confusion.fn,
                "tn": s.confusion.tn,
                "groups": s.groups,
                "windows": len(s.window_scores),
                "base_rate": self.base_rate,
            })
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        return {
            "thresholds": asdict(self.thresholds),
            "K": self.K,
            "n_test": self.n_test,
            "base_rate": self.base_rate,
            "windows": [asdict(w) for w in self.windows],
            "models": [
                {**{k: v for k, v in asdict(s).items() if k != "confusion"}, "confusion": asdict(s.confusion)}
                for s in self.scores.values()
            ],
        }

    def write(self, out_dir: Union[str, Path], stem: str = "eval_report") -> Tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
        self.to_frame().to_csv(csv_path, index=False)
        json_path.write_bytes(orjson.dumps(self.to_dict(), option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2))
        return csv_path, json_path


def _fit(spec: ModelSpec, schema: FeatureSchema, X, d, X_val, d_val, hyper: Mapping) -> TrainedModel:
    return train_model(spec.kind, X, d, schema, mask=spec.mask, hyper=hyper, X_val=X_val, diff_val=d_val,
                       symmetrize_labels=spec.symmetrize)


def _tune_depth(spec: ModelSpec, schema: FeatureSchema, X, d, X_val, d_val, depths: Sequence[int]) -> dict:
    best, best_mse = dict(spec.hyper), np.inf
    for depth in depths:
        hyper = {**spec.hyper, "max_depth": int(depth)}
        model = _fit(spec, schema, X, d, X_val, d_val, hyper)
        mse = float(np.mean((model.predict_rows(X_val) - d_val) ** 2))
        if mse < best_mse:
            best, best_mse = hyper, mse
    return best


def _tune_omega(model: TrainedModel, thresholds: BalanceThresholds, X_val, d_val, grid: Sequence[float]) -> float:
    truth = balance_labels(d_val, thresholds.theta)
    probs = model.predict_rows(X_val)
    scores = [f1(decide(model, probs, thresholds, omega), truth) for omega in grid]
    return float(grid[int(np.argmax(scores))])


def evaluate(
    frame: pd.DataFrame,
    schema: FeatureSchema,
    specs: Sequence[ModelSpec],
    thresholds: BalanceThresholds = BalanceThresholds(),
    K: int = 30,
    max_windows: Optional[int] = None,
    group_size: int = GROUP_SIZE,
    tune_omega: bool = False,
    omega_grid: Sequence[float] = DEFAULT_OMEGA_GRID,
    forest_depths: Optional[Sequence[int]] = None,
) -> EvalReport:
    """Score every model over rolling windows of a featurized log.

    ``frame`` comes from :func:`featurize_log`, whose rows only see profiles
    from earlier days. Each window refits from scratch on its own training
    days; the normalizer is fit on training rows only.
    """
    if frame.empty:
        raise EvaluationError("the match log is empty")
    if not specs:
        raise EvaluationError("no models to evaluate")
    days = frame["day_index"].to_numpy()
    windows = rolling_splits(int(days.min()), int(days.max()), K)
    if max_windows is not None:
        windows = windows[-max_windows:]
    X_all = feature_matrix(frame, schema)
    diff_all = frame["score_diff"].to_numpy(dtype=float)

    preds: Dict[str, List[np.ndarray]] = {s.label: [] for s in specs}
    train_scores: Dict[str, List[float]] = {s.label: [] for s in specs}
    window_scores: Dict[str, List[float]] = {s.label: [] for s in specs}
    tuned: Dict[str, List[dict]] = {s.label: [] for s in specs}
    truth: List[np.ndarray] = []

    for w in windows:
        tr, va, te = (np.isin(days, w.train_days), np.isin(days, w.val_days), np.isin(days, w.test_days))
        if tr.sum() < 2 or te.sum() == 0:
            raise EvaluationError(
                f"window {w.index} (test day {w.test_days[0]}) has {int(tr.sum())} training and "
                f"{int(te.sum())} test matches"
            )
        X, d = X_all[tr], diff_all[tr]
        X_val, d_val = X_all[va], diff_all[va]
        X_test, d_test = X_all[te], diff_all[te]
        y_test = balance_labels(d_test, thresholds.theta)
        y_train = balance_labels(d, thresholds.theta)
        truth.append(y_test)

        for spec in specs:
            hyper = dict(spec.hyper)
            chosen: dict = {}
            try:
                if spec.kind is ModelKind.RANDOM_FOREST and forest_depths and len(d_val):
                    hyper = _tune_depth(spec, schema, X, d, X_val, d_val, forest_depths)
                    chosen["max_depth"] = hyper["max_depth"]
                model = _fit(spec, schema, X, d, X_val, d_val, hyper)
            except ValueError as e:
                raise EvaluationError(f"window {w.index} (test day {w.test_days[0]}): {spec.label}: {e}") from e

            omega = thresholds.omega
            if spec.kind.is_classifier and tune_omega and len(d_val):
                omega = _tune_omega(model, thresholds, X_val, d_val, omega_grid)
                chosen["omega"] = omega

            p_test = decide(model, model.predict_rows(X_test), thresholds, omega)
            p_train = decide(model, model.predict_rows(X), thresholds, omega)
            preds[spec.label].append(p_test)
            window_scores[spec.label].append(f1(p_test, y_test))
            train_scores[spec.label].append(f1(p_train, y_train))
            tuned[spec.label].append(chosen)
        logger.info("Window %d/%d (test day %d) done", w.index + 1 - windows[0].index, len(windows), w.test_days[0])

    y_all = np.concatenate(truth)
    scores = {}
    for spec in specs:
        p_all = np.concatenate(preds[spec.label])
        mean, std, groups = aggregate_f1(p_all, y_all, group_size)
        scores[spec.label] = ModelScore(
            label=spec.label,
            kind=spec.kind.value,
            f1_mean=mean,
            f1_std=std,
            train_f1_mean=float(np.mean(train_scores[spec.label])),
            train_f1_std=float(np.std(train_scores[spec.label])),
            confusion=Confusion.of(p_all, y_all),
            groups=len(groups),
            window_scores=window_scores[spec.label],
            tuned=tuned[spec.label],
        )
    return EvalReport(
        thresholds=thresholds,
        K=K,
        windows=windows,
        scores=scores,
        base_rate=float(y_all.mean()),
        n_test=int(y_all.size),
    )


def evaluate_log(
    records: Iterable[MatchRecord],
    schema: FeatureSchema,
    specs: Sequence[ModelSpec],
    **kwargs,
) -> Tuple[EvalReport, ProfileStore]:
    """Featurize with an auditing profile store, then evaluate."""
    store = ProfileStore(schema.roles, schema.actions, audit=True)
    frame = featurize_log(records, schema, store=store)
    return evaluate(frame, schema, specs, **kwargs), store


@dataclass(frozen=True)
class TimingRow:
    label: str
    kind: str
    train_seconds: float
    infer_mean: float
    infer_std: float
    infer_median: float
    repetitions: int


@dataclass
class TimingReport:
    rows: List[TimingRow]

    def row(self, label: str) -> TimingRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows])

    def write(self, out_dir: Union[str, Path], stem: str = "timing_report") -> Tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
        self.to_frame().to_csv(csv_path, index=False)
        json_path.write_bytes(orjson.dumps([asdict(r) for r in self.rows], option=orjson.OPT_INDENT_2))
        return csv_path, json_path


def benchmark(
    specs: Sequence[ModelSpec],
    X_train: np.ndarray,
    diff_train: np.ndarray,
    schema: FeatureSchema,
    test_rows: np.ndarray,
    repetitions: int = 20,
    warmup: int = 4,
) -> TimingReport:
    """Training wall time and single-match inference latency per model.

    Runs with BLAS and OpenMP pools pinned to one thread.
    """
    if repetitions < 1:
        raise ParameterError("repetitions must be >= 1")
    test_rows = np.atleast_2d(np.asarray(test_rows, dtype=float))
    with threadpool_limits(limits=1):
        rows = [_time_spec(spec, X_train, diff_train, schema, test_rows, repetitions, warmup) for spec in specs]
    return TimingReport(rows=rows)


def _time_spec(spec: ModelSpec, X_train: np.ndarray, diff_train: np.ndarray, schema: FeatureSchema,
               test_rows: np.ndarray, repetitions: int, warmup: int) -> TimingRow:
    hyper = dict(spec.hyper)
    if spec.kind is ModelKind.RANDOM_FOREST:
        hyper["n_jobs"] = 1
    start = time.perf_counter()
    model = train_model(spec.kind, X_train, diff_train, schema, mask=spec.mask, hyper=hyper,
                        symmetrize_labels=spec.symmetrize)
    train_seconds = time.perf_counter() - start

    for i in range(warmup):
        model.predict_rows(test_rows[i % len(test_rows)][None, :])
    latencies = np.empty(repetitions)
    for i in range(repetitions):
        row = test_rows[i % len(test_rows)][None, :]
        start = time.perf_counter()
        model.predict_rows(row)
        latencies[i] = time.perf_counter() - start
    logger.info("Benchmarked %s: train %.3fs, inference %.2e s/match", spec.label, train_seconds, latencies.mean())
    return TimingRow(
        label=spec.label,
        kind=spec.kind.value,
        train_seconds=train_seconds,
        infer_mean=float(latencies.mean()),
        infer_std=float(latencies.std()),
        infer_median=float(np.median(latencies)),
        repetitions=repetitions,
    )
