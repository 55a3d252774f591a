# app/core/pipeline.py
"""Glue shared by the command line and the report service."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.config import RunConfig
from app.core.analysis import FeatureMask, select_best_subset
from app.core.errors import ConfigError, SchemaError
from app.core.features import FeatureSchema, feature_matrix, featurize_log
from app.core.harness import EvalReport, ModelSpec, evaluate
from app.core.matchlog import read_matchlog
from app.core.predictors import BalanceThresholds, ModelKind, TrainedModel
from app.core.seeding import derive_seed

logger = logging.getLogger(__name__)


def schema_for(cfg: RunConfig) -> FeatureSchema:
    pop = cfg.population_config()
    return FeatureSchema(roles=pop.roles, actions=pop.actions)


def load_features(log_path: Union[str, Path], schema: FeatureSchema) -> pd.DataFrame:
    return featurize_log(read_matchlog(log_path), schema)


def hyper_for(kind: ModelKind, cfg: RunConfig, n_jobs: int = 1) -> dict:
    """Run-config hyperparameters; each seeded kind draws from its own derived stream."""
    if kind is ModelKind.RANDOM_FOREST:
        return {"n_jobs": n_jobs, "seed": derive_seed(cfg.seed, kind.value), **cfg.forest}
    if kind in (ModelKind.MLP_REGRESSOR, ModelKind.MLP_SOFTMAX):
        return {"seed": derive_seed(cfg.seed, kind.value), **cfg.mlp}
    return {}


def wants_best_subset(names: Sequence[str], cfg: RunConfig) -> bool:
    return cfg.best_subset or any(n.strip().endswith("+") for n in names)


def build_specs(names: Sequence[str], cfg: RunConfig, mask: Optional[FeatureMask] = None,
                n_jobs: int = 1) -> List[ModelSpec]:
    """Model specs for names like ``Linear``, ``Linear+`` or ``MlpSoftmax+``.

    A trailing ``+`` refits the kind on the best feature subset. With
    ``cfg.best_subset`` every kind except Dummy and AvgSkill also gets a
    ``+`` variant.
    """
    names = [n.strip() for n in names if n.strip()]
    if cfg.best_subset:
        extra = [f"{n}+" for n in names if not n.endswith("+")
                 and ModelKind.parse(n) not in (ModelKind.DUMMY, ModelKind.AVG_SKILL)]
        names = names + [n for n in extra if n not in names]
    specs = []
    for name in names:
        plus = name.endswith("+")
        kind = ModelKind.parse(name.rstrip("+"))
        if plus and mask is None:
            raise ConfigError(f"{name} needs a best-subset mask")
        specs.append(ModelSpec(
            label=name if plus else kind.value,
            kind=kind,
            mask=mask.keep if plus else None,
            hyper=hyper_for(kind, cfg, n_jobs),
            symmetrize=cfg.symmetrize,
        ))
    return specs


def best_subset_mask(frame: pd.DataFrame, schema: FeatureSchema, cfg: RunConfig,
                     before_day: Optional[int] = None) -> FeatureMask:
    """Best subset chosen on matches strictly before ``before_day``."""
    rows = frame if before_day is None else frame[frame["day_index"] < before_day]
    if len(rows) < 2:
        raise ConfigError("not enough matches to select a feature subset")
    X = feature_matrix(rows, schema)
    return select_best_subset(X, rows["score_diff"].to_numpy(dtype=float), schema, cfg.keep_k, cfg.r_max)


def first_test_day(frame: pd.DataFrame, cfg: RunConfig) -> int:
    days = frame["day_index"].to_numpy()
    first, last = int(days.min()), int(days.max())
    n_windows = last - first + 1 - cfg.k_days + 1
    skip = 0 if cfg.max_windows is None else max(0, n_windows - cfg.max_windows)
    return first + cfg.k_days - 1 + skip


def run_evaluation(frame: pd.DataFrame, schema: FeatureSchema, cfg: RunConfig,
                   mask: Optional[FeatureMask] = None, n_jobs: int = 1) -> EvalReport:
    if mask is None and wants_best_subset(cfg.models, cfg):
        # selected on data every evaluated window trains on
        mask = best_subset_mask(frame, schema, cfg, before_day=first_test_day(frame, cfg) - 2)
    specs = build_specs(cfg.models, cfg, mask, n_jobs)

    return evaluate(
        frame, schema, specs,
        thresholds=BalanceThresholds(theta=cfg.theta, omega=cfg.omega),
        K=cfg.k_days,
        max_windows=cfg.max_windows,
        tune_omega=cfg.tune_omega,
        forest_depths=cfg.forest_depths or None,
    )


def check_schema(models: Sequence[Tuple[str, TrainedModel]], schema: FeatureSchema) -> None:
    for name, model in models:
        if model.schema_hash != schema.hash:
            raise SchemaError(
                f"{name} was trained on feature schema {model.schema_hash[:12]}, "
                f"the log uses {schema.hash[:12]}"
            )


def split_last_days(frame: pd.DataFrame, n_days: int) -> Tuple[np.ndarray, np.ndarray]:
    """Boolean (train, test) row masks holding out the last ``n_days`` days."""
    days = frame["day_index"].to_numpy()
    cut = int(days.max()) - n_days + 1
    return days < cut, days >= cut
