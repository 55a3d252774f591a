# app/core/predictors.py
"""Model kinds, fitted-model container, training dispatch and balance decisions.

Regression kinds (Dummy, AvgSkill, Linear, RandomForest, MlpRegressor)
predict the signed score difference r = score_1 - score_2. Classifier kinds
(Logistic, MlpSoftmax) predict P(team 1 wins). A match is called balanced
when |r| < theta, or for classifiers when |p - 1/2| <= omega.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from app.core.errors import ConfigError, DomainError, FitError, ParameterError, PredictionError
from app.core.features import FeatureSchema, MatchFeatureVector, Normalizer, fit_normalizer, symmetrize
from app.core.forest import ForestParams, fit_forest_arrays, predict_forest
from app.core.linear import check_training_data, least_squares, logistic_regression
from app.core.mlp import Head, MlpConfig, fit_network, network_output

logger = logging.getLogger(__name__)

# absorbs rounding in |p - 1/2| so p = 1/2 +- omega lands inside the band
OMEGA_TOLERANCE = 1e-12
AVG_SKILL_FEATURES = ("t1_avg_skill", "t2_avg_skill")


class ModelKind(str, Enum):
    DUMMY = "Dummy"
    AVG_SKILL = "AvgSkill"
    LINEAR = "Linear"
    RANDOM_FOREST = "RandomForest"
    MLP_REGRESSOR = "MlpRegressor"
    LOGISTIC = "Logistic"
    MLP_SOFTMAX = "MlpSoftmax"

    @property
    def is_classifier(self) -> bool:
        return self in (ModelKind.LOGISTIC, ModelKind.MLP_SOFTMAX)

    @classmethod
    def parse(cls, name: Union[str, "ModelKind"]) -> "ModelKind":
        if isinstance(name, cls):
            return name
        lookup = {k.value.lower(): k for k in cls}
        lookup.update({k.name.lower(): k for k in cls})
        try:
            return lookup[str(name).strip().lower()]
        except KeyError:
            raise ConfigError(f"unknown model kind {name!r}, expected one of {[k.value for k in cls]}") from None


@dataclass(frozen=True)
class BalanceThresholds:
    theta: float = 3.0
    omega: float = 0.3

    def __post_init__(self):
        if not self.theta > 0:
            raise ConfigError(f"theta must be positive, got {self.theta}")
        if not 0 < self.omega <= 0.5:
            raise ConfigError(f"omega must lie in (0, 0.5], got {self.omega}")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """Immutable fitted model; safe to share between threads."""

    kind: ModelKind
    arrays: Dict[str, np.ndarray]
    normalizer: Normalizer
    mask: np.ndarray
    schema_hash: str = ""
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    _affine: Optional[Tuple[np.ndarray, float]] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        for a in self.arrays.values():
            a.setflags(write=False)
        self.mask.setflags(write=False)
        object.__setattr__(self, "_affine", fold_affine(self))

    @property
    def input_dim(self) -> int:
        return int(self.mask.size)

    @property
    def n_features(self) -> int:
        return int(self.mask.sum())

    def predict_rows(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2:
            rows = np.atleast_2d(rows)
        if rows.shape[1] != self.input_dim:
            raise PredictionError(f"rows have {rows.shape[1]} coordinates, model expects {self.input_dim}")
        if self._affine is not None:
            w, b = self._affine
            out = rows @ w + b
            return expit(out) if self.kind is ModelKind.LOGISTIC else out
        Z = self.normalizer.apply(rows)[:, self.mask]
        return _raw_output(self, Z)


AFFINE_KINDS = (ModelKind.AVG_SKILL, ModelKind.LINEAR, ModelKind.LOGISTIC)


def fold_affine(model: TrainedModel) -> Optional[Tuple[np.ndarray, float]]:
    """(w, b) on raw rows with the z-score and the mask folded in, for the linear kinds.

    Equal to ``intercept + normalize(x)[mask] @ coef``; constant coordinates get weight 0.
    """
    if model.kind not in AFFINE_KINDS:
        return None
    std = model.normalizer.std[model.mask]
    mean = model.normalizer.mean[model.mask]
    live = std > 0
    scaled = np.where(live, model.arrays["coef"] / np.where(live, std, 1.0), 0.0)
    w = np.zeros(model.input_dim)
    w[model.mask] = scaled
    w.setflags(write=False)
    return w, float(model.arrays["intercept"][0]) - float(scaled @ np.where(live, mean, 0.0))


def _raw_output(model: TrainedModel, Z: np.ndarray) -> np.ndarray:
    a = model.arrays
    kind = model.kind
    if kind is ModelKind.DUMMY:
        return np.full(Z.shape[0], float(a["mean"][0]))
    if kind in (ModelKind.AVG_SKILL, ModelKind.LINEAR):
        return float(a["intercept"][0]) + Z @ a["coef"]
    if kind is ModelKind.LOGISTIC:
        return expit(float(a["intercept"][0]) + Z @ a["coef"])
    if kind is ModelKind.RANDOM_FOREST:
        return predict_forest(a, Z)
    head = Head.SOFTMAX if kind is ModelKind.MLP_SOFTMAX else Head.REGRESSION
    mean, scale = a["target"]
    return network_output(unpack_layers(a), head, Z, float(mean), float(scale))


def pack_layers(layers) -> Dict[str, np.ndarray]:
    out = {}
    for i, (W, b) in enumerate(layers):
        out[f"W{i}"] = W
        out[f"b{i}"] = b
    return out


def unpack_layers(arrays: Mapping[str, np.ndarray]):
    depth = sum(1 for k in arrays if k.startswith("W"))
    return [(arrays[f"W{i}"], arrays[f"b{i}"]) for i in range(depth)]


def _wrap(kind: ModelKind, arrays: Dict[str, np.ndarray], d: int, hyper: dict,
          normalizer: Optional[Normalizer], mask: Optional[np.ndarray], schema_hash: str,
          metadata: Optional[dict]) -> TrainedModel:
    if normalizer is None:
        normalizer = Normalizer(mean=np.zeros(d), std=np.ones(d))
    if mask is None:
        mask = np.ones(normalizer.dim, dtype=bool)
    if int(np.sum(mask)) != d:
        raise FitError(f"mask keeps {int(np.sum(mask))} coordinates, fitted on {d}")
    return TrainedModel(
        kind=kind,
        arrays={k: np.asarray(v).copy() for k, v in arrays.items()},
        normalizer=normalizer,
        mask=np.asarray(mask, dtype=bool).copy(),
        schema_hash=schema_hash,
        hyperparameters=dict(hyper),
        metadata=dict(metadata or {}),
    )


def fit_baseline(kind: Union[str, ModelKind], X: np.ndarray, y: np.ndarray, hyper: Optional[dict] = None,
                 *, normalizer: Optional[Normalizer] = None, mask: Optional[np.ndarray] = None,
                 schema_hash: str = "", metadata: Optional[dict] = None) -> TrainedModel:
    """Dummy, AvgSkill, Linear or Logistic on already-normalized inputs."""
    kind = ModelKind.parse(kind)
    hyper = dict(hyper or {})
    X, y = check_training_data(X, y)
    if kind is ModelKind.DUMMY:
        arrays = {"mean": np.array([y.mean()])}
    elif kind in (ModelKind.AVG_SKILL, ModelKind.LINEAR):
        hyper.setdefault("jitter", 1e-8)
        b, coef = least_squares(X, y, jitter=hyper["jitter"])
        arrays = {"intercept": np.array([b]), "coef": coef}
    elif kind is ModelKind.LOGISTIC:
        hyper.setdefault("l2", 1e-4)
        b, coef = logistic_regression(X, y, l2=hyper["l2"])
        arrays = {"intercept": np.array([b]), "coef": coef}
    else:
        raise ConfigError(f"{kind.value} is not a baseline kind")
    return _wrap(kind, arrays, X.shape[1], hyper, normalizer, mask, schema_hash, metadata)


def forest_params(hyper: Optional[Mapping[str, Any]] = None) -> ForestParams:
    allowed = {f.name for f in fields(ForestParams)}
    unknown = set(hyper or {}) - allowed
    if unknown:
        raise ConfigError(f"unknown forest hyperparameters {sorted(unknown)}")
    return ForestParams(**dict(hyper or {}))


def mlp_config(hyper: Optional[Mapping[str, Any]] = None) -> MlpConfig:
    allowed = {f.name for f in fields(MlpConfig)}
    unknown = set(hyper or {}) - allowed
    if unknown:
        raise ConfigError(f"unknown network hyperparameters {sorted(unknown)}")
    return MlpConfig(**dict(hyper or {}))


def fit_forest(X: np.ndarray, y: np.ndarray, hyper: Union[ForestParams, Mapping[str, Any], None] = None,
               *, normalizer: Optional[Normalizer] = None, mask: Optional[np.ndarray] = None,
               schema_hash: str = "", metadata: Optional[dict] = None) -> TrainedModel:
    params = hyper if isinstance(hyper, ForestParams) else forest_params(hyper)
    arrays = fit_forest_arrays(X, y, params)
    return _wrap(ModelKind.RANDOM_FOREST, arrays, np.asarray(X).shape[1], params.to_dict(),
                 normalizer, mask, schema_hash, metadata)


def fit_mlp(X: np.ndarray, y: np.ndarray, cfg: Union[MlpConfig, Mapping[str, Any], None] = None,
            head: Head = Head.REGRESSION, X_val: Optional[np.ndarray] = None, y_val: Optional[np.ndarray] = None,
            *, normalizer: Optional[Normalizer] = None, mask: Optional[np.ndarray] = None,
            schema_hash: str = "", metadata: Optional[dict] = None) -> TrainedModel:
    cfg = cfg if isinstance(cfg, MlpConfig) else mlp_config(cfg)
    head = Head(head)
    fit = fit_network(X, y, cfg, head, X_val, y_val)
    arrays = pack_layers(fit.layers)
    arrays["target"] = np.array([fit.target_mean, fit.target_scale])
    kind = ModelKind.MLP_SOFTMAX if head is Head.SOFTMAX else ModelKind.MLP_REGRESSOR
    meta = dict(metadata or {})
    meta["epochs"] = len(fit.history)
    return _wrap(kind, arrays, np.asarray(X).shape[1], cfg.to_dict(), normalizer, mask, schema_hash, meta)


def win_labels(score_diff: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(keep, labels): ties are dropped, label 1 means team 1 won."""
    diff = np.asarray(score_diff, dtype=float)
    keep = diff != 0
    return keep, (diff[keep] > 0).astype(float)


def model_mask(kind: ModelKind, schema: FeatureSchema, mask: Optional[np.ndarray]) -> np.ndarray:
    if kind is ModelKind.AVG_SKILL:
        out = np.zeros(schema.dim, dtype=bool)
        out[[schema.index(n) for n in AVG_SKILL_FEATURES]] = True
        return out
    if mask is None:
        return np.ones(schema.dim, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (schema.dim,):
        raise ConfigError(f"mask has {mask.shape[0]} entries, schema has {schema.dim}")
    if not mask.any():
        raise ConfigError("mask keeps no coordinates")
    return mask


def train_model(
    kind: Union[str, ModelKind],
    X: np.ndarray,
    score_diff: np.ndarray,
    schema: FeatureSchema,
    mask: Optional[np.ndarray] = None,
    hyper: Optional[Mapping[str, Any]] = None,
    X_val: Optional[np.ndarray] = None,
    diff_val: Optional[np.ndarray] = None,
    symmetrize_labels: bool = False,
    metadata: Optional[dict] = None,
) -> TrainedModel:
    """Normalize, mask and fit one model kind on raw feature rows.

    ``score_diff`` is always the signed score difference; classifier kinds
    turn it into win labels. Validation rows are used by network early
    stopping only.
    """
    kind = ModelKind.parse(kind)
    X = np.asarray(X, dtype=float)
    y = np.asarray(score_diff, dtype=float)
    if X.ndim != 2 or X.shape[1] != schema.dim:
        raise FitError(f"training matrix must have {schema.dim} columns")
    if symmetrize_labels:
        X, y = symmetrize(X, y, schema)
    if X.shape[0] < 2:
        raise FitError(f"{X.shape[0]} training rows are not enough to fit {kind.value}")

    normalizer = fit_normalizer(X, schema)
    mask = model_mask(kind, schema, mask)
    Z = normalizer.apply(X)[:, mask]
    Z_val = y_val = None
    if X_val is not None and diff_val is not None and len(X_val):
        Z_val, y_val = normalizer.apply(X_val)[:, mask], np.asarray(diff_val, dtype=float)

    if kind.is_classifier:
        keep, y = win_labels(y)
        Z = Z[keep]
        if Z_val is not None:
            keep_val, y_val = win_labels(y_val)
            Z_val = Z_val[keep_val]

    meta = {"n_train": int(Z.shape[0]), "symmetrized": bool(symmetrize_labels)}
    meta.update(metadata or {})
    wrap = dict(normalizer=normalizer, mask=mask, schema_hash=schema.hash, metadata=meta)
    hyper = dict(hyper or {})

    if kind is ModelKind.RANDOM_FOREST:
        model = fit_forest(Z, y, hyper, **wrap)
    elif kind is ModelKind.MLP_REGRESSOR:
        model = fit_mlp(Z, y, hyper, Head.REGRESSION, Z_val, y_val, **wrap)
    elif kind is ModelKind.MLP_SOFTMAX:
        model = fit_mlp(Z, y, hyper, Head.SOFTMAX, Z_val, y_val, **wrap)
    else:
        model = fit_baseline(kind, Z, y, hyper, **wrap)
    logger.debug("Trained %s on %d rows x %d features", kind.value, Z.shape[0], Z.shape[1])
    return model


def predict(model: TrainedModel, M: MatchFeatureVector) -> float:
    if model.schema_hash and M.schema.hash != model.schema_hash:
        raise PredictionError("feature schema of the match does not match the model's schema")
    return float(model.predict_rows(M.values[None, :])[0])


def classify_balance(r: float, theta: float) -> int:
    if not theta > 0:
        raise ParameterError(f"theta must be positive, got {theta}")
    return int(abs(r) < theta)


def classify_balance_from_prob(p: float, omega: float) -> int:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability {p} is outside [0, 1]")
    return int(abs(p - 0.5) <= omega + OMEGA_TOLERANCE)


def balance_labels(r: np.ndarray, theta: float) -> np.ndarray:
    """Vectorized classify_balance; also the ground-truth rule on score diffs."""
    if not theta > 0:
        raise ParameterError(f"theta must be positive, got {theta}")
    return (np.abs(np.asarray(r, dtype=float)) < theta).astype(int)


def balance_from_probs(p: np.ndarray, omega: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise DomainError("probabilities must lie in [0, 1]")
    return (np.abs(p - 0.5) <= omega + OMEGA_TOLERANCE).astype(int)


def decide(model: TrainedModel, outputs: np.ndarray, thresholds: BalanceThresholds,
           omega: Optional[float] = None) -> np.ndarray:
    """Balance decisions for raw model outputs; the one rule harness and matchmaker share."""
    if model.kind.is_classifier:
        return balance_from_probs(outputs, thresholds.omega if omega is None else omega)
    return balance_labels(outputs, thresholds.theta)
