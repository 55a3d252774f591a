# tests/test_pipeline.py
import numpy as np
import pytest

from app.config import RunConfig
from app.core.analysis import FeatureMask
from app.core.errors import ConfigError
from app.core.pipeline import build_specs, hyper_for
from app.core.predictors import ModelKind
from app.core.seeding import derive_seed


def test_seeded_kinds_get_distinct_streams():
    cfg = RunConfig(seed=11)
    regressor = hyper_for(ModelKind.MLP_REGRESSOR, cfg)["seed"]
    softmax = hyper_for(ModelKind.MLP_SOFTMAX, cfg)["seed"]
    forest = hyper_for(ModelKind.RANDOM_FOREST, cfg, n_jobs=3)
    assert regressor != softmax
    assert len({regressor, softmax, forest["seed"], cfg.seed}) == 4
    assert regressor == derive_seed(11, "MlpRegressor")
    assert forest["n_jobs"] == 3
    assert hyper_for(ModelKind.LINEAR, cfg) == {}
    # same run seed, same model seeds
    assert hyper_for(ModelKind.MLP_SOFTMAX, RunConfig(seed=11))["seed"] == softmax


def test_config_hyperparameters_are_kept():
    cfg = RunConfig(mlp={"hidden": [8], "max_epochs": 3}, forest={"n_trees": 4})
    assert hyper_for(ModelKind.MLP_REGRESSOR, cfg)["hidden"] == [8]
    assert hyper_for(ModelKind.RANDOM_FOREST, cfg)["n_trees"] == 4


def test_plus_variants_use_the_mask(schema):
    keep = np.zeros(schema.dim, dtype=bool)
    keep[:4] = True
    mask = FeatureMask(keep=keep, names=schema.names)
    specs = build_specs(["Dummy", "Linear+"], RunConfig(), mask)
    assert [s.label for s in specs] == ["Dummy", "Linear+"]
    assert specs[1].kind is ModelKind.LINEAR and specs[1].mask.sum() == 4
    with pytest.raises(ConfigError):
        build_specs(["Linear+"], RunConfig())
