# tests/test_predictors.py
import numpy as np
import pytest

from app.core.errors import ConfigError, DomainError, FitError, ParameterError, PredictionError
from app.core.features import FeatureSchema, MatchFeatureVector, swap_teams
from app.core.predictors import (
    BalanceThresholds,
    ModelKind,
    balance_from_probs,
    balance_labels,
    classify_balance,
    classify_balance_from_prob,
    decide,
    predict,
    train_model,
    win_labels,
)
from app.core.serialization import deserialize, serialize


def _linear_target(X, schema):
    col = schema.index
    return 2.0 * X[:, col("avg_skill_diff")] - 0.5 * X[:, col("diff_freq_wins")] + 1.0


def test_theta_rule_is_strict():
    assert classify_balance(2.999, 3.0) == 1
    assert classify_balance(3.0, 3.0) == 0
    assert classify_balance(-3.0, 3.0) == 0
    assert classify_balance(-2.5, 3.0) == 1
    with pytest.raises(ParameterError):
        classify_balance(1.0, 0.0)
    assert list(balance_labels(np.array([0, 2, 3, -4, -1]), 3.0)) == [1, 1, 0, 0, 1]


def test_omega_band_is_inclusive():
    assert classify_balance_from_prob(0.8, 0.3) == 1
    assert classify_balance_from_prob(0.2, 0.3) == 1
    assert classify_balance_from_prob(0.81, 0.3) == 0
    assert classify_balance_from_prob(0.5, 0.05) == 1
    with pytest.raises(DomainError):
        classify_balance_from_prob(1.2, 0.3)
    with pytest.raises(DomainError):
        balance_from_probs(np.array([0.5, -0.1]), 0.3)


@pytest.mark.parametrize("omega", [0.1, 0.2, 0.25, 0.3, 0.45])
def test_omega_band_edges(omega):
    inside = [0.5 - omega, 0.5 + omega]
    outside = [0.5 - omega - 1e-9, 0.5 + omega + 1e-9]
    assert [classify_balance_from_prob(p, omega) for p in inside] == [1, 1]
    assert [classify_balance_from_prob(p, omega) for p in outside] == [0, 0]
    assert list(balance_from_probs(np.array(inside + outside), omega)) == [1, 1, 0, 0]
    # only rounding-level overshoot of the edge stays inside
    assert classify_balance_from_prob(0.5 + omega + 1e-13, omega) == 1


def test_thresholds_and_kinds_validate():
    with pytest.raises(ConfigError):
        BalanceThresholds(theta=0.0)
    with pytest.raises(ConfigError):
        BalanceThresholds(omega=0.6)
    assert ModelKind.parse("linear") is ModelKind.LINEAR
    assert ModelKind.parse("MLP_SOFTMAX") is ModelKind.MLP_SOFTMAX
    assert ModelKind.LOGISTIC.is_classifier and not ModelKind.RANDOM_FOREST.is_classifier
    with pytest.raises(ConfigError):
        ModelKind.parse("Bogus")


def test_win_labels_drop_ties():
    keep, labels = win_labels(np.array([2.0, 0.0, -1.0]))
    assert list(keep) == [True, False, True]
    assert list(labels) == [1.0, 0.0]


def test_dummy_predicts_training_mean(random_rows, schema):
    diff = np.arange(random_rows.shape[0], dtype=float) % 5 - 1.0
    model = train_model(ModelKind.DUMMY, random_rows, diff, schema)
    assert np.allclose(model.predict_rows(random_rows[:7]), diff.mean())


def test_linear_recovers_affine_target(random_rows, schema):
    diff = _linear_target(random_rows, schema)
    model = train_model("Linear", random_rows, diff, schema)
    fresh = np.random.default_rng(9).normal(size=(20, schema.dim))
    assert np.allclose(model.predict_rows(fresh), _linear_target(fresh, schema), atol=1e-6)


def test_avg_skill_uses_two_features(random_rows, schema):
    model = train_model(ModelKind.AVG_SKILL, random_rows, _linear_target(random_rows, schema), schema)
    assert model.n_features == 2
    assert model.input_dim == schema.dim


def test_mask_restricts_inputs(random_rows, schema):
    mask = np.zeros(schema.dim, dtype=bool)
    mask[[schema.index("avg_skill_diff"), schema.index("diff_freq_wins")]] = True
    model = train_model(ModelKind.LINEAR, random_rows, _linear_target(random_rows, schema), schema, mask=mask)
    assert model.n_features == 2
    with pytest.raises(ConfigError):
        train_model(ModelKind.LINEAR, random_rows, np.zeros(len(random_rows)), schema,
                    mask=np.zeros(schema.dim, dtype=bool))


def test_symmetrized_linear_is_antisymmetric(random_rows, schema):
    rng = np.random.default_rng(3)
    diff = _linear_target(random_rows, schema) + rng.normal(size=random_rows.shape[0])
    model = train_model(ModelKind.LINEAR, random_rows, diff, schema, symmetrize_labels=True)
    rows = random_rows[:10]
    assert np.allclose(model.predict_rows(swap_teams(rows, schema)), -model.predict_rows(rows), atol=1e-6)
    assert model.metadata["symmetrized"] is True


def test_classifiers_output_probabilities(schema):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(1000, schema.dim))
    team1_wins = rng.random(1000) < 1.0 / (1.0 + np.exp(-0.5 * _linear_target(X, schema)))
    diff = np.where(team1_wins, 1.0, -1.0) * rng.integers(0, 4, size=1000)
    logistic = train_model(ModelKind.LOGISTIC, X, diff, schema)
    p = logistic.predict_rows(X)
    assert np.all((p >= 0.0) & (p <= 1.0))
    assert logistic.metadata["n_train"] == int(np.sum(diff != 0))

    decisions = decide(logistic, p, BalanceThresholds(omega=0.5))
    assert decisions.sum() == len(p)


def test_forest_and_networks_train(random_rows, schema):
    diff = _linear_target(random_rows, schema)
    forest = train_model(ModelKind.RANDOM_FOREST, random_rows, diff, schema, hyper={"n_trees": 5, "max_depth": 3})
    assert forest.predict_rows(random_rows[:3]).shape == (3,)
    assert forest.hyperparameters["n_trees"] == 5

    net = train_model(ModelKind.MLP_REGRESSOR, random_rows, diff, schema, hyper={"max_epochs": 3, "hidden": [8]})
    assert net.metadata["epochs"] <= 3
    softmax = train_model(ModelKind.MLP_SOFTMAX, random_rows, diff, schema, hyper={"max_epochs": 3})
    assert np.all((softmax.predict_rows(random_rows) >= 0.0) & (softmax.predict_rows(random_rows) <= 1.0))

    with pytest.raises(ConfigError):
        train_model(ModelKind.RANDOM_FOREST, random_rows, diff, schema, hyper={"trees": 5})


def test_training_input_checks(random_rows, schema):
    with pytest.raises(FitError):
        train_model(ModelKind.LINEAR, random_rows[:, :10], np.zeros(len(random_rows)), schema)
    with pytest.raises(FitError):
        train_model(ModelKind.LINEAR, random_rows[:1], np.zeros(1), schema)


def test_predict_checks_schema_and_dimension(random_rows, schema):
    model = train_model(ModelKind.DUMMY, random_rows, np.zeros(len(random_rows)), schema)
    assert predict(model, MatchFeatureVector(values=random_rows[0], schema=schema)) == 0.0

    other = FeatureSchema(roles=schema.roles, actions=("goal",))
    with pytest.raises(PredictionError):
        predict(model, MatchFeatureVector(values=np.zeros(other.dim), schema=other))
    with pytest.raises(PredictionError):
        model.predict_rows(np.zeros((1, 5)))


def test_trained_model_is_read_only(random_rows, schema):
    model = train_model(ModelKind.LINEAR, random_rows, _linear_target(random_rows, schema), schema)
    with pytest.raises(ValueError):
        model.arrays["coef"][0] = 1.0


@pytest.mark.parametrize("kind", [ModelKind.LINEAR, ModelKind.AVG_SKILL, ModelKind.LOGISTIC])
def test_linear_kinds_predict_on_raw_rows(random_rows, schema, kind):
    rows = random_rows.copy()
    rows[:, schema.index("t1_humans")] = 2.0
    mask = np.ones(schema.dim, dtype=bool)
    mask[schema.index("diff_freq_wins")] = False
    diff = np.round(_linear_target(rows, schema) + np.random.default_rng(8).normal(size=len(rows)))
    model = train_model(kind, rows, diff, schema, mask=mask)

    fresh = np.random.default_rng(9).normal(size=(50, schema.dim))
    Z = model.normalizer.apply(fresh)[:, model.mask]
    expected = model.arrays["intercept"][0] + Z @ model.arrays["coef"]
    if kind is ModelKind.LOGISTIC:
        expected = 1.0 / (1.0 + np.exp(-expected))
    assert np.allclose(model.predict_rows(fresh), expected, rtol=1e-9, atol=1e-9)
    assert model.predict_rows(fresh[0]).shape == (1,)

    loaded = deserialize(serialize(model))
    assert np.array_equal(loaded.predict_rows(fresh), model.predict_rows(fresh))


def test_constant_and_masked_columns_do_not_move_linear_output(random_rows, schema):
    rows = random_rows.copy()
    bots = schema.index("t1_humans")
    rows[:, bots] = 2.0
    mask = np.ones(schema.dim, dtype=bool)
    dropped = schema.index("diff_freq_wins")
    mask[dropped] = False
    model = train_model(ModelKind.LINEAR, rows, _linear_target(rows, schema), schema, mask=mask)

    shifted = rows[:5].copy()
    shifted[:, bots] += 7.0
    shifted[:, dropped] -= 3.0
    assert np.allclose(model.predict_rows(shifted), model.predict_rows(rows[:5]))
