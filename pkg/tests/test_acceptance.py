# tests/test_acceptance.py
"""End-to-end checks on full-size seeded seasons.

The module-scoped season fixtures below are expensive; everything that needs
them carries the ``slow`` marker and runs with ``pytest -m slow``.
"""
import numpy as np
import pytest
import yaml
from typer.testing import CliRunner

from app.cli import app as cli_app
from app.config import RunConfig
from app.core.analysis import (
    correlation_prune,
    independent_columns,
    linear_importance,
    rfe,
    significance_report,
    symmetric_view,
)
from app.core.features import FeatureSchema, ProfileStore, feature_matrix, featurize_log
from app.core.harness import ModelSpec, benchmark, evaluate
from app.core.linear import least_squares
from app.core.matchmaker import MatchQueue, QueueEntry, propose, quality_gate, simulate_session
from app.core.pipeline import best_subset_mask, run_evaluation
from app.core.predictors import BalanceThresholds, ModelKind, train_model
from app.core.seeding import derive_rng
from app.core.serialization import deserialize, serialize
from app.core.simworld import MatchSimulator, PopulationConfig, generate_population, run_season

slow = pytest.mark.slow


def _solve_extended(G, b):
    """Gaussian elimination with partial pivoting in long double."""
    G = np.array(G, dtype=np.longdouble)
    b = np.array(b, dtype=np.longdouble)
    n = b.size
    for i in range(n):
        p = i + int(np.argmax(np.abs(G[i:, i])))
        G[[i, p]], b[[i, p]] = G[[p, i]], b[[p, i]]
        for j in range(i + 1, n):
            f = G[j, i] / G[i, i]
            G[j, i:] -= f * G[i, i:]
            b[j] -= f * b[i]
    x = np.zeros(n, dtype=np.longdouble)
    for i in reversed(range(n)):
        x[i] = (b[i] - G[i, i + 1:] @ x[i + 1:]) / G[i, i]
    return x


def test_least_squares_matches_extended_precision_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        X = rng.normal(size=(50, 5))
        y = X @ rng.normal(size=5) + rng.normal() + 0.5 * rng.normal(size=50)
        A = np.hstack([np.ones((50, 1)), X]).astype(np.longdouble)
        oracle = _solve_extended(A.T @ A, A.T @ y.astype(np.longdouble)).astype(float)
        b, coef = least_squares(X, y)
        got = np.concatenate([[b], coef])
        assert np.linalg.norm(got - oracle) <= 1e-6 * np.linalg.norm(oracle)


def test_gate_acceptance_is_monotone_in_theta(population, season, schema, feature_frame):
    store = ProfileStore(schema.roles, schema.actions)
    for record in season:
        store.apply(record)
    X = feature_matrix(feature_frame, schema)
    model = train_model(ModelKind.LINEAR, X, feature_frame["score_diff"].to_numpy(dtype=float), schema)

    rng = np.random.default_rng(9)
    proposals = []
    for _ in range(60):
        q = MatchQueue()
        for p in rng.choice(len(population), size=12, replace=False):
            q.push(QueueEntry(int(p), float(population.rating[p]), 0.0))
        proposals.append(propose(q, rng, store, schema))

    counts = [sum(quality_gate(model, p, theta).accept for p in proposals) for theta in (0.25, 0.5, 1.0, 2.0, 3.0, 5.0)]
    assert counts == sorted(counts)
    assert counts[-1] > counts[0]


def _run_pipeline(out):
    runner = CliRunner()
    out.mkdir(parents=True, exist_ok=True)
    config = out / "config.yaml"
    config.write_text(yaml.safe_dump({
        "seed": 21, "num_players": 60, "days": 6, "matches_per_day": 30, "k_days": 5, "out": str(out),
        "forest": {"n_trees": 5, "max_depth": 3},
    }))
    for step in (
        ["simulate"],
        ["featurize"],
        ["select-features", "--keep-k", "5"],
        ["train", "--models", "Dummy,Linear,RandomForest"],
        ["evaluate", "--models", "Dummy,Linear,RandomForest"],
    ):
        result = runner.invoke(cli_app, step + ["--config", str(config)])
        assert result.exit_code == 0, f"{step[0]} failed: {result.output}"


def test_cli_pipeline_is_byte_identical_across_runs(tmp_path):
    _run_pipeline(tmp_path / "a")
    _run_pipeline(tmp_path / "b")
    for name in ("matchlog.jsonl", "features.csv", "best_subset.json", "eval_report.csv",
                 "models/Dummy.cbmf", "models/Linear.cbmf", "models/RandomForest.cbmf"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


# full-size seeded season


@pytest.fixture(scope="module")
def default_world():
    cfg = PopulationConfig()
    population = generate_population(cfg)
    records = list(run_season(cfg, population))
    schema = FeatureSchema(roles=cfg.roles, actions=cfg.actions)
    return population, records, schema, featurize_log(records, schema)


@pytest.fixture(scope="module")
def default_report(default_world):
    _, _, schema, frame = default_world
    cfg = RunConfig(
        models=["Dummy", "AvgSkill", "Linear", "Linear+", "Logistic", "MlpRegressor", "MlpRegressor+", "MlpSoftmax"],
        max_windows=10,
    )
    return run_evaluation(frame, schema, cfg)


@slow
def test_default_season_size(default_world):
    _, records, _, frame = default_world
    assert len(records) >= 20_000
    assert frame["day_index"].nunique() == 90


@slow
def test_regression_beats_classification(default_report):
    f1 = {label: s.f1_mean for label, s in default_report.scores.items()}
    assert f1["Linear"] >= f1["Logistic"]
    assert f1["MlpRegressor"] >= f1["MlpSoftmax"]


@slow
def test_model_ordering(default_report):
    f1 = {label: s.f1_mean for label, s in default_report.scores.items()}
    assert f1["Linear+"] >= f1["AvgSkill"] + 0.05
    assert f1["MlpRegressor+"] >= f1["Linear+"]


@slow
def test_dummy_scores_zero_when_its_mean_is_unbalanced(default_world):
    _, _, schema, frame = default_world
    diff = frame["score_diff"].to_numpy(dtype=float)
    days = frame["day_index"].to_numpy()
    # test days 85..89 train on days before test - 2
    smallest = min(abs(diff[days < t - 2].mean()) for t in range(85, 90))
    if smallest == 0.0:
        pytest.skip("training mean is exactly balanced")
    # theta below every window's constant prediction: everything is called unbalanced
    report = evaluate(frame, schema, [ModelSpec.of("Dummy")], BalanceThresholds(theta=smallest / 2.0),
                      K=25, max_windows=5)
    dummy = report.scores["Dummy"]
    assert dummy.confusion.tp == 0 and dummy.confusion.fp == 0
    assert dummy.f1_mean == 0.0


@slow
def test_significance_finds_the_planted_dropout_effect(default_world):
    _, _, schema, frame = default_world
    X = feature_matrix(frame, schema)
    diff = frame["score_diff"].to_numpy(dtype=float)
    table = significance_report(X, diff, schema).set_index("feature")
    assert table.loc["avg_freq_dropout", "coefficient"] > 0
    assert table.loc["avg_freq_dropout", "p_value"] < 1e-3

    view, names = symmetric_view(X, schema)
    pruned = correlation_prune(view, names)
    kept = view[:, pruned.keep]
    independent = independent_columns(kept)
    kept_names = [n for n, i in zip(pruned.kept, independent) if i]
    result = rfe(linear_importance, kept[:, independent], np.abs(diff), keep_k=10, names=kept_names)
    assert "avg_freq_dropout" in result.mask.kept


@slow
def test_forest_round_trip_on_a_thousand_inputs(default_world):
    _, _, schema, frame = default_world
    X = feature_matrix(frame, schema)[:4000]
    diff = frame["score_diff"].to_numpy(dtype=float)[:4000]
    model = train_model(ModelKind.RANDOM_FOREST, X, diff, schema, hyper={"n_trees": 100, "max_depth": 6})
    inputs = np.random.default_rng(0).normal(size=(1000, schema.dim)) * X.std(axis=0) + X.mean(axis=0)
    loaded = deserialize(serialize(model))
    assert np.array_equal(loaded.predict_rows(inputs), model.predict_rows(inputs))


@slow
def test_linear_is_faster_than_the_network(default_world):
    _, _, schema, frame = default_world
    X = feature_matrix(frame, schema)
    diff = frame["score_diff"].to_numpy(dtype=float)
    train = frame["day_index"].to_numpy() < 30
    specs = [ModelSpec.of("Dummy"), ModelSpec.of("Linear"), ModelSpec.of("MlpRegressor", hyper={"seed": 1})]
    timing = benchmark(specs, X[train], diff[train], schema, X[~train][:500], repetitions=200, warmup=20)
    linear, mlp = timing.row("Linear"), timing.row("MlpRegressor")
    assert mlp.infer_median >= 10 * linear.infer_median
    assert mlp.train_seconds >= 5 * linear.train_seconds


def _trained_store(records, schema):
    store = ProfileStore(schema.roles, schema.actions)
    for record in records:
        store.apply(record)
    return store


@slow
def test_model_gate_separates_proposal_outcomes(default_world):
    population, records, schema, frame = default_world
    store = _trained_store(records, schema)
    X = feature_matrix(frame, schema)
    model = train_model(ModelKind.LINEAR, X, frame["score_diff"].to_numpy(dtype=float), schema)

    simulator = MatchSimulator(population)
    rng, outcomes = derive_rng(31, "proposals"), derive_rng(31, "outcomes")
    accepted, rejected = [], []
    for i in range(2000):
        q = MatchQueue()
        for p in rng.choice(len(population), size=12, replace=False):
            q.push(QueueEntry(int(p), float(population.rating[p]), 0.0))
        proposal = propose(q, rng, store, schema)
        teams = [[e.player_id for e in team] for team in proposal.rosters]
        record = simulator.simulate_match(teams[0], teams[1], proposal.roles, outcomes, match_id=i, day_index=90)
        (accepted if quality_gate(model, proposal, theta=3.0).accept else rejected).append(abs(record.score_diff))
    assert accepted and rejected
    assert np.mean(accepted) < np.mean(rejected)


@slow
def test_gated_matchmaking_lowers_score_gaps(default_world):
    population, records, schema, frame = default_world
    cfg = RunConfig()
    mask = best_subset_mask(frame, schema, cfg)
    model = train_model(ModelKind.LINEAR, feature_matrix(frame, schema), frame["score_diff"].to_numpy(dtype=float),
                        schema, mask=mask.keep)
    store = _trained_store(records, schema)

    gated = simulate_session(population, model, store, schema, n_matches=10_000, seed=cfg.seed)
    free = simulate_session(population, model, store, schema, n_matches=10_000, seed=cfg.seed, gated=False)
    assert gated.mean_abs_diff <= 0.9 * free.mean_abs_diff
