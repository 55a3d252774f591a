# tests/test_linear.py
import logging

import numpy as np
import pytest

from app.core.errors import FitError
from app.core.features import feature_matrix, fit_normalizer
from app.core.linear import design, independent_subset, least_squares, logistic_regression


def _data(n=200, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 3)), rng


def test_least_squares_recovers_exact_plane():
    X, _ = _data()
    y = 5.0 + X @ np.array([2.0, -3.0, 0.5])
    b, coef = least_squares(X, y)
    assert b == pytest.approx(5.0, abs=1e-6)
    assert np.allclose(coef, [2.0, -3.0, 0.5], atol=1e-6)


def test_residual_is_orthogonal_to_design():
    X, rng = _data()
    y = X @ np.array([1.0, 0.0, -1.0]) + rng.normal(size=X.shape[0])
    b, coef = least_squares(X, y)
    A = design(X)
    resid = y - A @ np.concatenate([[b], coef])
    assert np.allclose(A.T @ resid, 0.0, atol=1e-5)


def test_duplicate_column_still_fits():
    X, _ = _data()
    X = np.hstack([X, X[:, :1]])
    y = 1.0 + 2.0 * X[:, 0]
    b, coef = least_squares(X, y)
    assert np.allclose(b + X @ coef, y, atol=1e-4)
    assert coef[0] + coef[3] == pytest.approx(2.0, abs=1e-4)


def test_summed_columns_keep_the_direct_solve(caplog):
    rng = np.random.default_rng(6)
    roles = rng.poisson(3.0, size=(400, 3)).astype(float)
    X = np.hstack([roles, roles.sum(axis=1, keepdims=True), rng.normal(size=(400, 2))])
    y = 0.5 + X[:, :3] @ np.array([1.0, -1.0, 0.5]) + X[:, 4] + rng.normal(scale=0.1, size=400)
    assert list(independent_subset(X)).count(False) == 1

    with caplog.at_level(logging.WARNING, logger="app.core.linear"):
        b, coef = least_squares(X, y)
    assert not caplog.records
    reference = np.linalg.lstsq(design(X), y, rcond=None)[0]
    assert np.allclose(b + X @ coef, design(X) @ reference, atol=1e-8)


def test_match_features_carry_dependent_columns(feature_frame, schema):
    X = feature_matrix(feature_frame, schema)
    Z = fit_normalizer(X, schema).apply(X)
    keep = independent_subset(Z)
    assert not keep.all()
    # a team's role counts add up to its match count
    block = [schema.index(f"t1_mean_num_role_{r}") for r in schema.roles] + [schema.index("t1_mean_num_matches")]
    assert not keep[block].all()


def test_least_squares_rejects_bad_input():
    X, _ = _data(n=10)
    with pytest.raises(FitError):
        least_squares(X, np.ones(9))
    y = np.ones(10)
    y[3] = np.nan
    with pytest.raises(FitError):
        least_squares(X, y)
    with pytest.raises(FitError):
        least_squares(np.zeros((0, 3)), np.zeros(0))


def test_logistic_recovers_direction():
    X, rng = _data(n=3000, seed=1)
    w = np.array([1.5, -1.0, 0.0])
    y = (rng.random(X.shape[0]) < 1.0 / (1.0 + np.exp(-(0.3 + X @ w)))).astype(float)
    b, coef = logistic_regression(X, y)
    assert coef[0] > 1.0 and coef[1] < -0.6
    assert abs(coef[2]) < 0.25
    assert b == pytest.approx(0.3, abs=0.2)


def test_logistic_needs_two_classes():
    X, _ = _data(n=20)
    with pytest.raises(FitError):
        logistic_regression(X, np.ones(20))
    with pytest.raises(FitError):
        logistic_regression(X, np.full(20, 2.0))
