# app/core/linear.py
"""Closed-form and Newton-fitted linear models."""
from __future__ import annotations

import logging
from typing import Tuple

import numpy as np
from scipy.linalg import qr
from scipy.sparse.linalg import lsmr
from scipy.special import expit

from app.core.errors import FitError

logger = logging.getLogger(__name__)

RIDGE_JITTER = 1e-8
MAX_GRAM_CONDITION = 1e12
RANK_TOLERANCE = 1e-10


def check_training_data(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise FitError("training set is empty")
    if y.shape != (X.shape[0],):
        raise FitError(f"target has shape {y.shape}, expected ({X.shape[0]},)")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise FitError("training data contains non-finite values")
    return X, y


def design(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def independent_subset(X: np.ndarray, tol: float = RANK_TOLERANCE) -> np.ndarray:
    """Columns a rank-revealing QR of the centered matrix keeps.

    The others are constant or exact linear combinations of kept columns and
    the intercept, like per-role match counts summing to the match count.
    """
    X = np.asarray(X, dtype=float)
    keep = np.zeros(X.shape[1], dtype=bool)
    if X.shape[1] == 0:
        return keep
    R, pivots = qr(X - X.mean(axis=0), mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return keep
    keep[pivots[:int(np.sum(diag > tol * diag[0]))]] = True
    return keep


def least_squares(X: np.ndarray, y: np.ndarray, jitter: float = RIDGE_JITTER) -> Tuple[float, np.ndarray]:
    """Intercept and coefficients from the jittered normal equations.

    Dependent columns get coefficient 0 and the solve runs on the rest. Falls
    back to LSMR when the remaining Gram matrix is still numerically singular.
    """
    X, y = check_training_data(X, y)
    keep = independent_subset(X)
    if not keep.all():
        logger.debug("Dropped %d dependent columns of %d", int((~keep).sum()), keep.size)
    A = design(X[:, keep])
    gram = A.T @ A + jitter * np.eye(A.shape[1])
    rhs = A.T @ y

    cond = np.linalg.cond(gram)
    if np.isfinite(cond) and cond < MAX_GRAM_CONDITION:
        beta = np.linalg.solve(gram, rhs)
    else:
        logger.warning("Gram matrix condition %.3g, switching to iterative least squares", cond)
        beta = lsmr(A, y, damp=np.sqrt(jitter), atol=1e-14, btol=1e-14, maxiter=10 * A.shape[1])[0]
    coef = np.zeros(X.shape[1])
    coef[keep] = beta[1:]
    return float(beta[0]), coef


def _logistic_objective(A: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float) -> float:
    z = A @ w
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w[1:], w[1:]))


def logistic_regression(
    X: np.ndarray,
    y: np.ndarray,
    l2: float = 1e-4,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> Tuple[float, np.ndarray]:
    """Damped Newton on the mean log-loss with a small L2 term on the slopes."""
    X, y = check_training_data(X, y)
    labels = np.unique(y)
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise FitError("logistic labels must be 0 or 1")
    if labels.size < 2:
        raise FitError("logistic regression needs both classes in the training labels")

    A = design(X)
    n, d = A.shape
    reg = np.full(d, l2)
    reg[0] = 0.0
    w = np.zeros(d)

    for it in range(max_iter):
        p = expit(A @ w)
        grad = A.T @ (p - y) / n + reg * w
        if np.linalg.norm(grad) < tol:
            logger.debug("Logistic fit converged after %d Newton steps", it)
            break
        hess = (A.T * (p * (1.0 - p))) @ A / n + np.diag(reg) + 1e-12 * np.eye(d)
        step = np.linalg.solve(hess, grad)

        f0 = _logistic_objective(A, y, w, l2)
        t = 1.0
        while _logistic_objective(A, y, w - t * step, l2) > f0 - 1e-4 * t * grad @ step and t > 1e-10:
            t *= 0.5
        w = w - t * step
    else:
        raise FitError(f"logistic regression did not reach gradient norm {tol:g} in {max_iter} steps")
    return float(w[0]), w[1:]
