# tests/test_mlp.py
import numpy as np
import pytest

from app.core.errors import ConfigError, DivergenceError, FitError
from app.core.mlp import Head, MlpConfig, fit_network, init_layers, loss_and_gradients, network_output


def _numeric_grads(layers, X, y, head, eps=1e-6):
    out = []
    for W, b in layers:
        grads = []
        for param in (W, b):
            g = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                old = param[idx]
                param[idx] = old + eps
                up, _ = loss_and_gradients(layers, X, y, head)
                param[idx] = old - eps
                down, _ = loss_and_gradients(layers, X, y, head)
                param[idx] = old
                g[idx] = (up - down) / (2 * eps)
            grads.append(g)
        out.append(tuple(grads))
    return out


@pytest.mark.parametrize("head", [Head.REGRESSION, Head.SOFTMAX])
def test_backprop_matches_finite_differences(head):
    rng = np.random.default_rng(0)
    layers = init_layers(4, (5, 3), head, rng, zero_head=False)
    X = rng.normal(size=(6, 4))
    y = rng.normal(size=6) if head is Head.REGRESSION else rng.integers(0, 2, size=6).astype(float)

    _, analytic = loss_and_gradients(layers, X, y, head)
    numeric = _numeric_grads(layers, X, y, head)
    for (gW, gb), (nW, nb) in zip(analytic, numeric):
        assert np.allclose(gW, nW, rtol=1e-4, atol=1e-6)
        assert np.allclose(gb, nb, rtol=1e-4, atol=1e-6)


def test_untrained_network_predicts_the_mean():
    layers = init_layers(3, (4,), Head.REGRESSION, np.random.default_rng(1))
    out = network_output(layers, Head.REGRESSION, np.ones((2, 3)), target_mean=1.5, target_scale=2.0)
    assert np.array_equal(out, [1.5, 1.5])


def test_softmax_head_outputs_probabilities():
    rng = np.random.default_rng(2)
    layers = init_layers(3, (4,), Head.SOFTMAX, rng, zero_head=False)
    p = network_output(layers, Head.SOFTMAX, rng.normal(size=(10, 3)))
    assert np.all((p > 0.0) & (p < 1.0))


def test_constant_target_fits_exactly():
    X = np.random.default_rng(3).normal(size=(50, 3))
    fit = fit_network(X, np.full(50, 4.0), MlpConfig(hidden=(8,), max_epochs=5), Head.REGRESSION)
    out = network_output(fit.layers, Head.REGRESSION, X, fit.target_mean, fit.target_scale)
    assert np.allclose(out, 4.0)


def test_network_learns_a_linear_target():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(600, 2))
    y = 3.0 * X[:, 0] - X[:, 1]
    cfg = MlpConfig(hidden=(16,), learning_rate=1e-2, batch_size=32, max_epochs=150, patience=10, seed=1)
    fit = fit_network(X, y, cfg, Head.REGRESSION)
    pred = network_output(fit.layers, Head.REGRESSION, X, fit.target_mean, fit.target_scale)
    assert 1.0 - np.mean((pred - y) ** 2) / np.var(y) > 0.8
    assert len(fit.history) >= 1


def test_training_is_seeded():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(100, 3)), rng.normal(size=100)
    cfg = MlpConfig(hidden=(4,), max_epochs=3, seed=7)
    a = fit_network(X, y, cfg, Head.REGRESSION)
    b = fit_network(X, y, cfg, Head.REGRESSION)
    for (Wa, ba), (Wb, bb) in zip(a.layers, b.layers):
        assert np.array_equal(Wa, Wb) and np.array_equal(ba, bb)


def test_huge_learning_rate_diverges():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(200, 3)), rng.normal(size=200)
    cfg = MlpConfig(hidden=(4,), learning_rate=1e6, batch_size=8, max_epochs=50)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError):
        fit_network(X, y, cfg, Head.REGRESSION)


def test_config_and_label_checks():
    with pytest.raises(ConfigError):
        MlpConfig(hidden=())
    with pytest.raises(ConfigError):
        MlpConfig(activation="tanh")
    with pytest.raises(ConfigError):
        MlpConfig(momentum=1.0)
    with pytest.raises(FitError):
        fit_network(np.zeros((4, 2)), np.array([0.0, 1.0, 2.0, 1.0]), MlpConfig(), Head.SOFTMAX)
