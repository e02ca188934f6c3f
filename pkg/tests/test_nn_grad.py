"""Analytic-vs-numeric gradient verification for every layer kind."""

import numpy as np
import pytest

from exogait.nn import Sequential, finite_difference_check, fem_specs, cpm_specs

TOL = 1e-4
EPS = 1e-5


def check(specs, input_shape, batch=4, m_models=1, seed=0, max_entries=None):
    rng = np.random.default_rng(seed)
    model = Sequential(specs, input_shape, m_models, rng=rng)
    x = rng.standard_normal((batch,) + model.input_shape)
    out = model.forward(x)
    y = rng.standard_normal(out.shape)
    err, name = finite_difference_check(model, x, y, eps=EPS, rng_seed=seed,
                                        max_entries=max_entries)
    assert err < TOL, f"gradient mismatch {err:.2e} at {name}"


def test_dense_linear():
    check([{"kind": "dense", "units": 3, "activation": "linear"}], (5,))


def test_dense_tanh():
    check([{"kind": "dense", "units": 4, "activation": "tanh"}], (6,))


def test_dense_l2_penalty():
    check([{"kind": "dense", "units": 3, "activation": "tanh", "l2": 0.01}], (4,))


def test_dense_dropout_seeded():
    check([{"kind": "dense", "units": 8, "activation": "tanh", "dropout": 0.3},
           {"kind": "dense", "units": 2, "activation": "linear"}], (5,), batch=6)


def test_gaussian_noise_seeded():
    check([{"kind": "gaussian_noise", "std": 0.05},
           {"kind": "dense", "units": 3, "activation": "tanh"}], (4,))


def test_bidirectional_recurrent():
    check([{"kind": "bidir_recurrent", "units": 4},
           {"kind": "flatten"},
           {"kind": "dense", "units": 2, "activation": "linear"}], (6, 3))


def test_two_recurrent_layers():
    check([{"kind": "bidir_recurrent", "units": 3},
           {"kind": "bidir_recurrent", "units": 3},
           {"kind": "flatten"},
           {"kind": "dense", "units": 1, "activation": "tanh"}], (5, 2))


def test_full_fem_reduced():
    check(fem_specs(hidden=4, dense=6, noise_std=0.01), (8, 4), batch=3,
          max_entries=40)


def test_full_cpm_reduced():
    check(cpm_specs(dense=(8, 6, 4), dropout=0.1, l2=1e-4, noise_std=0.01),
          (12,), batch=5, max_entries=40)


def test_stacked_models_gradients():
    check([{"kind": "bidir_recurrent", "units": 3},
           {"kind": "flatten"},
           {"kind": "dense", "units": 1, "activation": "tanh"}],
          (4, 2), batch=3, m_models=3)


def test_zero_everything_zero_gradient():
    model = Sequential([{"kind": "dense", "units": 2, "activation": "linear"}], (3,))
    for _, p in model.parameters():
        p[...] = 0.0
    x = np.zeros((4, 3))
    y = np.zeros((4, 2))
    _, grads = model.loss_and_grads(x, y)
    for g in grads:
        np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_l2_gradient_at_zero_data_loss():
    # with output matching target exactly, dW = 2*lambda*W
    lam = 0.05
    model = Sequential([{"kind": "dense", "units": 2, "activation": "linear",
                         "l2": lam}], (2,))
    w = model.layers[0].params["W"]
    w[...] = np.array([[[0.5, -0.25], [1.0, 2.0]]])
    model.layers[0].params["b"][...] = 0.0
    x = np.array([[1.0, 2.0]])
    y = x @ w[0]
    _, grads = model.loss_and_grads(x, y[None] if y.ndim == 2 else y)
    np.testing.assert_allclose(grads[0], 2 * lam * w, atol=1e-12)
