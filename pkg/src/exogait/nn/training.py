"""Adam optimization and the mini-batch training loop.

The loop trains a whole model stack at once; early stopping and
best-weight restoration are tracked per model so the result is identical
to training each network independently with the same batch order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import TrainConfig
from ..kinematics import InvalidInputError
from .layers import Sequential


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update with bias correction."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidInputError("parameter/gradient/state length mismatch")
    state.step += 1
    t = state.step
    b1c = 1.0 - beta1 ** t
    b2c = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise InvalidInputError("gradient shape mismatch")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps)
    return params


def train_model(model: Sequential, x_train, y_train, x_val, y_val,
                cfg: TrainConfig, verbose=False):
    """Fit the stack with shuffled batches, Adam and per-model early stop.

    ``y_*`` may be (B, out) shared across the stack or (M, B, out).
    Stops when every model in the stack has gone ``early_stop_patience``
    epochs without improving its validation MSE; each model's
    best-validation weights are restored before returning.

    Returns a history dict with per-epoch train/val losses of shape
    (epochs, M) and the best epoch index per model.
    """
    x_train = np.asarray(x_train, dtype=float)
    x_val = np.asarray(x_val, dtype=float)
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise InvalidInputError("training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.rng_seed)
    n = x_train.shape[0]
    m = model.m_models
    y_train = np.asarray(y_train, dtype=float)
    y_val = np.asarray(y_val, dtype=float)
    per_model_targets = y_train.ndim == 3

    params = [p for _, p in model.parameters()]
    opt = AdamState.for_params(params)

    best_val = np.full(m, np.inf)
    best_epoch = np.zeros(m, dtype=int)
    since_best = np.zeros(m, dtype=int)
    best_weights = [model.snapshot(i) for i in range(m)]
    hist_train, hist_val = [], []

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = np.zeros(m)
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x_train[idx]
            yb = y_train[:, idx] if per_model_targets else y_train[idx]
            loss, grads = model.loss_and_grads(xb, yb, rng=rng)
            adam_step(params, grads, opt, cfg.lr)
            epoch_loss += loss
            n_batches += 1
        hist_train.append(epoch_loss / n_batches)

        val = model.mse(x_val, y_val if not per_model_targets else y_val)
        hist_val.append(val)
        improved = val < best_val - 1e-12
        for i in np.flatnonzero(improved):
            best_val[i] = val[i]
            best_epoch[i] = epoch
            since_best[i] = 0
            best_weights[i] = model.snapshot(i)
        since_best[~improved] += 1
        if verbose:
            print(f"epoch {epoch}: val mse {np.array2string(val, precision=5)}")
        if np.all(since_best > cfg.early_stop_patience):
            break

    for i in range(m):
        model.load_model_slice(i, best_weights[i])
    return {
        "train_loss": np.asarray(hist_train),
        "val_loss": np.asarray(hist_val),
        "best_epoch": best_epoch,
        "best_val": best_val,
        "epochs_run": len(hist_train),
    }


# ---------------------------------------------------------------------------
# architecture builders

def fem_specs(hidden=32, dense=64, noise_std=0.01):
    """Window regressor: noise -> 2x bidirectional LSTM -> dense head."""
    return [
        {"kind": "gaussian_noise", "std": noise_std},
        {"kind": "bidir_recurrent", "units": hidden},
        {"kind": "bidir_recurrent", "units": hidden},
        {"kind": "flatten"},
        {"kind": "dense", "units": dense, "activation": "tanh"},
        {"kind": "dense", "units": 1, "activation": "tanh"},
    ]


def cpm_specs(dense=(64, 32, 16), dropout=0.1, l2=1e-4, noise_std=0.01):
    """Feature-vector regressor: noise -> shrinking dense trunk -> scalar."""
    specs = [{"kind": "gaussian_noise", "std": noise_std}]
    for units in dense:
        specs.append({"kind": "dense", "units": units, "activation": "tanh",
                      "dropout": dropout, "l2": l2})
    specs.append({"kind": "dense", "units": 1, "activation": "tanh"})
    return specs
