"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .layers import Sequential


def finite_difference_check(model: Sequential, x, targets, eps=1e-5,
                            rng_seed=0, max_entries=None, rng_spawn=None):
    """Max relative error between analytic and numeric gradients.

    Every forward pass reuses an identically-seeded rng so stochastic
    layers (noise, dropout) evaluate the same realization; the loss is then
    a deterministic function of the parameters and central differences are
    valid.  Returns ``(max_rel_err, worst_param_name)``.
    """
    def fresh_rng():
        return np.random.default_rng(rng_seed)

    loss, grads = model.loss_and_grads(x, targets, rng=fresh_rng())
    named = model.parameters()
    worst = 0.0
    worst_name = ""
    for (name, p), g in zip(named, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        idx = np.arange(flat_p.size)
        if max_entries is not None and flat_p.size > max_entries:
            pick = np.random.default_rng(rng_seed + 1)
            idx = pick.choice(flat_p.size, size=max_entries, replace=False)
        for j in idx:
            orig = flat_p[j]
            flat_p[j] = orig + eps
            lp = model.loss_and_grads(x, targets, rng=fresh_rng())[0].sum()
            flat_p[j] = orig - eps
            lm = model.loss_and_grads(x, targets, rng=fresh_rng())[0].sum()
            flat_p[j] = orig
            numeric = (lp - lm) / (2.0 * eps)
            denom = max(abs(numeric), abs(flat_g[j]), 1e-8)
            rel = abs(numeric - flat_g[j]) / denom
            if rel > worst:
                worst = rel
                worst_name = name
    return worst, worst_name
