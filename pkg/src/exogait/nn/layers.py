"""Minimal stacked neural-net core.

Every layer carries its parameters with a leading model axis ``M`` so that
M independent, identically-shaped networks evaluate (and train) in one
vectorized pass.  M=1 recovers a single network; nothing is shared across
the model axis, so stacked training is exactly equivalent to training the
networks one by one with the same batch order.

Data tensors flow as ``(M, B, ...)``; unbatched ``(B, ...)`` inputs are
broadcast across the stack.  All math is float64.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..kinematics import InvalidInputError


class StateError(RuntimeError):
    """Backward called without a preceding train-mode forward."""


def _uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def reg_loss(self, m_models):
        return np.zeros(m_models)

    def spec(self) -> dict:
        raise NotImplementedError

    def out_shape(self, in_shape):
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise StateError("backward requires a prior forward in train mode")
        return self._cache


class GaussianNoise(Layer):
    """Adds N(0, std^2) noise in train mode, identity in inference."""

    def __init__(self, std):
        super().__init__()
        if std < 0:
            raise InvalidInputError("noise std must be >= 0")
        self.std = float(std)

    def forward(self, x, train=False, rng=None):
        self._cache = ()
        if not train or self.std == 0.0:
            return x
        if rng is None:
            raise InvalidInputError("train-mode forward of a noise layer needs an rng")
        return x + self.std * rng.standard_normal(x.shape)

    def backward(self, dout):
        self._need_cache()
        return dout

    def spec(self):
        return {"kind": "gaussian_noise", "std": self.std}

    def out_shape(self, in_shape):
        return in_shape


class Flatten(Layer):
    """Collapses everything after the batch axis."""

    def forward(self, x, train=False, rng=None):
        self._cache = x.shape
        m, b = x.shape[:2]
        return x.reshape(m, b, -1)

    def backward(self, dout):
        shape = self._need_cache()
        return dout.reshape(shape)

    def spec(self):
        return {"kind": "flatten"}

    def out_shape(self, in_shape):
        n = 1
        for s in in_shape:
            n *= s
        return (n,)


class Dense(Layer):
    """Affine map with optional tanh, inverted dropout and L2 penalty."""

    def __init__(self, in_dim, units, activation="linear", dropout=0.0,
                 l2=0.0, m_models=1, rng=None):
        super().__init__()
        if units < 1:
            raise InvalidInputError("dense units must be >= 1")
        if not (0.0 <= dropout < 1.0):
            raise InvalidInputError("dropout rate must lie in [0, 1)")
        if l2 < 0:
            raise InvalidInputError("l2 coefficient must be >= 0")
        if activation not in ("linear", "tanh"):
            raise InvalidInputError(f"unknown activation {activation!r}")
        self.in_dim = int(in_dim)
        self.units = int(units)
        self.activation = activation
        self.dropout = float(dropout)
        self.l2 = float(l2)
        rng = rng or np.random.default_rng()
        self.params = {
            "W": _uniform_fan_in(rng, (m_models, in_dim, units), in_dim),
            "b": np.zeros((m_models, 1, units)),
        }

    def forward(self, x, train=False, rng=None):
        z = np.matmul(x, self.params["W"]) + self.params["b"]
        a = np.tanh(z) if self.activation == "tanh" else z
        y = a
        mask = None
        if train and self.dropout > 0.0:
            if rng is None:
                raise InvalidInputError("train-mode forward with dropout needs an rng")
            mask = (rng.random(a.shape) >= self.dropout) / (1.0 - self.dropout)
            y = a * mask
        self._cache = (x, a if self.activation == "tanh" else None, mask)
        return y

    def backward(self, dout):
        x, a_tanh, mask = self._need_cache()
        if mask is not None:
            dout = dout * mask
        if self.activation == "tanh":
            dout = dout * (1.0 - a_tanh * a_tanh)
        self.grads["W"] = np.matmul(x.transpose(0, 2, 1), dout)
        if self.l2 > 0.0:
            self.grads["W"] += 2.0 * self.l2 * self.params["W"]
        self.grads["b"] = dout.sum(axis=1, keepdims=True)
        return np.matmul(dout, self.params["W"].transpose(0, 2, 1))

    def reg_loss(self, m_models):
        if self.l2 == 0.0:
            return np.zeros(m_models)
        w = self.params["W"]
        return self.l2 * (w * w).sum(axis=(1, 2))

    def spec(self):
        return {"kind": "dense", "units": self.units, "activation": self.activation,
                "dropout": self.dropout, "l2": self.l2}

    def out_shape(self, in_shape):
        return in_shape[:-1] + (self.units,)


class BiLSTM(Layer):
    """Bidirectional LSTM over (M, B, T, D) inputs, concatenated outputs.

    Gate layout along the last weight axis is [input, forget, output, cell];
    the forget-gate bias starts at 1.  The reverse direction consumes the
    time-reversed sequence and its outputs are re-reversed, so output step t
    holds [h_fwd(x_0..x_t), h_bwd(x_T-1..x_t)].
    """

    def __init__(self, in_dim, units, m_models=1, rng=None):
        super().__init__()
        if units < 1:
            raise InvalidInputError("recurrent units must be >= 1")
        self.in_dim = int(in_dim)
        self.units = int(units)
        rng = rng or np.random.default_rng()
        h = self.units
        self.params = {}
        for d in ("f", "r"):
            self.params[f"Wx_{d}"] = _uniform_fan_in(rng, (m_models, in_dim, 4 * h), in_dim)
            self.params[f"Wh_{d}"] = _uniform_fan_in(rng, (m_models, h, 4 * h), h)
            b = np.zeros((m_models, 1, 4 * h))
            b[..., h:2 * h] = 1.0
            self.params[f"b_{d}"] = b

    def _run_direction(self, x, d):
        """One direction pass; caches are time-major so every per-step slice
        is contiguous."""
        m, b, t, _ = x.shape
        h = self.units
        wx, wh, bias = self.params[f"Wx_{d}"], self.params[f"Wh_{d}"], self.params[f"b_{d}"]
        xt = x.transpose(2, 0, 1, 3)          # (T, M, B, D) view
        gates = np.empty((t, m, b, 4 * h))    # activated i|f|o|u per step
        cs = np.empty((t, m, b, h))
        tcs = np.empty((t, m, b, h))
        hs = np.empty((t, m, b, h))
        hcur = np.zeros((m, b, h))
        ccur = np.zeros((m, b, h))
        scratch = np.empty((m, b, h))
        for k in range(t):
            g = gates[k]
            np.matmul(np.ascontiguousarray(xt[k]), wx, out=g)
            g += np.matmul(hcur, wh)
            g += bias
            expit(g[..., :3 * h], out=g[..., :3 * h])
            np.tanh(g[..., 3 * h:], out=g[..., 3 * h:])
            ig, fg = g[..., :h], g[..., h:2 * h]
            og, ug = g[..., 2 * h:3 * h], g[..., 3 * h:]
            ccur_k = cs[k]
            np.multiply(fg, ccur, out=ccur_k)
            np.multiply(ig, ug, out=scratch)
            ccur_k += scratch
            np.tanh(ccur_k, out=tcs[k])
            np.multiply(og, tcs[k], out=hs[k])
            hcur = hs[k]
            ccur = ccur_k
        out = np.ascontiguousarray(hs.transpose(1, 2, 0, 3))
        return out, (x, gates, cs, tcs, hs)

    def _backprop_direction(self, dhs_tm, cache, d):
        """``dhs_tm`` is (T, M, B, H); returns dx as (M, B, T, D).

        Weight gradients accumulate per step so no (T, M*B) transposes of
        the caches are ever materialized.
        """
        x, gates, cs, tcs, hs = cache
        m, b, t, _ = x.shape
        h = self.units
        wx, wh = self.params[f"Wx_{d}"], self.params[f"Wh_{d}"]
        xt = x.transpose(2, 0, 1, 3)
        whT = np.ascontiguousarray(wh.transpose(0, 2, 1))
        wxT = np.ascontiguousarray(wx.transpose(0, 2, 1))
        dwx = np.zeros_like(wx)
        dwh = np.zeros_like(wh)
        db = np.zeros((m, 4 * h))
        dx_tm = np.empty((t, m, b, self.in_dim))
        dh_next = np.zeros((m, b, h))
        dc = np.zeros((m, b, h))
        dg = np.empty((m, b, 4 * h))
        tmp = np.empty((m, b, h))
        for k in range(t - 1, -1, -1):
            g = gates[k]
            ig, fg = g[..., :h], g[..., h:2 * h]
            og, ug = g[..., 2 * h:3 * h], g[..., 3 * h:]
            tc = tcs[k]
            dh = dhs_tm[k] + dh_next
            # dc += dh * og * (1 - tc^2); dc entering holds dc_next
            np.multiply(tc, tc, out=tmp)
            np.subtract(1.0, tmp, out=tmp)
            tmp *= og
            tmp *= dh
            dc += tmp
            dgi, dgf = dg[..., :h], dg[..., h:2 * h]
            dgo, dgu = dg[..., 2 * h:3 * h], dg[..., 3 * h:]
            # input gate: dc*ug * ig*(1-ig)
            np.subtract(1.0, ig, out=dgi)
            dgi *= ig
            dgi *= ug
            dgi *= dc
            # forget gate: dc*c_prev * fg*(1-fg)
            np.subtract(1.0, fg, out=dgf)
            dgf *= fg
            if k > 0:
                dgf *= cs[k - 1]
                dgf *= dc
            else:
                dgf[...] = 0.0
            # output gate: dh*tc * og*(1-og)
            np.subtract(1.0, og, out=dgo)
            dgo *= og
            dgo *= tc
            dgo *= dh
            # cell candidate: dc*ig * (1-ug^2)
            np.multiply(ug, ug, out=dgu)
            np.subtract(1.0, dgu, out=dgu)
            dgu *= ig
            dgu *= dc
            xk = np.ascontiguousarray(xt[k])
            dwx += np.matmul(xk.transpose(0, 2, 1), dg)
            if k > 0:
                dwh += np.matmul(hs[k - 1].transpose(0, 2, 1), dg)
            db += dg.sum(axis=1)
            np.matmul(dg, wxT, out=dx_tm[k])
            dh_next = np.matmul(dg, whT)
            dc *= fg
        self.grads[f"Wx_{d}"] = dwx
        self.grads[f"Wh_{d}"] = dwh
        self.grads[f"b_{d}"] = db[:, None]
        return np.ascontiguousarray(dx_tm.transpose(1, 2, 0, 3))

    @staticmethod
    def _time_major(a):
        return np.ascontiguousarray(a.transpose(2, 0, 1, 3))

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[-1] != self.in_dim:
            raise InvalidInputError(
                f"recurrent layer expects (M, B, T, {self.in_dim}) inputs, got {x.shape}")
        hs_f, cache_f = self._run_direction(x, "f")
        hs_r, cache_r = self._run_direction(x[:, :, ::-1], "r")
        self._cache = (cache_f, cache_r)
        return np.concatenate([hs_f, hs_r[:, :, ::-1]], axis=-1)

    def backward(self, dout):
        cache_f, cache_r = self._need_cache()
        h = self.units
        dx_f = self._backprop_direction(self._time_major(dout[..., :h]),
                                        cache_f, "f")
        dx_r = self._backprop_direction(self._time_major(dout[:, :, ::-1, h:]),
                                        cache_r, "r")
        return dx_f + dx_r[:, :, ::-1]

    def spec(self):
        return {"kind": "bidir_recurrent", "units": self.units}

    def out_shape(self, in_shape):
        return (in_shape[0], 2 * self.units)


def _build_layer(spec, in_shape, m_models, rng):
    kind = spec["kind"]
    if kind == "gaussian_noise":
        return GaussianNoise(spec["std"]), in_shape
    if kind == "flatten":
        layer = Flatten()
        return layer, layer.out_shape(in_shape)
    if kind == "dense":
        if len(in_shape) != 1:
            raise InvalidInputError(f"dense layer needs a flat input, got shape {in_shape}")
        layer = Dense(in_shape[0], spec["units"], spec.get("activation", "linear"),
                      spec.get("dropout", 0.0), spec.get("l2", 0.0), m_models, rng)
        return layer, layer.out_shape(in_shape)
    if kind == "bidir_recurrent":
        if len(in_shape) != 2:
            raise InvalidInputError(f"recurrent layer needs (T, D) input, got shape {in_shape}")
        layer = BiLSTM(in_shape[1], spec["units"], m_models, rng)
        return layer, layer.out_shape(in_shape)
    raise InvalidInputError(f"unknown layer kind {kind!r}")


class Sequential:
    """A stack of M identical-architecture networks evaluated together."""

    def __init__(self, layer_specs, input_shape, m_models=1, rng=None):
        rng = rng if rng is not None else np.random.default_rng()
        self.input_shape = tuple(int(s) for s in input_shape)
        self.m_models = int(m_models)
        self.layer_specs = [dict(s) for s in layer_specs]
        self.layers = []
        shape = self.input_shape
        for spec in self.layer_specs:
            layer, shape = _build_layer(spec, shape, self.m_models, rng)
            self.layers.append(layer)
        self.output_shape = shape

    # -- evaluation ---------------------------------------------------------

    def _lift(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[1:] == self.input_shape and x.ndim == len(self.input_shape) + 1:
            x = np.broadcast_to(x, (self.m_models,) + x.shape)
        if x.shape[0] != self.m_models or x.shape[2:] != self.input_shape:
            raise InvalidInputError(
                f"input shape {x.shape} does not match (M={self.m_models}, B, "
                f"{self.input_shape})")
        return x

    def forward(self, x, train=False, rng=None):
        out = self._lift(x)
        for layer in self.layers:
            out = layer.forward(out, train=train, rng=rng)
        return out

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def loss_and_grads(self, x, targets, rng=None, train=True):
        """Per-model MSE (+ L2 penalties) and parameter gradients.

        ``targets`` has shape (M, B, out) or broadcastable (B, out).
        Returns ``(loss, grads)`` with loss of shape (M,) and grads in the
        same named-parameter order as :meth:`parameters`.
        """
        y = self.forward(x, train=train, rng=rng)
        targets = np.asarray(targets, dtype=float)
        if targets.shape != y.shape:
            targets = np.broadcast_to(targets, y.shape)
        diff = y - targets
        per_elem = diff.shape[1] * diff.shape[2]
        loss = (diff * diff).sum(axis=(1, 2)) / per_elem
        for layer in self.layers:
            loss = loss + layer.reg_loss(self.m_models)
        self.backward(2.0 * diff / per_elem)
        return loss, [g for _, g in self.gradients()]

    def mse(self, x, targets):
        y = self.forward(x, train=False)
        targets = np.broadcast_to(np.asarray(targets, dtype=float), y.shape)
        d = y - targets
        return (d * d).sum(axis=(1, 2)) / (d.shape[1] * d.shape[2])

    # -- parameter access ---------------------------------------------------

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                out.append((f"L{i}.{name}", layer.params[name]))
        return out

    def gradients(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                out.append((f"L{i}.{name}", layer.grads[name]))
        return out

    def set_parameters(self, values):
        named = self.parameters()
        if len(values) != len(named):
            raise InvalidInputError("parameter list length mismatch")
        for (name, cur), new in zip(named, values):
            if cur.shape != new.shape:
                raise InvalidInputError(f"shape mismatch for {name}")
            cur[...] = new

    def snapshot(self, model_idx=None):
        """Copy of all parameters; optionally only one model's slice."""
        if model_idx is None:
            return [p.copy() for _, p in self.parameters()]
        return [p[model_idx].copy() for _, p in self.parameters()]

    def load_model_slice(self, model_idx, values):
        for (_, p), v in zip(self.parameters(), values):
            p[model_idx] = v

    # -- stacking -----------------------------------------------------------

    def slice_model(self, idx) -> "Sequential":
        out = Sequential(self.layer_specs, self.input_shape, 1)
        for (_, dst), (_, src) in zip(out.parameters(), self.parameters()):
            dst[...] = src[idx:idx + 1]
        return out

    @staticmethod
    def stack(models) -> "Sequential":
        first = models[0]
        for m in models[1:]:
            if m.layer_specs != first.layer_specs or m.input_shape != first.input_shape:
                raise InvalidInputError("can only stack identically-shaped models")
        total = sum(m.m_models for m in models)
        out = Sequential(first.layer_specs, first.input_shape, total)
        for pi, (_, dst) in enumerate(out.parameters()):
            dst[...] = np.concatenate(
                [m.parameters()[pi][1] for m in models], axis=0)
        return out
