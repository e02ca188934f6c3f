"""Two-stage probabilistic regression.

Stage one (window ensemble) maps a normalized 300 ms sensor window to the
12 gait features; stage two (command ensemble) maps a feature vector to the
8 joint kinematics targets.  Every output channel is an independent
network; uncertainty comes from training each ensemble member on a
different random subject subset and fitting a normal distribution over the
member predictions.  Propagation between the stages draws a Monte-Carlo
batch from the feature distribution and pools all member outputs.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from .config import TrainConfig, EnsembleConfig
from .kinematics import FEATURE_NAMES, InvalidInputError, NormStats
from .nn import Sequential, train_model, fem_specs, cpm_specs

KINEMATICS_NAMES = ("theta_0", "theta_1", "theta_2", "theta_3",
                    "theta_dot_0", "theta_dot_1", "theta_dot_2", "theta_dot_3")

PHASE_PAIRS = ((0, 2), (1, 3))   # (cos, sin) indices per leg


class ConfigError(ValueError):
    """Ensemble configuration cannot produce a valid uncertainty estimate."""


@dataclass
class GaussianVector:
    """Independent-component normal: elementwise mean and standard deviation."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.shape != self.sigma.shape:
            raise InvalidInputError("mu and sigma must have equal dimensions")
        if np.any(self.sigma < 0):
            raise InvalidInputError("sigma must be elementwise >= 0")

    def copy(self):
        return GaussianVector(self.mu.copy(), self.sigma.copy())


def fit_normal(values, axis=0):
    """Mean and population (ddof 0) standard deviation along ``axis``."""
    values = np.asarray(values, dtype=float)
    return GaussianVector(values.mean(axis=axis), values.std(axis=axis, ddof=0))


@dataclass
class EnsembleModel:
    """Members are model stacks with one network per output channel."""

    kind: str                      # "fem" or "cpm"
    members: list
    in_stats: NormStats
    out_stats: NormStats
    member_subjects: list
    output_names: tuple
    channels: tuple = ()           # window channels (fem only)
    histories: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.members) < 1:
            raise InvalidInputError("ensemble needs at least one member")
        n_out = self.members[0].m_models
        if any(m.m_models != n_out for m in self.members):
            raise InvalidInputError("members must share output dimensionality")
        if any(m.input_shape != self.members[0].input_shape for m in self.members):
            raise InvalidInputError("members must share input dimensionality")
        self._stack = None

    @property
    def n_members(self):
        return len(self.members)

    @property
    def n_outputs(self):
        return self.members[0].m_models

    def stacked(self) -> Sequential:
        """All members' nets in one model stack (member-major order)."""
        if self._stack is None:
            self._stack = Sequential.stack(self.members)
        return self._stack

    def member_outputs(self, x_norm):
        """Raw normalized predictions, shape (members, outputs, batch)."""
        x_norm = np.asarray(x_norm, dtype=float)
        out = self.stacked().forward(x_norm)    # (members*outputs, B, 1)
        return out[..., 0].reshape(self.n_members, self.n_outputs, -1)


def renormalize_phase(mu):
    """Project the phase cos/sin pairs of a 12-feature mean onto the unit
    circle (in place) and return the vector."""
    for ci, si in PHASE_PAIRS:
        norm = np.hypot(mu[ci], mu[si])
        if norm > 0:
            mu[ci] /= norm
            mu[si] /= norm
    return mu


def fem_infer(ens: EnsembleModel, window) -> GaussianVector:
    """Feature distribution for one normalized window."""
    window = np.asarray(window, dtype=float)
    if window.shape != ens.members[0].input_shape:
        raise InvalidInputError(
            f"window shape {window.shape} does not match ensemble input "
            f"{ens.members[0].input_shape}")
    vals = ens.member_outputs(window[None])[:, :, 0]     # (members, 12)
    dist = fit_normal(vals, axis=0)
    mu = ens.out_stats.denormalize(dist.mu)
    sigma = dist.sigma * ens.out_stats.scale
    renormalize_phase(mu)
    return GaussianVector(mu, sigma)


def fem_infer_batch(ens: EnsembleModel, windows):
    """Vectorized :func:`fem_infer`; returns (mu, sigma) arrays (B, 12)."""
    vals = ens.member_outputs(windows)                   # (members, 12, B)
    mu_n = vals.mean(axis=0).T
    sd_n = vals.std(axis=0, ddof=0).T
    mu = ens.out_stats.denormalize(mu_n)
    sigma = sd_n * ens.out_stats.scale
    for row in mu:
        renormalize_phase(row)
    return mu, sigma


def propagate(cpm: EnsembleModel, f_dist: GaussianVector, n_samples,
              rng=None) -> GaussianVector:
    """Monte-Carlo push of a feature distribution through the command stage.

    Draws ``n_samples`` feature vectors, evaluates every member on the
    whole batch and fits one normal per output over all member x sample
    values.
    """
    if n_samples < 2:
        raise InvalidInputError("Monte-Carlo propagation needs n_samples >= 2")
    rng = rng or np.random.default_rng()
    f = np.asarray(f_dist.mu, dtype=float)
    draws = f[None, :] + f_dist.sigma[None, :] * rng.standard_normal(
        (n_samples, f.size))
    x_norm = cpm.in_stats.normalize(draws)
    vals = cpm.member_outputs(x_norm)                    # (members, 8, N)
    vals = vals.transpose(1, 0, 2).reshape(cpm.n_outputs, -1)
    dist = fit_normal(vals, axis=1)
    mu = cpm.out_stats.denormalize(dist.mu)
    sigma = dist.sigma * cpm.out_stats.scale
    return GaussianVector(mu, sigma)


# ---------------------------------------------------------------------------
# data augmentation

def augment(features, kinematics, labels, n_new, rng=None, pool_size=256):
    """Interpolation augmentation toward a more even feature space.

    Each synthetic sample is ``lam*a + (1-lam)*b`` applied to both the
    feature and the kinematics vectors; partner ``b`` is drawn from other
    activity labels with probability proportional to feature-space distance,
    so large inter-activity gaps are filled preferentially.  Originals are
    retained; synthetic rows are labelled ``"mix"``.
    """
    features = np.asarray(features, dtype=float)
    kinematics = np.asarray(kinematics, dtype=float)
    labels = np.asarray(labels, dtype=object)
    if n_new < 0:
        raise InvalidInputError("n_new must be >= 0")
    if len(features) < 2:
        raise InvalidInputError("augmentation needs at least 2 samples")
    rng = rng or np.random.default_rng()
    n = len(features)
    new_f = np.empty((n_new, features.shape[1]))
    new_k = np.empty((n_new, kinematics.shape[1]))
    for i in range(n_new):
        a = int(rng.integers(n))
        other = np.flatnonzero(labels != labels[a])
        if other.size == 0:
            other = np.delete(np.arange(n), a)
        if other.size > pool_size:
            other = rng.choice(other, size=pool_size, replace=False)
        d = np.linalg.norm(features[other] - features[a], axis=1)
        total = d.sum()
        if total <= 0:
            b = int(rng.choice(other))
        else:
            b = int(rng.choice(other, p=d / total))
        lam = rng.uniform()
        new_f[i] = lam * features[a] + (1.0 - lam) * features[b]
        new_k[i] = lam * kinematics[a] + (1.0 - lam) * kinematics[b]
    return (np.vstack([features, new_f]),
            np.vstack([kinematics, new_k]),
            np.concatenate([labels, np.full(n_new, "mix", dtype=object)]))


# ---------------------------------------------------------------------------
# ensemble training

def _member_subsets(subjects, n_members, fraction, rng):
    subjects = list(subjects)
    n = len(subjects)
    if n < 2:
        raise ConfigError("subject bagging needs at least 2 training subjects")
    k = min(int(np.ceil(fraction * n)), n - 1)   # every member drops >= 1
    k = max(k, 1)
    return [sorted(rng.choice(subjects, size=k, replace=False).tolist())
            for _ in range(n_members)]


def _split_train_val(n, val_fraction, rng):
    order = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    n_val = min(n_val, n - 1)
    return order[n_val:], order[:n_val]


def _train_member(payload):
    (specs, input_shape, n_out, x, y, cfg, init_seed) = payload
    model = Sequential(specs, input_shape, m_models=n_out,
                       rng=np.random.default_rng(init_seed))
    split_rng = np.random.default_rng(cfg.rng_seed + 1)
    tr, va = _split_train_val(len(x), cfg.val_fraction, split_rng)
    hist = train_model(model, x[tr], y[:, tr], x[va], y[:, va], cfg)
    hist = {k: v for k, v in hist.items()}
    return model.snapshot(), hist


def _run_members(payloads, n_jobs):
    if n_jobs <= 1 or len(payloads) <= 1:
        return [_train_member(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=n_jobs, initializer=_limit_blas) as ex:
        return list(ex.map(_train_member, payloads))


def _limit_blas():
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:
        pass


def _train_ensemble(kind, specs, x_by_subject, y_by_subject, n_members,
                    train_cfg: TrainConfig, ens_cfg: EnsembleConfig,
                    in_stats, out_stats, output_names, channels=(), n_jobs=1):
    subjects = sorted(x_by_subject)
    if not subjects or all(len(x_by_subject[s]) == 0 for s in subjects):
        raise InvalidInputError("training dataset is empty")
    if n_members < 2:
        raise ConfigError("need at least 2 ensemble members to estimate spread")
    rng = np.random.default_rng(train_cfg.rng_seed)
    subsets = _member_subsets(subjects, n_members, ens_cfg.subset_fraction, rng)
    seeds = rng.integers(0, 2 ** 31 - 1, size=2 * n_members)

    input_shape = np.asarray(x_by_subject[subjects[0]]).shape[1:]
    n_out = len(output_names)
    payloads = []
    for m, subset in enumerate(subsets):
        x = np.concatenate([x_by_subject[s] for s in subset])
        y = np.concatenate([y_by_subject[s] for s in subset])
        y_stack = np.stack([y[:, j:j + 1] for j in range(n_out)])
        cfg_m = TrainConfig(lr=train_cfg.lr, batch_size=train_cfg.batch_size,
                            max_epochs=train_cfg.max_epochs,
                            early_stop_patience=train_cfg.early_stop_patience,
                            val_fraction=train_cfg.val_fraction,
                            rng_seed=int(seeds[2 * m]))
        payloads.append((specs, tuple(input_shape), n_out, x, y_stack,
                         cfg_m, int(seeds[2 * m + 1])))

    results = _run_members(payloads, n_jobs)
    members = []
    histories = []
    for (params, hist), payload in zip(results, payloads):
        model = Sequential(specs, payload[1], m_models=n_out)
        model.set_parameters(params)
        members.append(model)
        histories.append(hist)
    return EnsembleModel(kind=kind, members=members, in_stats=in_stats,
                         out_stats=out_stats, member_subjects=subsets,
                         output_names=tuple(output_names), channels=tuple(channels),
                         histories=histories)


def train_fem(windows_by_subject, targets_by_subject, channels,
              train_cfg: TrainConfig, ens_cfg: EnsembleConfig,
              fem_cfg=None, n_jobs=1) -> EnsembleModel:
    """Window-to-features ensemble over per-subject datasets.

    ``windows_by_subject`` holds raw (unnormalized) windows; normalization
    stats are fit across the union of training subjects and stored on the
    ensemble.
    """
    from .config import FemConfig
    fem_cfg = fem_cfg or FemConfig()
    subjects = sorted(windows_by_subject)
    if not subjects:
        raise InvalidInputError("training dataset is empty")
    all_rows = np.concatenate(
        [np.asarray(windows_by_subject[s]).reshape(-1, len(channels))
         for s in subjects if len(windows_by_subject[s])])
    in_stats = kin.fit_norm_stats(all_rows)
    all_targets = np.concatenate([targets_by_subject[s] for s in subjects
                                  if len(targets_by_subject[s])])
    out_stats = kin.fit_norm_stats(all_targets)

    x_by = {s: in_stats.normalize(windows_by_subject[s]) for s in subjects}
    y_by = {s: out_stats.normalize(targets_by_subject[s]) for s in subjects}
    specs = fem_specs(hidden=fem_cfg.hidden, dense=fem_cfg.dense,
                      noise_std=fem_cfg.noise_std)
    return _train_ensemble("fem", specs, x_by, y_by, ens_cfg.n_members,
                           train_cfg, ens_cfg, in_stats, out_stats,
                           FEATURE_NAMES, channels, n_jobs)


def train_cpm(features_by_subject, kinematics_by_subject,
              train_cfg: TrainConfig, ens_cfg: EnsembleConfig,
              cpm_cfg=None, n_jobs=1) -> EnsembleModel:
    """Features-to-kinematics ensemble; expects pre-augmented datasets."""
    from .config import CpmConfig
    cpm_cfg = cpm_cfg or CpmConfig()
    subjects = sorted(features_by_subject)
    if not subjects:
        raise InvalidInputError("training dataset is empty")
    all_f = np.concatenate([features_by_subject[s] for s in subjects
                            if len(features_by_subject[s])])
    all_k = np.concatenate([kinematics_by_subject[s] for s in subjects
                            if len(kinematics_by_subject[s])])
    in_stats = kin.fit_norm_stats(all_f)
    out_stats = kin.fit_norm_stats(all_k)
    x_by = {s: in_stats.normalize(features_by_subject[s]) for s in subjects}
    y_by = {s: out_stats.normalize(kinematics_by_subject[s]) for s in subjects}
    specs = cpm_specs(dense=tuple(cpm_cfg.dense), dropout=cpm_cfg.dropout,
                      l2=cpm_cfg.l2, noise_std=cpm_cfg.noise_std)
    return _train_ensemble("cpm", specs, x_by, y_by, ens_cfg.n_members,
                           train_cfg, ens_cfg, in_stats, out_stats,
                           KINEMATICS_NAMES, (), n_jobs)
