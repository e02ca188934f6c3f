"""Operator override, phase advance and the uncertainty-scaled impedance law.

Stiffness and damping shrink linearly from their ceilings as the
prediction spread approaches the calibrated maximum:
``K = K_S * (1 - min(sigma/sigma_max, 1))`` per joint, and likewise for D
with the velocity spread.  The clamp keeps both gains in
``[0, ceiling]`` even for out-of-distribution spreads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin
from .config import ImpedanceConfig
from .estimator import (EnsembleModel, GaussianVector, fem_infer, propagate,
                        PHASE_PAIRS)
from .kinematics import FEATURE_NAMES, InvalidInputError

#: feature names the operator may pin (spatial features of both legs)
OVERRIDABLE = ("h_L", "h_R", "l_L", "l_R", "c_L", "c_R", "v_L", "v_R")
_FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}


@dataclass(frozen=True)
class TherapistOverride:
    """Operator-pinned feature means plus the gait-phase advance.

    ``features`` maps feature names (subset of :data:`OVERRIDABLE`) to
    replacement means in physical units; ``delta_phase`` leads the
    estimated phase by the given percentage of the gait cycle.
    """

    features: dict = field(default_factory=dict)
    delta_phase: float = 0.0

    def __post_init__(self):
        for name, value in self.features.items():
            if name not in OVERRIDABLE:
                raise InvalidInputError(f"feature {name!r} cannot be overridden")
            if not np.isfinite(value):
                raise InvalidInputError(f"override for {name} must be finite")
        if not (0.0 <= self.delta_phase < 100.0):
            raise InvalidInputError("delta_phase must lie in [0, 100)")

    def is_identity(self):
        return not self.features and self.delta_phase == 0.0

    def with_features(self, **feats):
        merged = dict(self.features)
        merged.update(feats)
        return replace(self, features=merged)

    def without(self, names=None):
        if names is None:
            return replace(self, features={}, delta_phase=0.0)
        kept = {k: v for k, v in self.features.items() if k not in set(names)}
        return replace(self, features=kept)


def apply_override(f_dist: GaussianVector, ov: TherapistOverride) -> GaussianVector:
    """Replace overridden feature means; spreads are never touched.

    The phase advance rotates both legs' phase-mean vectors.  Returns a new
    distribution; the input is left intact so clearing an override restores
    the self-selected estimate.
    """
    out = f_dist.copy()
    for name, value in ov.features.items():
        out.mu[_FEATURE_INDEX[name]] = value
    if ov.delta_phase != 0.0:
        for ci, si in PHASE_PAIRS:
            out.mu[ci], out.mu[si] = advance_phase(out.mu[ci], out.mu[si],
                                                   ov.delta_phase)
    return out


def advance_phase(cos_gp, sin_gp, delta):
    """Rotate a phase vector forward by ``delta`` percent of the cycle."""
    if not (0.0 <= delta < 100.0):
        raise InvalidInputError("delta must lie in [0, 100)")
    if cos_gp == 0.0 and sin_gp == 0.0:
        raise InvalidInputError("cannot advance a zero phase vector")
    ang = 2.0 * np.pi * delta / 100.0
    c, s = np.cos(ang), np.sin(ang)
    return cos_gp * c - sin_gp * s, sin_gp * c + cos_gp * s


def compute_impedance(sigma_theta, sigma_theta_dot, cfg: ImpedanceConfig):
    """Per-joint stiffness and damping from prediction spreads."""
    sigma_theta = np.asarray(sigma_theta, dtype=float)
    sigma_theta_dot = np.asarray(sigma_theta_dot, dtype=float)
    k_s = np.asarray(cfg.k_s_joint())
    d_s = np.asarray(cfg.d_s_joint())
    ratio_k = np.clip(sigma_theta / np.asarray(cfg.sigma_max_theta), 0.0, 1.0)
    ratio_d = np.clip(sigma_theta_dot / np.asarray(cfg.sigma_max_theta_dot),
                      0.0, 1.0)
    return k_s * (1.0 - ratio_k), d_s * (1.0 - ratio_d)


@dataclass(frozen=True)
class ImpedanceCommand:
    theta_d: np.ndarray
    theta_dot_d: np.ndarray
    k: np.ndarray
    d: np.ndarray
    timestamp: float = 0.0

    def is_finite(self):
        return all(np.all(np.isfinite(v)) for v in
                   (self.theta_d, self.theta_dot_d, self.k, self.d))


def safe_stop_command(timestamp=0.0) -> ImpedanceCommand:
    """Pure-transparency command: zero gains, current references moot."""
    return ImpedanceCommand(theta_d=np.zeros(4), theta_dot_d=np.zeros(4),
                            k=np.zeros(4), d=np.zeros(4), timestamp=timestamp)


def desired_torque(theta, theta_dot, cmd: ImpedanceCommand, tau_max=30.0):
    """Desired interaction torque of the virtual spring-damper.

    ``tau = K(theta - theta_d) + D(theta_dot - theta_dot_d)``, optionally
    saturated per joint; pass ``tau_max=None`` to disable the rail.
    """
    theta = np.asarray(theta, dtype=float)
    theta_dot = np.asarray(theta_dot, dtype=float)
    tau = cmd.k * (theta - cmd.theta_d) + cmd.d * (theta_dot - cmd.theta_dot_d)
    if tau_max is not None:
        tau = np.clip(tau, -tau_max, tau_max)
    return tau


def calibrate_sigma_max(fem: EnsembleModel, cpm: EnsembleModel, windows,
                        n_samples=64, seed=0, floor=1e-6):
    """Maximal kinematics uncertainty over a validation window set.

    Runs the full chain (window ensemble, identity override, Monte-Carlo
    propagation) per window and keeps the per-output maximum spread.
    Returns ``(sigma_max_theta, sigma_max_theta_dot)``.
    """
    windows = np.asarray(windows, dtype=float)
    if windows.shape[0] == 0:
        raise InvalidInputError("sigma_max calibration needs a non-empty set")
    rng = np.random.default_rng(seed)
    best = np.zeros(8)
    for w in windows:
        f_dist = fem_infer(fem, w)
        k_dist = propagate(cpm, f_dist, n_samples, rng)
        best = np.maximum(best, k_dist.sigma)
    best = np.maximum(best, floor)
    return best[:4], best[4:]
