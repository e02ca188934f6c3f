"""Simulated planar exoskeleton-plus-wearer plant.

Each joint follows second-order dynamics
``I * theta_dd = tau_track + tau_exo - b * theta_dot`` where ``tau_track``
is a PD pull toward the wearer's own intent trajectory (their volitional
drive) and ``tau_exo`` the torque the device applies.  Integration is
semi-implicit Euler.  The emitted interaction torque is the reaction
measured at the human-device interface, ``tau_int = -tau_exo``, so the
interaction power ``tau_int . theta_dot`` goes negative when the device
does positive work on the wearer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from .config import PlantConfig
from .kinematics import InvalidInputError, LegGeometry, RobotState, StanceTracker


@dataclass
class PlantState:
    theta: np.ndarray
    theta_dot: np.ndarray
    t: float = 0.0


class StaticIntent:
    """Fixed-pose intent used by tests and transparency checks."""

    def __init__(self, theta, theta_dot=None, theta_bp=0.0):
        self.theta = np.asarray(theta, dtype=float)
        self.theta_dot = (np.zeros(4) if theta_dot is None
                          else np.asarray(theta_dot, dtype=float))
        self.theta_bp = float(theta_bp)

    def sample(self, t):
        from .synth import IntentSample
        return IntentSample(t=t, theta=self.theta.copy(),
                            theta_dot=self.theta_dot.copy(),
                            theta_bp=self.theta_bp,
                            alpha=np.array([0.5, 0.5]),
                            tau_pattern=np.zeros(4),
                            phase_left=0.0, phase_right=50.0,
                            activity="level")


class Plant:
    """Single-owner stateful simulator; advance only from the runtime loop."""

    def __init__(self, intent, cfg: PlantConfig = None, geom: LegGeometry = None,
                 state: PlantState = None, track_intent=True):
        self.intent = intent
        self.cfg = cfg or PlantConfig()
        self.geom = geom or LegGeometry()
        first = intent.sample(0.0)
        self.state = state or PlantState(theta=first.theta.copy(),
                                         theta_dot=first.theta_dot.copy())
        self.track_intent = track_intent
        self._stance = StanceTracker(
            "left" if first.alpha[0] >= first.alpha[1] else "right")

    def step(self, tau_exo, dt) -> RobotState:
        """Advance one sensor period and emit the measured robot state."""
        tau_exo = np.asarray(tau_exo, dtype=float)
        if tau_exo.shape != (4,) or not np.all(np.isfinite(tau_exo)):
            raise InvalidInputError("exoskeleton torque must be a finite 4-vector")
        if not (0.0 < dt <= 0.01):
            raise InvalidInputError("plant step size must lie in (0, 0.01]")
        c = self.cfg
        s = self.state
        t_next = s.t + dt
        ref = self.intent.sample(t_next)
        tau_track = np.zeros(4)
        if self.track_intent:
            tau_track = (c.track_kp * (ref.theta - s.theta)
                         + c.track_kd * (ref.theta_dot - s.theta_dot))
        acc = (tau_track + tau_exo - c.damping * s.theta_dot) / c.inertia
        s.theta_dot = s.theta_dot + dt * acc
        s.theta = s.theta + dt * s.theta_dot
        s.t = t_next

        side = self._stance.update(float(ref.alpha[0]))
        foot_rel = kin.forward_kinematics(s.theta, ref.theta_bp, self.geom, side)
        return RobotState(
            t=s.t,
            theta=s.theta.copy(),
            theta_dot=s.theta_dot.copy(),
            theta_bp=ref.theta_bp,
            tau_int=-tau_exo,
            alpha=ref.alpha.copy(),
            foot_rel=foot_rel,
        )
