"""The closed control loop.

Three logical tasks communicate only through message hand-offs: a sensor
producer advances the plant at the sensor rate holding the latest command,
an inference task turns the freshest 300 ms window into a new command at
up to 50 Hz, and a recorder drains ticks.  In lockstep mode the tasks are
stepped round-robin on one thread under a simulated clock (bit-identical
reruns under a fixed seed); wall-clock mode runs them as real threads for
latency measurement.

Safety: any non-finite value in the window, the feature distribution, the
kinematics distribution or the command latches the loop into a safe stop
(zero stiffness and damping, pure transparency) for the rest of the run.
"""

from __future__ import annotations

import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:      # pragma: no cover
    threadpool_limits = None

from .. import estimator as est
from .. import impedance as imp
from ..bundle import ModelBundle
from ..config import RunConfig, PlantConfig
from ..kinematics import InvalidInputError, StanceTracker
from ..nn.fastpath import FastStack, warmup
from ..plant import Plant
from ..synth import GaitTrajectory, SubjectProfile
from .scenario import Scenario


@dataclass
class PipelineTick:
    t: float
    seq: int
    self_mu: np.ndarray
    self_sigma: np.ndarray
    applied_mu: np.ndarray
    kin_mu: np.ndarray
    kin_sigma: np.ndarray
    theta_d: np.ndarray
    theta_dot_d: np.ndarray
    k: np.ndarray
    d: np.ndarray
    power: np.ndarray
    latency_ms: float
    segment: str
    safe_stop: bool
    mode: str
    override: dict
    delta_phase: float
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_bp: float
    tau_int: np.ndarray
    alpha: np.ndarray
    foot_rel: np.ndarray
    activity: str


class FastPipeline:
    """Window -> command chain on the packed low-latency backends.

    Mirrors the canonical estimator math (member normal fit, override,
    Monte-Carlo propagation, impedance law); instances own scratch buffers
    and must not be shared across threads.
    """

    def __init__(self, bundle: ModelBundle, mc_samples=64, dtype=np.float32):
        warmup()
        self.fem = bundle.fem
        self.cpm = bundle.cpm
        self.imp_cfg = bundle.impedance
        self.mc_samples = int(mc_samples)
        self.fem_fast = FastStack.for_ensemble(bundle.fem, dtype)
        self.cpm_fast = FastStack.for_ensemble(bundle.cpm, dtype)

    def features(self, window_norm) -> est.GaussianVector:
        vals = self.fem_fast.infer_window(window_norm).reshape(
            self.fem.n_members, self.fem.n_outputs)
        mu_n = vals.mean(axis=0)
        sd_n = vals.std(axis=0, ddof=0)
        mu = self.fem.out_stats.denormalize(mu_n)
        sigma = sd_n * self.fem.out_stats.scale
        est.renormalize_phase(mu)
        return est.GaussianVector(mu, sigma)

    def kinematics(self, f_dist, rng) -> est.GaussianVector:
        n = self.mc_samples
        draws = f_dist.mu[None, :] + f_dist.sigma[None, :] * \
            rng.standard_normal((n, f_dist.mu.size))
        vals = self.cpm_fast.infer_batch(self.cpm.in_stats.normalize(draws))
        vals = vals.reshape(self.cpm.n_members, self.cpm.n_outputs, n)
        vals = vals.transpose(1, 0, 2).reshape(self.cpm.n_outputs, -1)
        mu = self.cpm.out_stats.denormalize(vals.mean(axis=1))
        sigma = vals.std(axis=1, ddof=0) * self.cpm.out_stats.scale
        return est.GaussianVector(mu, sigma)


class ControlLoop:
    """Owns the plant, the window buffer and the override snapshot."""

    ROW_PERIOD = 0.01            # 100 Hz window rows

    def __init__(self, bundle: ModelBundle, run_cfg: RunConfig,
                 profile: SubjectProfile = None, plan=None,
                 plant_cfg: PlantConfig = None, scenario: Scenario = None,
                 mc_samples=64, on_tick=None):
        self.bundle = bundle
        self.cfg = run_cfg
        self.scenario = scenario
        self.on_tick = on_tick
        self.profile = profile or SubjectProfile("live", rng_seed=run_cfg.seed)
        self.plan = plan or [("level", 10 ** 9)]
        self.plant_cfg = plant_cfg or PlantConfig()
        self.pipeline = FastPipeline(bundle, mc_samples=mc_samples)
        self.channels = bundle.fem.channels
        self._stats = bundle.fem.in_stats

        self.traj = GaitTrajectory(self.profile, self.plan,
                                   rng=np.random.default_rng(run_cfg.seed + 1))
        self.plant = Plant(self.traj, self.plant_cfg)
        self.rng = np.random.default_rng(run_cfg.seed)

        self.mode = "closed_loop"
        self._override = imp.TherapistOverride()
        self._cmd = imp.safe_stop_command()
        self._rows = deque(maxlen=64)
        self._rows_lock = threading.Lock()
        self._last_row_t = -np.inf
        self._safe_stop = False
        self._fault_at = None
        self._seq = 0
        self._recent_self = deque(maxlen=25)
        self._pending_segments = list(scenario.segments) if scenario else []
        self.ticks = []

    # -- external control ---------------------------------------------------

    def set_override(self, override: imp.TherapistOverride):
        self._override = override

    def get_override(self) -> imp.TherapistOverride:
        return self._override

    def clear_override(self, names=None):
        self._override = self._override.without(names)

    def set_mode(self, mode):
        if mode not in ("transparency", "closed_loop"):
            raise InvalidInputError(f"unknown mode {mode!r}")
        self.mode = mode

    def schedule_fault(self, t):
        """Corrupt the first window at or after simulated time t (tests the
        safe-stop latch)."""
        self._fault_at = float(t)

    # -- internals ------------------------------------------------------------

    def _state_row(self, rs):
        vals = {
            "theta_bp": rs.theta_bp,
        }
        for i in range(4):
            vals[f"theta_{i}"] = rs.theta[i]
            vals[f"theta_dot_{i}"] = rs.theta_dot[i]
            vals[f"tau_int_{i}"] = rs.tau_int[i]
            vals[f"foot_rel_{i}"] = rs.foot_rel[i]
        vals["alpha_0"] = rs.alpha[0]
        vals["alpha_1"] = rs.alpha[1]
        return np.array([vals[c] for c in self.channels])

    def _apply_segment(self, seg):
        if seg.mode:
            self.set_mode(seg.mode)
        if seg.set_profile:
            changes = dict(seg.set_profile)
            scale = changes.pop("cadence_scale", None)
            if scale is not None:
                changes["cadence_hz"] = self.traj.profile.cadence_hz * scale
            self.traj.request_profile(**changes)
        if seg.clear_override:
            self._override = imp.TherapistOverride()
        if seg.override or seg.override_add or seg.delta_phase is not None:
            feats = dict(seg.override)
            if seg.override_add:
                if not self._recent_self:
                    raise InvalidInputError(
                        "relative override before any inference tick")
                recent = np.mean(self._recent_self, axis=0)
                for name, delta in seg.override_add.items():
                    idx = imp._FEATURE_INDEX[name]
                    feats[name] = float(recent[idx] + delta)
            ov = self._override.with_features(**feats)
            if seg.delta_phase is not None:
                ov = imp.TherapistOverride(features=ov.features,
                                           delta_phase=seg.delta_phase)
            self._override = ov

    def _advance_scenario(self, t):
        while self._pending_segments and t >= self._pending_segments[0].t:
            self._apply_segment(self._pending_segments.pop(0))

    def _sensor_step(self, dt):
        cmd = self._cmd
        rs_prev = self.plant.state
        if self._safe_stop or self.mode == "transparency" or cmd is None:
            tau_exo = np.zeros(4)
        else:
            tau_exo = -imp.desired_torque(
                rs_prev.theta, rs_prev.theta_dot, cmd,
                tau_max=self.bundle.impedance.tau_max)
        rs = self.plant.step(tau_exo, dt)
        return rs

    def _infer(self, t, rs):
        t_start = time.perf_counter()
        with self._rows_lock:
            if len(self._rows) < 30:
                return None
            window = np.asarray(list(self._rows)[-30:])
        window = self._stats.normalize(window)
        if self._fault_at is not None and t >= self._fault_at:
            window = window.copy()
            window[0, 0] = np.nan
            self._fault_at = None

        safe = self._safe_stop or not np.all(np.isfinite(window))
        if not safe:
            self_dist = self.pipeline.features(window)
            self._recent_self.append(self_dist.mu.copy())
            override = self._override
            applied = imp.apply_override(self_dist, override)
            kin = self.pipeline.kinematics(applied, self.rng)
            finite = (np.all(np.isfinite(self_dist.mu))
                      and np.all(np.isfinite(self_dist.sigma))
                      and np.all(np.isfinite(kin.mu))
                      and np.all(np.isfinite(kin.sigma)))
            safe = not finite
        if safe:
            self._safe_stop = True
            zero12 = np.zeros(12)
            self_dist = est.GaussianVector(zero12, zero12.copy())
            applied = self_dist.copy()
            kin = est.GaussianVector(np.zeros(8), np.zeros(8))
            override = self._override
            k = d = np.zeros(4)
            theta_d = rs.theta.copy()
            theta_dot_d = np.zeros(4)
        else:
            k, d = imp.compute_impedance(kin.sigma[:4], kin.sigma[4:],
                                         self.bundle.impedance)
            theta_d = kin.mu[:4]
            theta_dot_d = kin.mu[4:]
        if self.mode == "transparency" and not self._safe_stop:
            k = np.zeros(4)
            d = np.zeros(4)
        cmd = imp.ImpedanceCommand(theta_d=theta_d, theta_dot_d=theta_dot_d,
                                   k=k, d=d, timestamp=t)
        if not cmd.is_finite():
            self._safe_stop = True
            cmd = imp.safe_stop_command(t)
        self._cmd = cmd
        latency_ms = (time.perf_counter() - t_start) * 1e3

        self._seq += 1
        tick = PipelineTick(
            t=t, seq=self._seq,
            self_mu=self_dist.mu, self_sigma=self_dist.sigma,
            applied_mu=applied.mu,
            kin_mu=kin.mu, kin_sigma=kin.sigma,
            theta_d=cmd.theta_d, theta_dot_d=cmd.theta_dot_d,
            k=cmd.k, d=cmd.d,
            power=rs.tau_int * rs.theta_dot,
            latency_ms=latency_ms,
            segment=self.scenario.label_at(t) if self.scenario else "",
            safe_stop=self._safe_stop,
            mode=self.mode,
            override=dict(override.features),
            delta_phase=override.delta_phase,
            theta=rs.theta, theta_dot=rs.theta_dot, theta_bp=rs.theta_bp,
            tau_int=rs.tau_int, alpha=rs.alpha, foot_rel=rs.foot_rel,
            activity=self.traj._states["left"][1].template.activity,
        )
        return tick

    def _emit(self, tick):
        self.ticks.append(tick)
        if self.on_tick is not None:
            self.on_tick(tick)

    # -- run modes ------------------------------------------------------------

    def run_lockstep(self, duration_s=None, pace=None):
        """Deterministic single-thread run under a simulated clock.

        ``pace`` (0, inf) slows the loop toward real time (1.0 is
        real-time), which lets external subscribers interact mid-run.
        """
        duration = duration_s or self.cfg.duration_s
        dt = 1.0 / self.cfg.sensor_rate_hz
        infer_period = 1.0 / self.cfg.inference_rate_hz
        t = 0.0
        next_row = 0.0
        next_infer = 0.30
        wall_start = time.perf_counter()
        limiter = (threadpool_limits(1, "blas") if threadpool_limits else None)
        try:
            while t < duration:
                self._advance_scenario(t)
                rs = self._sensor_step(dt)
                t = rs.t
                if t >= next_row - 1e-12:
                    with self._rows_lock:
                        self._rows.append(self._state_row(rs))
                        self._last_row_t = t
                    next_row += self.ROW_PERIOD
                if t >= next_infer - 1e-12:
                    tick = self._infer(t, rs)
                    next_infer += infer_period
                    if tick is not None:
                        self._emit(tick)
                if pace is not None:
                    lag = t / pace - (time.perf_counter() - wall_start)
                    if lag > 0:
                        time.sleep(lag)
        finally:
            if limiter is not None:
                limiter.unregister()
        return self.ticks

    def run_wallclock(self, duration_s=None):
        """Threaded real-time run: producer, inference and recorder tasks."""
        duration = duration_s or self.cfg.duration_s
        dt = 1.0 / self.cfg.sensor_rate_hz
        infer_period = 1.0 / self.cfg.inference_rate_hz
        tick_queue = queue.Queue()
        stop = threading.Event()
        state_box = {"rs": None, "t": 0.0}

        def producer():
            t = 0.0
            next_row = 0.0
            start = time.perf_counter()
            while t < duration and not stop.is_set():
                self._advance_scenario(t)
                rs = self._sensor_step(dt)
                t = rs.t
                state_box["rs"] = rs
                state_box["t"] = t
                if t >= next_row - 1e-12:
                    with self._rows_lock:
                        self._rows.append(self._state_row(rs))
                        self._last_row_t = t
                    next_row += self.ROW_PERIOD
                lag = t - (time.perf_counter() - start)
                if lag > 0:
                    time.sleep(lag)
            stop.set()

        def inference():
            limiter = (threadpool_limits(1, "blas") if threadpool_limits else None)
            try:
                while not stop.is_set():
                    t_next = time.perf_counter() + infer_period
                    rs = state_box["rs"]
                    if rs is not None:
                        tick = self._infer(state_box["t"], rs)
                        if tick is not None:
                            tick_queue.put(tick)
                    delay = t_next - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
            finally:
                if limiter is not None:
                    limiter.unregister()

        threads = [threading.Thread(target=producer, daemon=True),
                   threading.Thread(target=inference, daemon=True)]
        for th in threads:
            th.start()
        while not stop.is_set() or not tick_queue.empty():
            try:
                self._emit(tick_queue.get(timeout=0.05))
            except queue.Empty:
                pass
        for th in threads:
            th.join(timeout=2.0)
        return self.ticks


def run_session(bundle, run_cfg: RunConfig, profile=None, scenario=None,
                plant_cfg=None, mc_samples=64, on_tick=None, duration_s=None):
    """Convenience wrapper choosing the clock mode from the run config."""
    loop = ControlLoop(bundle, run_cfg, profile=profile, scenario=scenario,
                       plant_cfg=plant_cfg, mc_samples=mc_samples,
                       on_tick=on_tick)
    if run_cfg.lockstep:
        loop.run_lockstep(duration_s)
    else:
        loop.run_wallclock(duration_s)
    return loop
