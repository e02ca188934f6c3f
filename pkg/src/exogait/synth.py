"""Synthetic gait generation.

A subject's walking pattern is built in three stages:

1. a parametric sagittal foot path per activity (stance progression plus a
   clearance bump over the swing), in the pelvis frame;
2. planar two-link inverse kinematics of that path, fit with an order-3
   Fourier series per joint (the smooth periodic joint template);
3. a stepped evaluator that plays the templates with per-stride parameter
   jitter, crossfading stride-to-stride so activity switches and feature
   changes stay continuous.

Template design targets (step length, step height) are nudged by a short
fixed-point calibration so that the landing features realized by forward
kinematics of the truncated series match the subject profile.  Nothing
here is human data; plausibility (positive clearance, step-height signs)
is enforced by the generator's own consistency checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin
from .kinematics import InvalidInputError, LegGeometry

ACTIVITIES = ("level", "stair_up", "stair_down", "ramp_up", "ramp_down")

TEMPLATE_TABLE_VERSION = 1

#: canonical foot-path parameters per activity (versioned built-in table).
#: ``length_factor`` scales the profile step length, ``step_height`` resolves
#: the landing height from the profile, ``clearance`` the swing bump apex.
ACTIVITY_PATHS = {
    "level": dict(length_factor=1.00, clearance=0.07, clearance_over_h=False,
                  trunk_lean=0.04, kind="flat"),
    "stair_up": dict(length_factor=0.55, clearance=0.08, clearance_over_h=True,
                     trunk_lean=0.11, kind="stair", sign=+1.0),
    "stair_down": dict(length_factor=0.55, clearance=0.05, clearance_over_h=False,
                       trunk_lean=0.02, kind="stair", sign=-1.0),
    "ramp_up": dict(length_factor=0.90, clearance=0.07, clearance_over_h=False,
                    trunk_lean=0.09, kind="ramp", sign=+1.0),
    "ramp_down": dict(length_factor=0.90, clearance=0.06, clearance_over_h=False,
                      trunk_lean=0.01, kind="ramp", sign=-1.0),
}

SWING_FRAC = 0.4
PELVIS_HEIGHT_FRAC = 0.92
BLEND_FRAC = 0.25          # crossfade window at each stride boundary
FOURIER_ORDER = 3
_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str
    cadence_hz: float = 0.95          # strides per second, per leg
    step_length_m: float = 0.55
    stair_height_m: float = 0.17
    ramp_slope_rad: float = 0.10
    amplitude_scales: tuple = (1.0, 1.0)   # (hip, knee) style factors
    noise_std_rad: float = 0.004
    stride_length_jitter: float = 0.03     # per-stride std, fraction of l
    stride_clearance_jitter: float = 0.20  # per-stride std, fraction of bump
    stride_period_jitter: float = 0.03
    tau_assist_max: float = 8.0            # N*m, per-stride amplitude range
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.cadence_hz > 0 and self.step_length_m > 0):
            raise InvalidInputError("cadence and step length must be positive")
        if self.noise_std_rad < 0:
            raise InvalidInputError("noise std must be >= 0")


def default_cohort(n_subjects=9, base_seed=1000):
    """Deterministic spread of subject profiles around the defaults."""
    profiles = []
    for i in range(n_subjects):
        r = np.random.default_rng(base_seed + i)
        profiles.append(SubjectProfile(
            subject_id=f"S{i:02d}",
            cadence_hz=float(r.uniform(0.85, 1.1)),
            step_length_m=float(r.uniform(0.48, 0.62)),
            stair_height_m=float(r.uniform(0.15, 0.19)),
            ramp_slope_rad=float(r.uniform(0.07, 0.13)),
            amplitude_scales=(float(r.uniform(0.97, 1.03)),
                              float(r.uniform(0.97, 1.03))),
            noise_std_rad=0.004,
            rng_seed=base_seed + i,
        ))
    return profiles


# ---------------------------------------------------------------------------
# foot-path design and joint templates

def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _smoothstep_d(s):
    inside = (s > 0.0) & (s < 1.0)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, 6.0 * s * (1.0 - s), 0.0)


def _foot_path(phi, l, h_step, bump, h0):
    """Pelvis-frame foot (x, z) for one leg over local phase phi in [0, 1).

    Stance covers [0, 1-SWING_FRAC]: the foot travels backward at the
    gait's progression rate while the pelvis passes over it; for stepped
    terrain the pelvis additionally rises/falls ``2*h_step`` per cycle.
    Swing returns the foot forward with a clearance bump.
    """
    phi = np.asarray(phi, dtype=float)
    stride = 2.0 * l
    st = 1.0 - SWING_FRAC
    a = 0.3 * stride
    x_off = a - stride * st
    z_land = -h0 + h_step
    z_off = -h0 + h_step * (1.0 - 2.0 * st)

    stance = phi <= st
    x_st = a - stride * phi
    z_st = -h0 + h_step * (1.0 - 2.0 * phi)

    s = (phi - st) / SWING_FRAC
    x_sw = x_off + (a - x_off) * _smoothstep(s)
    z_sw = z_off + (z_land - z_off) * _smoothstep(s) + bump * np.sin(np.pi * s) ** 2

    return np.where(stance, x_st, x_sw), np.where(stance, z_st, z_sw)


def _fourier_fit(values, order=FOURIER_ORDER):
    """Least-squares periodic fit on a uniform phase grid; returns
    coefficients [a0, a1, b1, ..., a_order, b_order]."""
    n = len(values)
    phi = np.arange(n) / n
    coeffs = [values.mean()]
    for k in range(1, order + 1):
        coeffs.append(2.0 * np.mean(values * np.cos(_TWO_PI * k * phi)))
        coeffs.append(2.0 * np.mean(values * np.sin(_TWO_PI * k * phi)))
    return np.asarray(coeffs)


def fourier_eval(coeffs, phi):
    """Evaluate the series and its derivative with respect to phase."""
    phi = np.asarray(phi, dtype=float)
    val = np.full_like(phi, coeffs[0])
    dval = np.zeros_like(phi)
    for k in range(1, (len(coeffs) - 1) // 2 + 1):
        w = _TWO_PI * k
        c = np.cos(w * phi)
        s = np.sin(w * phi)
        val = val + coeffs[2 * k - 1] * c + coeffs[2 * k] * s
        dval = dval + w * (-coeffs[2 * k - 1] * s + coeffs[2 * k] * c)
    return val, dval


@dataclass
class ActivityTemplate:
    """Joint Fourier templates for one (profile, activity) pair."""

    activity: str
    hip: np.ndarray
    knee: np.ndarray
    hip_dl: np.ndarray      # sensitivity of coefficients to step length
    knee_dl: np.ndarray
    hip_dc: np.ndarray      # sensitivity to clearance
    knee_dc: np.ndarray
    trunk0: float
    trunk_amp: float
    design_l: float
    design_bump: float

    def joints(self, phi, dl=0.0, dc=0.0):
        """(hip, knee, dhip/dphi, dknee/dphi) at local phase values."""
        ch = self.hip + dl * self.hip_dl + dc * self.hip_dc
        ck = self.knee + dl * self.knee_dl + dc * self.knee_dc
        h, dh = fourier_eval(ch, phi)
        k, dk = fourier_eval(ck, phi)
        return h, k, dh, dk

    def trunk(self, phi):
        val = self.trunk0 + self.trunk_amp * np.sin(2.0 * _TWO_PI * phi)
        dval = self.trunk_amp * 2.0 * _TWO_PI * np.cos(2.0 * _TWO_PI * phi)
        return val, dval


def _fit_joint_templates(l, h_step, bump, trunk0, geom, amplitude_scales,
                         grid=256):
    # descending terrain needs a crouch: the landing foot reaches one step
    # below the stance ground line, which a standing-height pelvis cannot span
    h0 = PELVIS_HEIGHT_FRAC * geom.total_len - 0.7 * max(-h_step, 0.0)
    phi = np.arange(grid) / grid
    x, z = _foot_path(phi, l, h_step, bump, h0)
    hip, knee = kin.inverse_leg_kinematics(x, z, trunk0, geom)
    ch = _fourier_fit(hip)
    ck = _fourier_fit(knee)
    ch[1:] *= amplitude_scales[0]
    ck[1:] *= amplitude_scales[1]
    return ch, ck


def _realized_landing(ch, ck, trunk0, geom):
    """Step length and height realized by the truncated templates.

    Lead leg at local phase 0, trail leg at 0.5; positions via forward
    kinematics of the fitted joint series.
    """
    phi = np.array([0.0, 0.5])
    hip, _ = fourier_eval(ch, phi)
    knee, _ = fourier_eval(ck, phi)
    theta = np.array([hip[0], knee[0], hip[1], knee[1]])
    pel = kin.foot_positions_pelvis(theta, trunk0, geom)
    return pel[0] - pel[2], pel[1] - pel[3]


def build_activity_template(profile: SubjectProfile, activity: str,
                            geom: LegGeometry) -> ActivityTemplate:
    if activity not in ACTIVITY_PATHS:
        raise InvalidInputError(f"unknown activity {activity!r}")
    spec = ACTIVITY_PATHS[activity]
    l_target = profile.step_length_m * spec["length_factor"]
    if spec["kind"] == "stair":
        h_target = spec["sign"] * profile.stair_height_m
    elif spec["kind"] == "ramp":
        h_target = spec["sign"] * l_target * np.tan(profile.ramp_slope_rad)
    else:
        h_target = 0.0
    bump = spec["clearance"]
    if spec["clearance_over_h"]:
        bump += max(h_target, 0.0)

    def fit(l, h, b):
        return _fit_joint_templates(l, h, b, spec["trunk_lean"], geom,
                                    profile.amplitude_scales)

    # fixed-point nudge of the design targets so that the realized landing
    # of the truncated series matches the profile
    l_design, h_design = l_target, h_target
    ch = ck = None
    for _ in range(3):
        ch, ck = fit(l_design, h_design, bump)
        l_real, h_real = _realized_landing(ch, ck, spec["trunk_lean"], geom)
        l_design += l_target - l_real
        h_design += h_target - h_real

    # coefficient-space sensitivities for per-stride feature jitter
    dl = 0.02
    ch_p, ck_p = fit(l_design + dl, h_design, bump)
    ch_m, ck_m = fit(l_design - dl, h_design, bump)
    hip_dl = (ch_p - ch_m) / (2 * dl)
    knee_dl = (ck_p - ck_m) / (2 * dl)
    dc = 0.02
    ch_p, ck_p = fit(l_design, h_design, bump + dc)
    ch_m, ck_m = fit(l_design, h_design, max(bump - dc, 0.005))
    span = bump + dc - max(bump - dc, 0.005)
    hip_dc = (ch_p - ch_m) / span
    knee_dc = (ck_p - ck_m) / span

    return ActivityTemplate(
        activity=activity, hip=ch, knee=ck,
        hip_dl=hip_dl, knee_dl=knee_dl, hip_dc=hip_dc, knee_dc=knee_dc,
        trunk0=spec["trunk_lean"], trunk_amp=0.012,
        design_l=l_target, design_bump=bump,
    )


# ---------------------------------------------------------------------------
# load distribution

ALPHA_RAMP = 0.10


def load_fraction(phi):
    """Foot-load fraction of one leg as a function of its local phase.

    Rises 0 to 1 over phase [-0.06, 0.04] (crossing the 0.6 stance
    threshold exactly at phase 0, the heel strike) and falls over
    [0.44, 0.54]; the two legs' fractions sum to one by construction.
    """
    u = np.mod(np.asarray(phi, dtype=float) - 0.94, 1.0)
    return np.where(
        u < ALPHA_RAMP, u / ALPHA_RAMP,
        np.where(u < 0.5, 1.0,
                 np.where(u < 0.5 + ALPHA_RAMP,
                          1.0 - (u - 0.5) / ALPHA_RAMP, 0.0)))


# ---------------------------------------------------------------------------
# stepped trajectory evaluator

@dataclass
class _StrideState:
    template: ActivityTemplate
    dl: float = 0.0
    dc: float = 0.0
    tau_amp: np.ndarray = field(default_factory=lambda: np.zeros(2))
    tau_phase: float = 0.0


@dataclass
class IntentSample:
    t: float
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_bp: float
    alpha: np.ndarray
    tau_pattern: np.ndarray
    phase_left: float          # global left phase in [0, 100)
    phase_right: float
    activity: str


class GaitTrajectory:
    """Continuous-time intent trajectory with per-stride parameter jitter.

    Stride boundaries advance an internal state machine; all queries must
    use non-decreasing times.  Profile updates (treadmill speed, step
    length) requested mid-run take effect at the next left heel strike.
    """

    def __init__(self, profile: SubjectProfile, plan, geom: LegGeometry = None,
                 rng=None, start_phase=0.85):
        """``plan`` is a list of (activity, n_strides) stages; the last stage
        repeats forever when the trajectory runs past it.  ``start_phase``
        places t=0 inside the lead-in cycle so the first heel strike is a
        visible load-fraction crossing rather than the stream's first
        sample.
        """
        self.profile = profile
        self.geom = geom or LegGeometry()
        self.rng = rng or np.random.default_rng(profile.rng_seed)
        self.plan = list(plan)
        if not self.plan:
            raise InvalidInputError("activity plan must have at least one stage")
        for act, n in self.plan:
            if act not in ACTIVITY_PATHS:
                raise InvalidInputError(f"unknown activity {act!r}")
            if n < 1:
                raise InvalidInputError("n_strides must be >= 1")
        self._templates = {}
        self._pending_profile = None
        self.heel_strikes = {"left": [], "right": []}
        #: activity of the stride starting at each logged heel strike
        self.stride_activities = {"left": [], "right": []}

        self._stride_index = 0          # cycle counter; cycle 0 is the lead-in
        self._cycle_dur = self._draw_duration()
        self._cycle_start = -float(start_phase) * self._cycle_dur
        self._right_rolled = False      # right boundary of this cycle done
        self._states = {
            "left": [self._draw_state(0), self._draw_state(0)],
            "right": [self._draw_state(0), self._draw_state(0)],
        }

    # -- stride bookkeeping --------------------------------------------------

    def template(self, activity) -> ActivityTemplate:
        key = (activity, self.profile)
        if key not in self._templates:
            self._templates[key] = build_activity_template(
                self.profile, activity, self.geom)
        return self._templates[key]

    def _activity_for_stride(self, idx):
        idx = max(idx - 1, 0)   # cycle 0 is the lead-in
        for act, n in self.plan:
            if idx < n:
                return act
            idx -= n
        return self.plan[-1][0]

    def _draw_duration(self):
        base = 1.0 / self.profile.cadence_hz
        j = float(np.clip(self.rng.normal(0.0, self.profile.stride_period_jitter),
                          -0.08, 0.08))
        return base * (1.0 + j)

    def _draw_state(self, stride_idx):
        tmpl = self.template(self._activity_for_stride(stride_idx))
        p = self.profile
        dl = float(self.rng.normal(0.0, p.stride_length_jitter * tmpl.design_l))
        dc = float(self.rng.normal(0.0, p.stride_clearance_jitter * tmpl.design_bump))
        dc = max(dc, -0.8 * tmpl.design_bump)
        tau_amp = self.rng.uniform(0.0, p.tau_assist_max, size=2)
        tau_phase = float(self.rng.uniform(0.0, 1.0))
        return _StrideState(tmpl, dl, dc, tau_amp, tau_phase)

    def request_profile(self, **changes):
        """Schedule profile changes (for example step_length_m or
        cadence_hz); applied at the next left heel strike."""
        self._pending_profile = replace(
            self._pending_profile or self.profile, **changes)

    def _advance_to(self, t):
        while True:
            mid = self._cycle_start + 0.5 * self._cycle_dur
            end = self._cycle_start + self._cycle_dur
            if not self._right_rolled and t >= mid:
                self._states["right"] = [self._states["right"][1],
                                         self._draw_state(self._stride_index)]
                if mid >= 0.0:
                    self.heel_strikes["right"].append(mid)
                    self.stride_activities["right"].append(
                        self._states["right"][1].template.activity)
                self._right_rolled = True
            elif t >= end:
                self._cycle_start = end
                self._stride_index += 1
                if self._pending_profile is not None:
                    self.profile = self._pending_profile
                    self._pending_profile = None
                self._cycle_dur = self._draw_duration()
                self._right_rolled = False
                self._states["left"] = [self._states["left"][1],
                                        self._draw_state(self._stride_index)]
                if self._cycle_start >= 0.0:
                    self.heel_strikes["left"].append(self._cycle_start)
                    self.stride_activities["left"].append(
                        self._states["left"][1].template.activity)
            else:
                break

    # -- evaluation ------------------------------------------------------------

    def _leg_joints(self, leg, local_phi, phi_rate):
        prev, cur = self._states[leg]
        w = _smoothstep(local_phi / BLEND_FRAC)
        dw = _smoothstep_d(local_phi / BLEND_FRAC) / BLEND_FRAC
        h_p, k_p, dh_p, dk_p = prev.template.joints(local_phi, prev.dl, prev.dc)
        h_c, k_c, dh_c, dk_c = cur.template.joints(local_phi, cur.dl, cur.dc)
        hip = (1 - w) * h_p + w * h_c
        knee = (1 - w) * k_p + w * k_c
        dhip = (1 - w) * dh_p + w * dh_c + dw * (h_c - h_p)
        dknee = (1 - w) * dk_p + w * dk_c + dw * (k_c - k_p)
        return hip, knee, dhip * phi_rate, dknee * phi_rate

    def sample(self, t) -> IntentSample:
        self._advance_to(t)
        phi_rate = 1.0 / self._cycle_dur
        phi_l = (t - self._cycle_start) * phi_rate
        phi_l = min(max(phi_l, 0.0), 1.0 - 1e-12)
        phi_r = phi_l + 0.5 if phi_l < 0.5 else phi_l - 0.5

        hip_l, knee_l, dhip_l, dknee_l = self._leg_joints("left", phi_l, phi_rate)
        hip_r, knee_r, dhip_r, dknee_r = self._leg_joints("right", phi_r, phi_rate)

        cur = self._states["left"][1]
        trunk, dtrunk = cur.template.trunk(phi_l)

        alpha_l = float(load_fraction(phi_l))
        alpha = np.array([alpha_l, 1.0 - alpha_l])

        tau = np.empty(4)
        for i, (leg, phi) in enumerate((("left", phi_l), ("right", phi_r))):
            prev, cur = self._states[leg]
            w = float(_smoothstep(phi / BLEND_FRAC))
            for j, (st, wt) in enumerate(((prev, 1 - w), (cur, w))):
                contrib_h = st.tau_amp[0] * np.sin(_TWO_PI * (phi + st.tau_phase))
                contrib_k = st.tau_amp[1] * np.sin(
                    _TWO_PI * (phi + st.tau_phase + 0.25))
                if j == 0:
                    tau[2 * i] = wt * contrib_h
                    tau[2 * i + 1] = wt * contrib_k
                else:
                    tau[2 * i] += wt * contrib_h
                    tau[2 * i + 1] += wt * contrib_k

        return IntentSample(
            t=t,
            theta=np.array([hip_l, knee_l, hip_r, knee_r], dtype=float),
            theta_dot=np.array([dhip_l, dknee_l, dhip_r, dknee_r], dtype=float),
            theta_bp=float(trunk),
            alpha=alpha,
            tau_pattern=tau,
            phase_left=100.0 * phi_l,
            phase_right=100.0 * phi_r,
            activity=cur.template.activity,
        )


# ---------------------------------------------------------------------------
# full-recording generation

@dataclass
class Recording:
    t: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_bp: np.ndarray
    tau_int: np.ndarray
    alpha: np.ndarray
    foot_rel: np.ndarray
    activity: np.ndarray
    subject_id: str = ""

    def __len__(self):
        return len(self.t)

    def window_matrix(self, channels):
        cols = {
            "theta_bp": self.theta_bp[:, None],
        }
        for stem, arr in (("theta", self.theta), ("theta_dot", self.theta_dot),
                          ("tau_int", self.tau_int), ("alpha", self.alpha),
                          ("foot_rel", self.foot_rel)):
            for i in range(arr.shape[1]):
                cols[f"{stem}_{i}"] = arr[:, i:i + 1]
        try:
            return np.hstack([cols[c] for c in channels])
        except KeyError as exc:
            raise InvalidInputError(f"unknown window channel {exc}") from exc


@dataclass
class GroundTruth:
    strides: list                 # StrideRecord with t_heelstrike/activity set
    hs_left: np.ndarray           # exact heel-strike times
    hs_right: np.ndarray


def generate_subject(profile: SubjectProfile, activities=ACTIVITIES,
                     n_strides=6, geom: LegGeometry = None,
                     sample_rate=kin.SAMPLE_RATE_HZ):
    """Synthesize one subject's recording plus exact ground truth.

    Activities run back to back (transition strides crossfade); strides
    without a closing heel strike are not part of the ground truth.
    """
    if n_strides < 1:
        raise InvalidInputError("n_strides must be >= 1")
    geom = geom or LegGeometry()
    plan = [(a, n_strides) for a in activities]
    traj = GaitTrajectory(profile, plan, geom)
    rng_noise = np.random.default_rng(profile.rng_seed + 777)

    total_strides = n_strides * len(activities)
    # sample until the closing heel strike of the last wanted stride
    dt = 1.0 / sample_rate
    samples = []
    t = 0.0
    while len(traj.heel_strikes["left"]) < total_strides + 1:
        samples.append(traj.sample(t))
        t += dt
    n = len(samples)

    rec = Recording(
        t=np.array([s.t for s in samples]),
        theta=np.stack([s.theta for s in samples]),
        theta_dot=np.stack([s.theta_dot for s in samples]),
        theta_bp=np.array([s.theta_bp for s in samples]),
        tau_int=np.stack([s.tau_pattern for s in samples]),
        alpha=np.stack([s.alpha for s in samples]),
        foot_rel=np.zeros((n, 4)),
        activity=np.array([s.activity for s in samples], dtype=object),
        subject_id=profile.subject_id,
    )
    rec.theta += rng_noise.normal(0.0, profile.noise_std_rad, rec.theta.shape)
    rec.theta_dot += rng_noise.normal(0.0, 10.0 * profile.noise_std_rad,
                                      rec.theta_dot.shape)
    rec.tau_int += rng_noise.normal(0.0, 0.05, rec.tau_int.shape)

    tracker = kin.StanceTracker("left")
    for i in range(n):
        side = tracker.update(rec.alpha[i, 0])
        rec.foot_rel[i] = kin.forward_kinematics(
            rec.theta[i], rec.theta_bp[i], geom, side)

    hs_l = np.asarray(traj.heel_strikes["left"])
    hs_r = np.asarray(traj.heel_strikes["right"])
    hs_l = hs_l[hs_l <= rec.t[-1]]
    hs_r = hs_r[hs_r <= rec.t[-1]]

    strides = []
    for leg, hs, cols in (("left", hs_l, (0, 1)), ("right", hs_r, (2, 3))):
        xz = rec.foot_rel[:, cols]
        acts = traj.stride_activities[leg]
        for k in range(len(hs) - 1):
            t0, t1 = hs[k], hs[k + 1]
            path = kin.resample_stride(rec.t, xz, t0, t1)
            dur = t1 - t0
            h, l, c, v = kin.extract_stride_features(path, dur)
            strides.append(kin.StrideRecord(
                leg, path, dur, h, l, c, v, t_heelstrike=t0, activity=acts[k]))
    return rec, GroundTruth(strides=strides, hs_left=hs_l, hs_right=hs_r)
