"""Planar gait kinematics: forward kinematics, stride segmentation,
gait-phase encoding, per-stride feature extraction, normalization and
windowing.

Conventions used throughout the package:

* joint vector order is ``[hip_L, knee_L, hip_R, knee_R]``, flexion positive;
* trunk pitch ``theta_bp`` is measured from vertical, forward positive;
* foot positions are sagittal (x forward, z up) and, unless stated
  otherwise, expressed relative to the current stance foot;
* the gait phase of a leg runs 0..100 between consecutive heel strikes
  of that leg.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HIP_L, KNEE_L, HIP_R, KNEE_R = 0, 1, 2, 3
LEFT, RIGHT = "left", "right"

#: names of the 12 gait-feature channels, in vector order
FEATURE_NAMES = (
    "cos_gp_L", "cos_gp_R", "sin_gp_L", "sin_gp_R",
    "h_L", "h_R", "l_L", "l_R", "c_L", "c_R", "v_L", "v_R",
)

#: window geometry: 300 ms of 100 Hz rows, advancing 50 ms per window
SAMPLE_RATE_HZ = 100.0
WINDOW_ROWS = 30
WINDOW_STEP = 5

#: stance hysteresis thresholds on the foot-load fraction
STANCE_HIGH = 0.6
STANCE_LOW = 0.4
MIN_STRIDE_S = 0.3

#: default window channel set (15 channels): theta(4), theta_bp,
#: tau_int(4), alpha(2), foot_rel(4).  theta_dot may be re-enabled via
#: config; every list entry names a Recording column.
DEFAULT_WINDOW_CHANNELS = (
    "theta_0", "theta_1", "theta_2", "theta_3",
    "theta_bp",
    "tau_int_0", "tau_int_1", "tau_int_2", "tau_int_3",
    "alpha_0", "alpha_1",
    "foot_rel_0", "foot_rel_1", "foot_rel_2", "foot_rel_3",
)


class InvalidInputError(ValueError):
    """Raised when an operation receives arguments outside its domain."""


class FormatVersionError(InvalidInputError):
    """A persisted file declares an unsupported format version."""


@dataclass(frozen=True)
class LegGeometry:
    """Planar two-segment leg; lengths in metres."""

    thigh_len: float = 0.44
    shank_len: float = 0.565

    def __post_init__(self):
        if not (self.thigh_len > 0 and self.shank_len > 0):
            raise InvalidInputError("segment lengths must be strictly positive")

    @property
    def total_len(self) -> float:
        return self.thigh_len + self.shank_len


@dataclass(frozen=True)
class RobotState:
    """One sensor sample.

    ``alpha`` are the left/right foot-load fractions (sum to one);
    ``foot_rel`` is ``(x_l, z_l, x_r, z_r)`` relative to the stance foot.
    """

    t: float
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_bp: float
    tau_int: np.ndarray
    alpha: np.ndarray
    foot_rel: np.ndarray

    def validate(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.shape != (2,) or np.any(a < -1e-9) or np.any(a > 1 + 1e-9):
            raise InvalidInputError("alpha components must lie in [0, 1]")
        if abs(a.sum() - 1.0) > 1e-9:
            raise InvalidInputError("alpha must sum to 1")
        fr = np.asarray(self.foot_rel, dtype=float)
        if fr.shape != (4,):
            raise InvalidInputError("foot_rel must have 4 components")
        return self


@dataclass(frozen=True)
class StrideRecord:
    """One stride of one leg, with the foot path resampled to 101 points."""

    leg: str
    samples: np.ndarray      # (101, 2) foot (x, z) relative to stance foot
    duration: float
    h: float
    l: float
    c: float
    v: float
    t_heelstrike: float = 0.0
    activity: str = ""

    def recompute_features(self):
        return extract_stride_features(self.samples, self.duration)


@dataclass
class NormStats:
    """Per-channel affine map ``x -> (x - offset) / scale`` onto [-1, 1]."""

    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if np.any(self.scale <= 0):
            raise InvalidInputError("normalization scales must be positive")

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.offset) / self.scale

    def denormalize(self, x):
        return np.asarray(x, dtype=float) * self.scale + self.offset

    def to_dict(self):
        return {"offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["offset"]), np.asarray(d["scale"]))


# ---------------------------------------------------------------------------
# forward kinematics

def foot_positions_pelvis(theta, theta_bp, geom: LegGeometry):
    """Sagittal foot positions of both legs relative to the pelvis.

    Absolute thigh angle (from vertical-down) is trunk pitch + hip flexion;
    the shank angle is the thigh angle minus knee flexion.  Returns
    ``(x_l, z_l, x_r, z_r)``.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != 4 or not np.all(np.isfinite(theta)) or not np.isfinite(theta_bp):
        raise InvalidInputError("theta must be a finite 4-vector")
    out = np.empty(theta.shape[:-1] + (4,))
    for side, (hip_i, knee_i) in enumerate(((HIP_L, KNEE_L), (HIP_R, KNEE_R))):
        phi_t = theta_bp + theta[..., hip_i]
        phi_s = phi_t - theta[..., knee_i]
        out[..., 2 * side] = geom.thigh_len * np.sin(phi_t) + geom.shank_len * np.sin(phi_s)
        out[..., 2 * side + 1] = -geom.thigh_len * np.cos(phi_t) - geom.shank_len * np.cos(phi_s)
    return out


def forward_kinematics(theta, theta_bp, geom: LegGeometry, stance: str):
    """Foot positions of both feet relative to the stance foot.

    The stance foot maps to exactly (0, 0).
    """
    if stance not in (LEFT, RIGHT):
        raise InvalidInputError(f"stance must be 'left' or 'right', got {stance!r}")
    pelvis = foot_positions_pelvis(theta, theta_bp, geom)
    out = pelvis.copy()
    ref = 0 if stance == LEFT else 2
    out[..., 0] -= pelvis[..., ref]
    out[..., 1] -= pelvis[..., ref + 1]
    out[..., 2] -= pelvis[..., ref]
    out[..., 3] -= pelvis[..., ref + 1]
    out[..., ref] = 0.0
    out[..., ref + 1] = 0.0
    return out


def inverse_leg_kinematics(x, z, theta_bp, geom: LegGeometry):
    """Hip and knee flexion placing one foot at pelvis-relative (x, z).

    Targets beyond the leg's reach are clamped to a nearly straight knee.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    lt, ls = geom.thigh_len, geom.shank_len
    r2 = x * x + z * z
    cos_k = (r2 - lt * lt - ls * ls) / (2.0 * lt * ls)
    knee = np.arccos(np.clip(cos_k, -1.0, 1.0))
    gamma = np.arctan2(x, -z)
    beta = np.arctan2(ls * np.sin(knee), lt + ls * np.cos(knee))
    hip = gamma + beta - theta_bp
    return hip, knee


# ---------------------------------------------------------------------------
# gait-phase encoding

def encode_phase(gp):
    """Polar representation of a gait-phase percentage in [0, 100)."""
    gp = np.asarray(gp, dtype=float)
    if np.any(gp < 0) or np.any(gp >= 100):
        raise InvalidInputError("gait phase must lie in [0, 100)")
    ang = 2.0 * np.pi * gp / 100.0
    return np.cos(ang), np.sin(ang)


def decode_phase(cos_gp, sin_gp):
    """Inverse of :func:`encode_phase`; inputs are renormalized first."""
    cos_gp = np.asarray(cos_gp, dtype=float)
    sin_gp = np.asarray(sin_gp, dtype=float)
    norm = np.hypot(cos_gp, sin_gp)
    if np.any(norm == 0):
        raise InvalidInputError("phase vector must be nonzero")
    gp = np.arctan2(sin_gp / norm, cos_gp / norm) * (100.0 / (2.0 * np.pi))
    gp = np.mod(gp, 100.0)
    # atan2 of an exact half turn can round to gp=100.0; fold it back
    return np.where(gp >= 100.0, gp - 100.0, gp)


# ---------------------------------------------------------------------------
# stride segmentation

@dataclass
class StanceTracker:
    """Hysteresis tracker of the stance side from the left load fraction.

    Switches to a side when that foot's load exceeds ``STANCE_HIGH`` and
    holds until it drops below ``STANCE_LOW``.
    """

    side: str = LEFT

    def update(self, alpha_l: float) -> str:
        if self.side == LEFT:
            if alpha_l < STANCE_LOW:
                self.side = RIGHT
        else:
            if alpha_l > STANCE_HIGH:
                self.side = LEFT
        return self.side


def detect_stance_and_strides(t, alpha, min_stride_s: float = MIN_STRIDE_S):
    """Heel-strike times per leg plus a per-sample stance-side label.

    A heel strike of a leg is the sample where its load fraction crosses
    ``STANCE_HIGH`` upward.  Strides shorter than ``min_stride_s`` are
    merged into their successor (the spurious boundary is dropped).

    Returns ``(hs_left, hs_right, stance)`` where the first two are arrays
    of sample indices and ``stance`` is an array of 'left'/'right' labels.
    """
    t = np.asarray(t, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 2 or alpha.shape[1] != 2:
        raise InvalidInputError("alpha stream must have shape (n, 2)")
    n = len(t)
    hs = {LEFT: [], RIGHT: []}
    for col, leg in ((0, LEFT), (1, RIGHT)):
        a = alpha[:, col]
        up = np.flatnonzero((a[1:] > STANCE_HIGH) & (a[:-1] <= STANCE_HIGH)) + 1
        keep = []
        for i in up:
            if keep and t[i] - t[keep[-1]] < min_stride_s:
                continue
            keep.append(int(i))
        hs[leg] = np.asarray(keep, dtype=int)

    tracker = StanceTracker(LEFT if n and alpha[0, 0] >= alpha[0, 1] else RIGHT)
    stance = np.empty(n, dtype=object)
    for i in range(n):
        stance[i] = tracker.update(alpha[i, 0])
    return hs[LEFT], hs[RIGHT], stance


def extract_stride_features(samples, duration):
    """The four landing features of a resampled stride path.

    ``h`` is the final height, ``l`` the final forward position, ``c`` the
    maximum height reached and ``v = l / duration``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 2 or samples.shape[0] != 101:
        raise InvalidInputError("stride path must have shape (101, 2)")
    if not duration > 0:
        raise InvalidInputError("stride duration must be positive")
    h = samples[100, 1]
    l = samples[100, 0]
    c = samples[:, 1].max()
    v = l / duration
    return h, l, c, v


def resample_stride(t, xz, t0, t1, n_points: int = 101):
    """Linear-in-normalized-time resampling of a foot path over [t0, t1].

    Only source samples inside [t0, t1] are used: the foot_rel stream jumps
    when the stance reference switches at a heel strike, so samples past t1
    (already re-referenced to the newly landed foot) must not bleed into
    the landing pose.  The edges clamp to the nearest inside sample.
    """
    inside = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if inside.sum() < 2:
        raise InvalidInputError("stride interval contains fewer than 2 samples")
    ts = t[inside]
    sub = xz[inside]
    grid = np.linspace(t0, t1, n_points)
    out = np.empty((n_points, 2))
    out[:, 0] = np.interp(grid, ts, sub[:, 0])
    out[:, 1] = np.interp(grid, ts, sub[:, 1])
    return out


def build_stride_records(t, foot_rel, hs_left, hs_right, activity=None):
    """Cut the per-leg foot paths at heel strikes into StrideRecords.

    The sample at the closing heel strike is excluded from the path source:
    its foot_rel is already re-referenced to the newly landed foot, which
    would zero out the landing pose.
    """
    t = np.asarray(t, dtype=float)
    foot_rel = np.asarray(foot_rel, dtype=float)
    records = []
    for leg, hs, cols in ((LEFT, hs_left, (0, 1)), (RIGHT, hs_right, (2, 3))):
        xz = foot_rel[:, cols]
        for k in range(len(hs) - 1):
            i0, i1 = hs[k], hs[k + 1]
            dur = t[i1] - t[i0]
            path = resample_stride(t[i0:i1], xz[i0:i1], t[i0], t[i1])
            h, l, c, v = extract_stride_features(path, dur)
            act = activity[max(i1 - 1, 0)] if activity is not None else ""
            records.append(StrideRecord(leg, path, dur, h, l, c, v,
                                        t_heelstrike=t[i0], activity=act))
    return records


# ---------------------------------------------------------------------------
# windows and normalization

def build_windows(stream, rows: int = WINDOW_ROWS, step: int = WINDOW_STEP):
    """Sliding windows over a (n, d) stream: ``rows`` rows advancing ``step``.

    Returns an (m, rows, d) view-stack; m = floor((n - rows)/step) + 1, or
    an empty array when the stream is too short.
    """
    stream = np.asarray(stream)
    n = stream.shape[0]
    if n < rows:
        return np.empty((0, rows) + stream.shape[1:], dtype=stream.dtype)
    m = (n - rows) // step + 1
    idx = np.arange(rows)[None, :] + step * np.arange(m)[:, None]
    return stream[idx]


def fit_norm_stats(data, axis=0) -> NormStats:
    """Min-max affine stats mapping each channel onto [-1, 1].

    Channels with zero range get offset = value and scale = 1.
    """
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        raise InvalidInputError("cannot fit normalization on an empty dataset")
    lo = data.min(axis=axis)
    hi = data.max(axis=axis)
    offset = 0.5 * (hi + lo)
    scale = 0.5 * (hi - lo)
    scale = np.where(scale <= 0, 1.0, scale)
    return NormStats(offset, scale)
