"""Dataset files and training-matrix assembly.

A recording is a comma-separated table at 100 Hz with columns
``t, theta_0..3, theta_dot_0..3, theta_bp, tau_int_0..3, alpha_0..1,
foot_rel_0..3, activity_label`` (SI units).  Ground truth travels in a
sidecar table ``stride_id, leg, t_heelstrike, h, l, c, v, dt,
activity_label``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kinematics as kin
from .kinematics import FEATURE_NAMES, InvalidInputError
from .synth import Recording, GroundTruth

DATASET_VERSION = 1

_COLUMNS = (
    ["t"]
    + [f"theta_{i}" for i in range(4)]
    + [f"theta_dot_{i}" for i in range(4)]
    + ["theta_bp"]
    + [f"tau_int_{i}" for i in range(4)]
    + [f"alpha_{i}" for i in range(2)]
    + [f"foot_rel_{i}" for i in range(4)]
    + ["activity_label"]
)


def write_recording(rec: Recording, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_COLUMNS)
        for i in range(len(rec)):
            w.writerow(
                [f"{rec.t[i]:.6f}"]
                + [f"{v:.9g}" for v in rec.theta[i]]
                + [f"{v:.9g}" for v in rec.theta_dot[i]]
                + [f"{rec.theta_bp[i]:.9g}"]
                + [f"{v:.9g}" for v in rec.tau_int[i]]
                + [f"{v:.9g}" for v in rec.alpha[i]]
                + [f"{v:.9g}" for v in rec.foot_rel[i]]
                + [rec.activity[i]])


def read_recording(path, subject_id="") -> Recording:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != _COLUMNS:
            raise InvalidInputError(f"{path}: unexpected dataset columns")
        rows = list(r)
    if not rows:
        raise InvalidInputError(f"{path}: empty dataset")
    num = np.array([row[:-1] for row in rows], dtype=float)
    return Recording(
        t=num[:, 0],
        theta=num[:, 1:5],
        theta_dot=num[:, 5:9],
        theta_bp=num[:, 9],
        tau_int=num[:, 10:14],
        alpha=num[:, 14:16],
        foot_rel=num[:, 16:20],
        activity=np.array([row[-1] for row in rows], dtype=object),
        subject_id=subject_id,
    )


def write_ground_truth(gt: GroundTruth, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stride_id", "leg", "t_heelstrike", "h", "l", "c", "v",
                    "dt", "activity_label"])
        for i, s in enumerate(sorted(gt.strides, key=lambda s: (s.t_heelstrike, s.leg))):
            w.writerow([i, s.leg, f"{s.t_heelstrike:.6f}", f"{s.h:.9g}",
                        f"{s.l:.9g}", f"{s.c:.9g}", f"{s.v:.9g}",
                        f"{s.duration:.9g}", s.activity])


def read_ground_truth(path):
    """Stride rows as a list of dicts (paths are not persisted)."""
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        rows = []
        for row in r:
            rows.append({
                "stride_id": int(row["stride_id"]),
                "leg": row["leg"],
                "t_heelstrike": float(row["t_heelstrike"]),
                "h": float(row["h"]), "l": float(row["l"]),
                "c": float(row["c"]), "v": float(row["v"]),
                "dt": float(row["dt"]),
                "activity": row["activity_label"],
            })
    return rows


# ---------------------------------------------------------------------------
# per-sample targets

@dataclass
class LabelledRecording:
    """A recording with per-sample gait-feature targets.

    ``features[i]`` is the 12-vector target at sample i (phase encoding of
    both legs plus the landing features of each leg's stride in progress);
    ``valid[i]`` is False where either leg has no enclosing complete stride.
    """

    rec: Recording
    features: np.ndarray
    valid: np.ndarray
    activity: np.ndarray

    def __len__(self):
        return len(self.rec)


def _per_leg_targets(t, rows):
    """(gp, h/l/c/v, valid) arrays for one leg from its stride rows."""
    n = len(t)
    gp = np.zeros(n)
    feats = np.zeros((n, 4))
    valid = np.zeros(n, dtype=bool)
    for r in rows:
        t0 = r["t_heelstrike"]
        t1 = t0 + r["dt"]
        i0 = np.searchsorted(t, t0, side="left")
        i1 = np.searchsorted(t, t1, side="left")
        sl = slice(i0, i1)
        gp[sl] = 100.0 * (t[sl] - t0) / (t1 - t0)
        feats[sl] = (r["h"], r["l"], r["c"], r["v"])
        valid[sl] = True
    return np.clip(gp, 0.0, 100.0 - 1e-9), feats, valid


def label_recording(rec: Recording, strides) -> LabelledRecording:
    """Attach per-sample 12-feature targets from stride ground truth.

    ``strides`` may be StrideRecord objects or dict rows from
    :func:`read_ground_truth`.  The target during a stride is that stride's
    landing feature set, so early samples must predict the eventual landing.
    """
    rows = []
    for s in strides:
        if isinstance(s, kin.StrideRecord):
            rows.append({"leg": s.leg, "t_heelstrike": s.t_heelstrike,
                         "dt": s.duration, "h": s.h, "l": s.l, "c": s.c,
                         "v": s.v})
        else:
            rows.append(s)
    out = {}
    for leg in ("left", "right"):
        leg_rows = sorted((r for r in rows if r["leg"] == leg),
                          key=lambda r: r["t_heelstrike"])
        out[leg] = _per_leg_targets(rec.t, leg_rows)

    gp_l, f_l, v_l = out["left"]
    gp_r, f_r, v_r = out["right"]
    cos_l, sin_l = kin.encode_phase(gp_l)
    cos_r, sin_r = kin.encode_phase(gp_r)
    feats = np.column_stack([
        cos_l, cos_r, sin_l, sin_r,
        f_l[:, 0], f_r[:, 0],   # h
        f_l[:, 1], f_r[:, 1],   # l
        f_l[:, 2], f_r[:, 2],   # c
        f_l[:, 3], f_r[:, 3],   # v
    ])
    assert feats.shape[1] == len(FEATURE_NAMES)
    return LabelledRecording(rec=rec, features=feats, valid=v_l & v_r,
                             activity=rec.activity)


def windows_and_targets(lab: LabelledRecording, channels, stats=None):
    """Normalized windows plus their end-sample feature targets.

    Returns ``(windows, targets, activities)``; windows whose end sample
    has no valid target are dropped.  ``stats`` normalizes the window
    channels when given.
    """
    mat = lab.rec.window_matrix(channels)
    if stats is not None:
        mat = stats.normalize(mat)
    wins = kin.build_windows(mat)
    if wins.shape[0] == 0:
        return (np.empty((0, kin.WINDOW_ROWS, len(channels))),
                np.empty((0, len(FEATURE_NAMES))), np.empty(0, dtype=object))
    ends = kin.WINDOW_ROWS - 1 + kin.WINDOW_STEP * np.arange(wins.shape[0])
    keep = lab.valid[ends]
    return wins[keep], lab.features[ends[keep]], lab.activity[ends[keep]]


def kinematics_pairs(lab: LabelledRecording):
    """(features, joint kinematics, activity) rows for regressor training."""
    keep = lab.valid
    kin8 = np.hstack([lab.rec.theta, lab.rec.theta_dot])
    return lab.features[keep], kin8[keep], lab.activity[keep]
