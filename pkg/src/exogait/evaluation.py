"""Offline evaluation and plot-data export.

Produces the evaluation report (feature errors on held-out subjects,
command-stage regression accuracy, interaction-power statistics from
closed-loop session logs) and the plot-ready tables: feature traces over
time, and per-stride kinematics/power grouped by feature bins.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from . import estimator as est
from . import kinematics as kin
from .bundle import ModelBundle
from .data import windows_and_targets, kinematics_pairs
from .kinematics import FEATURE_NAMES, InvalidInputError
from .pipeline import _labelled
from .runtime.log import SessionLog

REPORT_VERSION = 1

SPATIAL_FEATURES = ("h_L", "h_R", "l_L", "l_R", "c_L", "c_R", "v_L", "v_R")


@dataclass
class EvalReport:
    feature_mae: dict            # name -> {"mae": float, "std": float}
    phase_mae_percent: float
    kin_r2: dict                 # output name -> float
    kin_r2_mean: float
    power: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def validate(self):
        for name, row in self.feature_mae.items():
            if row["mae"] < 0:
                raise InvalidInputError(f"negative MAE for {name}")
        for name, r2 in self.kin_r2.items():
            if r2 > 1.0 + 1e-9:
                raise InvalidInputError(f"R^2 above 1 for {name}")
        return self

    def to_yaml(self, path):
        body = {"report_version": REPORT_VERSION}
        body.update(asdict(self))
        with open(path, "w") as fh:
            yaml.safe_dump(body, fh, sort_keys=False)

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if raw.get("report_version") != REPORT_VERSION:
            raise InvalidInputError(f"{path}: unsupported report version")
        raw.pop("report_version")
        return cls(**raw)


def _phase_error_percent(mu, targets):
    """Mean absolute circular phase error (percent of cycle) over both legs."""
    errs = []
    for ci, si in est.PHASE_PAIRS:
        got = kin.decode_phase(mu[:, ci], mu[:, si])
        want = kin.decode_phase(targets[:, ci], targets[:, si])
        diff = np.abs(got - want)
        errs.append(np.minimum(diff, 100.0 - diff))
    return float(np.mean(errs))


def feature_errors(bundle: ModelBundle, val_cohort):
    """Held-out per-feature absolute errors of the window ensemble."""
    per_feature = {name: [] for name in SPATIAL_FEATURES}
    phase_errs = []
    for sid, lab in _labelled(val_cohort).items():
        w, targ, _ = windows_and_targets(lab, bundle.fem.channels,
                                         bundle.fem.in_stats)
        if len(w) == 0:
            continue
        mu, _ = est.fem_infer_batch(bundle.fem, w)
        for name in SPATIAL_FEATURES:
            i = FEATURE_NAMES.index(name)
            per_feature[name].append(np.abs(mu[:, i] - targ[:, i]))
        phase_errs.append(_phase_error_percent(mu, targ))
    if not phase_errs:
        raise InvalidInputError("validation cohort produced no windows")
    mae = {}
    for name, chunks in per_feature.items():
        errs = np.concatenate(chunks)
        mae[name] = {"mae": float(errs.mean()), "std": float(errs.std())}
    return mae, float(np.mean(phase_errs))


def cpm_r2(bundle: ModelBundle, val_cohort):
    """Ensemble-mean regression accuracy on ground-truth features."""
    preds, actual = [], []
    for sid, lab in _labelled(val_cohort).items():
        f, k8, _ = kinematics_pairs(lab)
        if len(f) == 0:
            continue
        vals = bundle.cpm.member_outputs(bundle.cpm.in_stats.normalize(f))
        preds.append(bundle.cpm.out_stats.denormalize(vals.mean(axis=0).T))
        actual.append(k8)
    pred = np.concatenate(preds)
    act = np.concatenate(actual)
    ss_res = ((pred - act) ** 2).sum(axis=0)
    ss_tot = ((act - act.mean(axis=0)) ** 2).sum(axis=0)
    r2 = 1.0 - ss_res / np.maximum(ss_tot, 1e-12)
    named = {name: float(r2[i])
             for i, name in enumerate(est.KINEMATICS_NAMES)}
    return named, float(r2.mean())


# ---------------------------------------------------------------------------
# session-log analysis

JOINT_NAMES = ("hip_L", "knee_L", "hip_R", "knee_R")


def power_stats(log: SessionLog, phase_bins=10, feature_bins=4):
    """Interaction power split by joint, gait-phase bin and feature bin."""
    power = log.mat([f"power_{i}" for i in range(4)])
    out = {"overall": {}}
    for j, name in enumerate(JOINT_NAMES):
        out["overall"][name] = {"mean": float(power[:, j].mean()),
                                "std": float(power[:, j].std())}
    out["hip_mean"] = float(power[:, [0, 2]].mean())
    out["knee_mean"] = float(power[:, [1, 3]].mean())

    cos_l = log.col("applied_mu_cos_gp_L")
    sin_l = log.col("applied_mu_sin_gp_L")
    ok = (cos_l ** 2 + sin_l ** 2) > 1e-9
    by_phase = {}
    if ok.any():
        gp = kin.decode_phase(cos_l[ok], sin_l[ok])
        edges = np.linspace(0, 100, phase_bins + 1)
        which = np.clip(np.digitize(gp, edges) - 1, 0, phase_bins - 1)
        for b in range(phase_bins):
            sel = which == b
            if not sel.any():
                continue
            by_phase[f"{edges[b]:.0f}-{edges[b + 1]:.0f}"] = {
                name: float(power[ok][sel, j].mean())
                for j, name in enumerate(JOINT_NAMES)}
    out["by_phase"] = by_phase

    by_feature = {}
    for feat in ("c_L", "l_L", "v_L", "h_L"):
        vals = log.col(f"applied_mu_{feat}")
        if np.ptp(vals) < 1e-9:
            continue
        edges = np.quantile(vals, np.linspace(0, 1, feature_bins + 1))
        which = np.clip(np.digitize(vals, edges) - 1, 0, feature_bins - 1)
        rows = {}
        for b in range(feature_bins):
            sel = which == b
            if not sel.any():
                continue
            rows[f"bin{b}"] = {
                "feature_mean": float(vals[sel].mean()),
                "hip_power": float(power[sel][:, [0, 2]].mean()),
                "knee_power": float(power[sel][:, [1, 3]].mean()),
            }
        by_feature[feat] = rows
    out["by_feature"] = by_feature
    return out


def realized_strides(log: SessionLog):
    """Stride records recomputed from the plant states in a session log."""
    t = log.t
    alpha = log.mat(["alpha_0", "alpha_1"])
    foot_rel = log.mat([f"foot_rel_{i}" for i in range(4)])
    hs_l, hs_r, _ = kin.detect_stance_and_strides(t, alpha)
    segs = log.segments()
    return kin.build_stride_records(t, foot_rel, hs_l, hs_r, segs)


def evaluate(bundle: ModelBundle, val_cohort, session_log: SessionLog = None,
             meta=None) -> EvalReport:
    mae, phase_mae = feature_errors(bundle, val_cohort)
    r2, r2_mean = cpm_r2(bundle, val_cohort)
    power = power_stats(session_log) if session_log is not None else {}
    return EvalReport(feature_mae=mae, phase_mae_percent=phase_mae,
                      kin_r2=r2, kin_r2_mean=r2_mean, power=power,
                      meta=dict(meta or {})).validate()


# ---------------------------------------------------------------------------
# plot-data export

def export_feature_traces(bundle: ModelBundle, cohort, path):
    """Per-window time series: ground truth vs predicted feature means and
    spreads for every subject in ``cohort`` (feature-trace figure data)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"#export=feature_traces v{REPORT_VERSION}"])
        header = ["subject", "t"]
        for n in FEATURE_NAMES:
            header += [f"gt_{n}", f"mu_{n}", f"sigma_{n}"]
        w.writerow(header)
        for sid, lab in _labelled(cohort).items():
            wins, targ, _ = windows_and_targets(lab, bundle.fem.channels,
                                                bundle.fem.in_stats)
            if len(wins) == 0:
                continue
            mu, sd = est.fem_infer_batch(bundle.fem, wins)
            all_ends = kin.WINDOW_ROWS - 1 + kin.WINDOW_STEP * np.arange(
                (len(lab.rec) - kin.WINDOW_ROWS) // kin.WINDOW_STEP + 1)
            kept = all_ends[lab.valid[all_ends]]
            t_end = lab.rec.t[kept]
            for i in range(len(mu)):
                row = [sid, f"{t_end[i]:.3f}"]
                for j in range(len(FEATURE_NAMES)):
                    row += [f"{targ[i, j]:.6g}", f"{mu[i, j]:.6g}",
                            f"{sd[i, j]:.6g}"]
                w.writerow(row)


def export_stride_kinematics(log: SessionLog, path, n_phase=51):
    """Per-stride commanded kinematics and power on a phase grid, with the
    stride's feature values for binning (kinematics/power figure data)."""
    t = log.t
    theta_d = log.mat([f"theta_d_{i}" for i in range(4)])
    power = log.mat([f"power_{i}" for i in range(4)])
    feats = {n: log.col(f"applied_mu_{n}") for n in SPATIAL_FEATURES}
    strides = realized_strides(log)
    grid = np.linspace(0, 100, n_phase)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"#export=stride_kinematics v{REPORT_VERSION}"])
        header = ["stride", "leg", "segment", "phase"]
        header += [f"theta_d_{n}" for n in JOINT_NAMES]
        header += [f"power_{n}" for n in JOINT_NAMES]
        header += list(SPATIAL_FEATURES)
        w.writerow(header)
        for si, s in enumerate(strides):
            t0, t1 = s.t_heelstrike, s.t_heelstrike + s.duration
            sel = (t >= t0) & (t <= t1)
            if sel.sum() < 4:
                continue
            ts = t[sel]
            phase_t = 100.0 * (ts - t0) / (t1 - t0)
            fvals = [float(np.mean(feats[n][sel])) for n in SPATIAL_FEATURES]
            for p in grid:
                row = [si, s.leg, s.activity, f"{p:.1f}"]
                for j in range(4):
                    row.append(f"{np.interp(p, phase_t, theta_d[sel, j]):.6g}")
                for j in range(4):
                    row.append(f"{np.interp(p, phase_t, power[sel, j]):.6g}")
                row += [f"{v:.6g}" for v in fvals]
                w.writerow(row)
