"""End-to-end orchestration: synthesize a cohort, train both ensemble
stages, calibrate the uncertainty ceiling and assemble a model bundle."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import data as dataio
from . import estimator as est
from . import impedance as imp
from . import synth
from .bundle import ModelBundle
from .config import StackConfig, ImpedanceConfig
from .data import label_recording, windows_and_targets, kinematics_pairs
from .kinematics import FEATURE_NAMES


def cohort_profiles(cfg: StackConfig, seed=0):
    profiles = synth.default_cohort(cfg.cohort.n_subjects, base_seed=1000 + seed)
    n_train = cfg.cohort.n_subjects - cfg.cohort.n_validation
    return profiles[:n_train], profiles[n_train:]


def generate_cohort(cfg: StackConfig, seed=0, out_dir=None):
    """Synthesize all subjects; optionally write dataset + sidecar files.

    Returns ``(train, val)`` dicts mapping subject id to
    (recording, ground truth).
    """
    train_profiles, val_profiles = cohort_profiles(cfg, seed)
    out = {}
    for profile in train_profiles + val_profiles:
        rec, gt = synth.generate_subject(
            profile, activities=cfg.cohort.activities,
            n_strides=cfg.cohort.strides_per_activity)
        out[profile.subject_id] = (rec, gt)
        if out_dir is not None:
            root = Path(out_dir)
            root.mkdir(parents=True, exist_ok=True)
            dataio.write_recording(rec, root / f"{profile.subject_id}.csv")
            dataio.write_ground_truth(gt, root / f"{profile.subject_id}_strides.csv")
    train_ids = [p.subject_id for p in train_profiles]
    val_ids = [p.subject_id for p in val_profiles]
    return ({s: out[s] for s in train_ids}, {s: out[s] for s in val_ids})


def load_cohort_dir(path, n_validation):
    """Read a generated cohort directory back into (train, val) dicts."""
    root = Path(path)
    subjects = sorted(p.stem for p in root.glob("*.csv")
                      if not p.stem.endswith("_strides"))
    if not subjects:
        raise FileNotFoundError(f"no dataset files under {path}")
    out = {}
    for s in subjects:
        rec = dataio.read_recording(root / f"{s}.csv", subject_id=s)
        gt = dataio.read_ground_truth(root / f"{s}_strides.csv")
        out[s] = (rec, gt)
    train_ids = subjects[:len(subjects) - n_validation]
    val_ids = subjects[len(subjects) - n_validation:]
    return ({s: out[s] for s in train_ids}, {s: out[s] for s in val_ids})


def _labelled(cohort):
    out = {}
    for sid, (rec, gt) in cohort.items():
        strides = gt.strides if hasattr(gt, "strides") else gt
        out[sid] = label_recording(rec, strides)
    return out


def train_stack(train_cohort, val_cohort, cfg: StackConfig, seed=0,
                n_jobs=1, progress=None) -> ModelBundle:
    """Train both stages on the training subjects and calibrate the
    uncertainty ceiling on the held-out validation subjects."""
    def say(msg):
        if progress:
            progress(msg)

    t0 = time.perf_counter()
    channels = tuple(cfg.fem.channels)
    train_lab = _labelled(train_cohort)
    val_lab = _labelled(val_cohort)

    wins_by, targ_by = {}, {}
    for sid, lab in train_lab.items():
        w, t, _ = windows_and_targets(lab, channels)
        wins_by[sid], targ_by[sid] = w, t
    say(f"windows ready ({sum(len(w) for w in wins_by.values())} train) "
        f"[{time.perf_counter() - t0:.1f}s]")

    fem = est.train_fem(wins_by, targ_by, channels, cfg.train, cfg.ensemble,
                        cfg.fem, n_jobs=n_jobs)
    say(f"window ensemble trained [{time.perf_counter() - t0:.1f}s]")

    feats_by, kin_by = {}, {}
    aug_rng = np.random.default_rng(seed + 17)
    for sid, lab in train_lab.items():
        f, k, acts = kinematics_pairs(lab)
        n_new = int(cfg.ensemble.augment_fraction * len(f))
        f, k, _ = est.augment(f, k, acts, n_new, aug_rng)
        feats_by[sid], kin_by[sid] = f, k
    cpm = est.train_cpm(feats_by, kin_by, cfg.train, cfg.ensemble,
                        cfg.cpm, n_jobs=n_jobs)
    say(f"command ensemble trained [{time.perf_counter() - t0:.1f}s]")

    val_windows = []
    for sid, lab in val_lab.items():
        w, _, _ = windows_and_targets(lab, channels, fem.in_stats)
        val_windows.append(w)
    val_windows = np.concatenate(val_windows) if val_windows else np.empty(0)
    # decimate: the running max needs coverage, not every 50 ms step
    val_windows = val_windows[::3]
    s_th, s_thd = imp.calibrate_sigma_max(fem, cpm, val_windows,
                                          n_samples=cfg.ensemble.mc_samples,
                                          seed=seed)
    say(f"sigma_max calibrated [{time.perf_counter() - t0:.1f}s]")

    impedance = ImpedanceConfig(
        k_s=cfg.impedance.k_s, d_s=cfg.impedance.d_s,
        sigma_max_theta=tuple(s_th), sigma_max_theta_dot=tuple(s_thd),
        tau_max=cfg.impedance.tau_max)

    all_targets = np.concatenate(list(targ_by.values()))
    ranges = {}
    for i, name in enumerate(FEATURE_NAMES):
        col = all_targets[:, i]
        ranges[name] = {"min": float(col.min()), "max": float(col.max()),
                        "p5": float(np.percentile(col, 5)),
                        "p95": float(np.percentile(col, 95))}

    meta = {"seed": seed,
            "train_subjects": sorted(train_cohort),
            "val_subjects": sorted(val_cohort),
            "train_seconds": round(time.perf_counter() - t0, 1)}
    return ModelBundle(fem=fem, cpm=cpm, impedance=impedance,
                       feature_ranges=ranges, meta=meta)
