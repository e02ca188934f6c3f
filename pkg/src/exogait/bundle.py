"""Trained-stack persistence.

A bundle is a directory: one weight file per (stage, member, output

channel) in the binary weight format, plus ``manifest.json`` carrying the
member subject manifests, normalization stats, uncertainty calibration,
operator slider ranges and format version.
"""

from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ImpedanceConfig
from .estimator import EnsembleModel
from .kinematics import NormStats
from .nn import Sequential, save_weights, load_model
from .nn.serial import WeightsError, WeightsVersionError

BUNDLE_VERSION = 1


class BundleError(Exception):
    pass


class BundleVersionError(BundleError):
    pass


@dataclass
class ModelBundle:
    fem: EnsembleModel
    cpm: EnsembleModel
    impedance: ImpedanceConfig
    feature_ranges: dict
    meta: dict

    def fingerprint(self):
        """Stable digest over every parameter tensor (for report metadata)."""
        digest = hashlib.sha256()
        for ens in (self.fem, self.cpm):
            for member in ens.members:
                for _, p in member.parameters():
                    digest.update(np.ascontiguousarray(p).tobytes())
        return digest.hexdigest()[:16]


def _ensemble_dir(root, ens: EnsembleModel, name):
    files = []
    for mi, member in enumerate(ens.members):
        mdir = root / name / f"m{mi:02d}"
        mdir.mkdir(parents=True, exist_ok=True)
        member_files = []
        for oi in range(member.m_models):
            fname = f"{oi:02d}_{ens.output_names[oi]}.exgw"
            save_weights(member.slice_model(oi), mdir / fname)
            member_files.append(f"{name}/m{mi:02d}/{fname}")
        files.append(member_files)
    return {
        "files": files,
        "member_subjects": ens.member_subjects,
        "output_names": list(ens.output_names),
        "channels": list(ens.channels),
        "in_stats": ens.in_stats.to_dict(),
        "out_stats": ens.out_stats.to_dict(),
    }


def save_bundle(bundle: ModelBundle, path):
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": BUNDLE_VERSION,
        "fem": _ensemble_dir(root, bundle.fem, "fem"),
        "cpm": _ensemble_dir(root, bundle.cpm, "cpm"),
        "impedance": {
            "k_s": list(bundle.impedance.k_s),
            "d_s": list(bundle.impedance.d_s),
            "sigma_max_theta": list(bundle.impedance.sigma_max_theta),
            "sigma_max_theta_dot": list(bundle.impedance.sigma_max_theta_dot),
            "tau_max": bundle.impedance.tau_max,
        },
        "feature_ranges": bundle.feature_ranges,
        "meta": bundle.meta,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return root


def _load_ensemble(root, section, kind):
    members = []
    for member_files in section["files"]:
        nets = []
        for rel in member_files:
            try:
                nets.append(load_model(root / rel))
            except FileNotFoundError as exc:
                raise BundleError(f"bundle is missing weight file {rel}") from exc
        members.append(Sequential.stack(nets))
    return EnsembleModel(
        kind=kind,
        members=members,
        in_stats=NormStats.from_dict(section["in_stats"]),
        out_stats=NormStats.from_dict(section["out_stats"]),
        member_subjects=section["member_subjects"],
        output_names=tuple(section["output_names"]),
        channels=tuple(section["channels"]),
    )


def load_bundle(path) -> ModelBundle:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise BundleError(f"{path}: no bundle manifest found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: unreadable manifest ({exc})") from exc
    version = manifest.get("format_version")
    if version != BUNDLE_VERSION:
        raise BundleVersionError(
            f"{path}: bundle format {version}, expected {BUNDLE_VERSION}")
    try:
        fem = _load_ensemble(root, manifest["fem"], "fem")
        cpm = _load_ensemble(root, manifest["cpm"], "cpm")
    except WeightsVersionError as exc:
        raise BundleVersionError(str(exc)) from exc
    except WeightsError as exc:
        raise BundleError(str(exc)) from exc
    imp = manifest["impedance"]
    impedance = ImpedanceConfig(
        k_s=tuple(imp["k_s"]), d_s=tuple(imp["d_s"]),
        sigma_max_theta=tuple(imp["sigma_max_theta"]),
        sigma_max_theta_dot=tuple(imp["sigma_max_theta_dot"]),
        tau_max=imp["tau_max"],
    )
    return ModelBundle(fem=fem, cpm=cpm, impedance=impedance,
                       feature_ranges=manifest.get("feature_ranges", {}),
                       meta=manifest.get("meta", {}))
