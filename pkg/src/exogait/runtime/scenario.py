"""Scenario scripts: timed segments driving mode switches, gait-parameter
changes and operator overrides during a simulated session."""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from ..impedance import TherapistOverride, OVERRIDABLE
from ..kinematics import InvalidInputError


@dataclass(frozen=True)
class Segment:
    t: float
    label: str
    mode: str = ""                      # "", "transparency" or "closed_loop"
    set_profile: dict = field(default_factory=dict)
    override: dict = field(default_factory=dict)        # absolute means
    override_add: dict = field(default_factory=dict)    # relative to recent mean
    delta_phase: float = None
    clear_override: bool = False

    def __post_init__(self):
        if self.mode not in ("", "transparency", "closed_loop"):
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        for name in list(self.override) + list(self.override_add):
            if name not in OVERRIDABLE:
                raise InvalidInputError(f"cannot script override for {name!r}")


@dataclass
class Scenario:
    segments: list

    def __post_init__(self):
        self.segments = sorted(self.segments, key=lambda s: s.t)
        if not self.segments:
            raise InvalidInputError("scenario needs at least one segment")

    @property
    def duration_hint(self):
        return self.segments[-1].t

    def label_at(self, t):
        label = self.segments[0].label
        for seg in self.segments:
            if t >= seg.t:
                label = seg.label
        return label

    @classmethod
    def from_dicts(cls, rows):
        return cls([Segment(
            t=float(r["t"]), label=str(r.get("label", f"seg{i}")),
            mode=r.get("mode", ""),
            set_profile=dict(r.get("set_profile", {})),
            override=dict(r.get("override", {})),
            override_add=dict(r.get("override_add", {})),
            delta_phase=r.get("delta_phase"),
            clear_override=bool(r.get("clear_override", False)),
        ) for i, r in enumerate(rows)])

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict) or "segments" not in raw:
            raise InvalidInputError(f"{path}: scenario file needs a segments list")
        return cls.from_dicts(raw["segments"])


def reference_scenario(segment_s=20.0, clearance_bump=0.05, length_bump=0.05,
                       velocity_bump=0.08, speed_scale=1.35):
    """Six-stage validation script: transparency, closed loop, treadmill
    speed change, then clearance / velocity / length overrides."""
    s = segment_s
    return Scenario([
        Segment(t=0.0, label="A_transparency", mode="transparency"),
        Segment(t=1 * s, label="B_closed_loop", mode="closed_loop"),
        Segment(t=2 * s, label="C_speed_change",
                set_profile={"cadence_scale": speed_scale}),
        Segment(t=3 * s, label="D_override_clearance", clear_override=True,
                override_add={"c_L": clearance_bump, "c_R": clearance_bump}),
        Segment(t=4 * s, label="E_override_velocity", clear_override=True,
                override_add={"v_L": velocity_bump, "v_R": velocity_bump}),
        Segment(t=5 * s, label="F_override_length", clear_override=True,
                override_add={"l_L": length_bump, "l_R": length_bump}),
    ])


def save_scenario(scn: Scenario, path):
    rows = []
    for seg in scn.segments:
        row = {"t": seg.t, "label": seg.label}
        if seg.mode:
            row["mode"] = seg.mode
        if seg.set_profile:
            row["set_profile"] = dict(seg.set_profile)
        if seg.override:
            row["override"] = dict(seg.override)
        if seg.override_add:
            row["override_add"] = dict(seg.override_add)
        if seg.delta_phase is not None:
            row["delta_phase"] = seg.delta_phase
        if seg.clear_override:
            row["clear_override"] = True
        rows.append(row)
    with open(path, "w") as fh:
        yaml.safe_dump({"segments": rows}, fh, sort_keys=False)
