"""Configuration defaults and YAML loading.

Every tunable constant of the stack lives here; the shipped
``configs/default.yaml`` mirrors these values and a CLI ``--config`` file
overrides them key by key.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace

import yaml

from .kinematics import DEFAULT_WINDOW_CHANNELS


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings shared by both model stages."""

    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    early_stop_patience: int = 8
    val_fraction: float = 0.15
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.lr > 0 and self.batch_size > 0 and self.max_epochs > 0):
            raise ValueError("lr, batch_size and max_epochs must be positive")
        if not (0 < self.val_fraction < 1):
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be >= 0")


@dataclass(frozen=True)
class FemConfig:
    """Feature extractor: window -> one scalar per gait feature."""

    hidden: int = 32            # LSTM units per direction
    dense: int = 64
    noise_std: float = 0.01
    channels: tuple = DEFAULT_WINDOW_CHANNELS


@dataclass(frozen=True)
class CpmConfig:
    """Command predictor: 12 features -> one kinematic scalar per output."""

    dense: tuple = (64, 32, 16)
    dropout: float = 0.1
    l2: float = 1e-4
    noise_std: float = 0.01


@dataclass(frozen=True)
class EnsembleConfig:
    n_members: int = 6
    subset_fraction: float = 5.0 / 7.0   # of training subjects, per member
    mc_samples: int = 64                 # Monte-Carlo batch through the CPM
    augment_fraction: float = 0.3        # synthetic pairs added before CPM fit

    def __post_init__(self):
        if self.n_members < 2:
            raise ValueError("ensembles need at least 2 members")


@dataclass(frozen=True)
class ImpedanceConfig:
    """Stiffness/damping ceilings and uncertainty normalization."""

    k_s: tuple = (80.0, 60.0)     # N*m/rad, (hip, knee)
    d_s: tuple = (8.0, 6.0)       # N*m*s/rad, (hip, knee)
    sigma_max_theta: tuple = (1.0, 1.0, 1.0, 1.0)      # rad, calibrated
    sigma_max_theta_dot: tuple = (1.0, 1.0, 1.0, 1.0)  # rad/s, calibrated
    tau_max: float = 30.0         # N*m per-joint command saturation

    def __post_init__(self):
        vals = (*self.k_s, *self.d_s, *self.sigma_max_theta,
                *self.sigma_max_theta_dot, self.tau_max)
        if any(not v > 0 for v in vals):
            raise ValueError("impedance config values must be strictly positive")

    def k_s_joint(self):
        return (self.k_s[0], self.k_s[1], self.k_s[0], self.k_s[1])

    def d_s_joint(self):
        return (self.d_s[0], self.d_s[1], self.d_s[0], self.d_s[1])


@dataclass(frozen=True)
class PlantConfig:
    """Per-joint second-order plant with a PD pull toward the wearer's intent."""

    inertia: float = 0.5          # kg*m^2
    damping: float = 1.0          # N*m*s/rad viscous
    track_kp: float = 30.0        # N*m/rad intent tracking
    track_kd: float = 3.0         # N*m*s/rad


@dataclass(frozen=True)
class RunConfig:
    sensor_rate_hz: float = 333.0
    inference_rate_hz: float = 50.0
    telemetry_rate_hz: float = 20.0
    lockstep: bool = True
    duration_s: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.sensor_rate_hz < self.inference_rate_hz:
            raise ValueError("sensor rate must be >= inference rate")


@dataclass(frozen=True)
class CohortConfig:
    """Synthetic cohort layout: 9 subjects, 7 train / 2 validation."""

    n_subjects: int = 9
    n_validation: int = 2
    strides_per_activity: int = 6
    activities: tuple = ("level", "stair_up", "stair_down", "ramp_up", "ramp_down")


@dataclass(frozen=True)
class StackConfig:
    """Top-level bundle of every sub-config."""

    train: TrainConfig = field(default_factory=TrainConfig)
    fem: FemConfig = field(default_factory=FemConfig)
    cpm: CpmConfig = field(default_factory=CpmConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    impedance: ImpedanceConfig = field(default_factory=ImpedanceConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    run: RunConfig = field(default_factory=RunConfig)
    cohort: CohortConfig = field(default_factory=CohortConfig)


_SECTIONS = {
    "train": TrainConfig, "fem": FemConfig, "cpm": CpmConfig,
    "ensemble": EnsembleConfig, "impedance": ImpedanceConfig,
    "plant": PlantConfig, "run": RunConfig, "cohort": CohortConfig,
}


def desk_scale_config() -> StackConfig:
    """Reduced training budget for small machines and CI.

    Member count and network width come down; every behavioural contract
    (window geometry, ensemble semantics, impedance law) is unchanged.
    """
    return StackConfig(
        train=TrainConfig(lr=2.5e-3, max_epochs=25, early_stop_patience=2),
        fem=FemConfig(hidden=12, dense=32),
        ensemble=EnsembleConfig(n_members=3),
        cohort=CohortConfig(strides_per_activity=4),
    )


def _coerce(section_cls, current, overrides: dict):
    fields = {f for f in section_cls.__dataclass_fields__}
    unknown = set(overrides) - fields
    if unknown:
        raise ValueError(f"unknown config keys for {section_cls.__name__}: {sorted(unknown)}")
    clean = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return replace(current, **clean)


def load_config(path=None, base: StackConfig | None = None) -> StackConfig:
    """Load a YAML config file on top of ``base`` (or the defaults)."""
    cfg = base or StackConfig()
    if path is None:
        return cfg
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError("config file must contain a mapping")
    if raw.get("profile") == "desk":
        cfg = desk_scale_config()
    parts = {}
    for name, cls in _SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ValueError(f"config section {name!r} must be a mapping")
        parts[name] = _coerce(cls, getattr(cfg, name), section)
    return StackConfig(**parts)


def dump_config(cfg: StackConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(asdict(cfg), fh, sort_keys=False)
