import numpy as np
import pytest

from exogait.bundle import ModelBundle
from exogait.config import ImpedanceConfig
from exogait.estimator import EnsembleModel, KINEMATICS_NAMES
from exogait.kinematics import FEATURE_NAMES, NormStats
from exogait.nn import Sequential, fem_specs, cpm_specs


def make_stub_bundle(fem_members=2, cpm_members=2, hidden=3, seed=0):
    """Untrained but structurally complete bundle for runtime-mechanics
    tests; predictions are arbitrary smooth functions of the window."""
    rng = np.random.default_rng(seed)
    fem = EnsembleModel(
        kind="fem",
        members=[Sequential(fem_specs(hidden=hidden, dense=8, noise_std=0.01),
                            (30, 15), m_models=12,
                            rng=np.random.default_rng(seed + i))
                 for i in range(fem_members)],
        in_stats=NormStats(np.zeros(15), np.ones(15) * 2.0),
        out_stats=NormStats(np.zeros(12), np.ones(12)),
        member_subjects=[["S0", "S1"], ["S1", "S2"]][:fem_members],
        output_names=FEATURE_NAMES,
        channels=tuple(f"ch{i}" for i in range(15)),
    )
    # keep channels consistent with the real window builder
    from exogait.kinematics import DEFAULT_WINDOW_CHANNELS
    fem.channels = DEFAULT_WINDOW_CHANNELS
    cpm = EnsembleModel(
        kind="cpm",
        members=[Sequential(cpm_specs(dense=(8, 6), dropout=0.0, l2=0.0),
                            (12,), m_models=8,
                            rng=np.random.default_rng(seed + 50 + i))
                 for i in range(cpm_members)],
        in_stats=NormStats(np.zeros(12), np.ones(12)),
        out_stats=NormStats(np.zeros(8), np.concatenate([np.full(4, 0.5),
                                                         np.full(4, 2.0)])),
        member_subjects=[["S0"], ["S1"]][:cpm_members],
        output_names=KINEMATICS_NAMES,
    )
    impedance = ImpedanceConfig(sigma_max_theta=(0.1,) * 4,
                                sigma_max_theta_dot=(0.5,) * 4)
    ranges = {n: {"min": -0.2, "max": 0.6, "p5": -0.1, "p95": 0.5}
              for n in FEATURE_NAMES}
    return ModelBundle(fem=fem, cpm=cpm, impedance=impedance,
                       feature_ranges=ranges, meta={"stub": True})


@pytest.fixture(scope="session")
def stub_bundle():
    return make_stub_bundle()
