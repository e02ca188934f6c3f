import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exogait import impedance as imp
from exogait import estimator as est
from exogait.config import ImpedanceConfig
from exogait.kinematics import FEATURE_NAMES, InvalidInputError, NormStats
from exogait.nn import Sequential

CFG = ImpedanceConfig(sigma_max_theta=(0.2, 0.2, 0.2, 0.2),
                      sigma_max_theta_dot=(1.0, 1.0, 1.0, 1.0))


def feature_dist(seed=0):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=12)
    for ci, si in est.PHASE_PAIRS:
        n = np.hypot(mu[ci], mu[si])
        mu[ci] /= n
        mu[si] /= n
    return est.GaussianVector(mu, rng.uniform(0.01, 0.1, 12))


class TestOverride:
    def test_empty_override_is_identity(self):
        d = feature_dist()
        out = imp.apply_override(d, imp.TherapistOverride())
        np.testing.assert_array_equal(out.mu, d.mu)
        np.testing.assert_array_equal(out.sigma, d.sigma)

    def test_single_feature_replacement(self):
        d = feature_dist()
        ov = imp.TherapistOverride(features={"l_L": 0.34})
        out = imp.apply_override(d, ov)
        i = FEATURE_NAMES.index("l_L")
        assert out.mu[i] == 0.34
        mask = np.ones(12, dtype=bool)
        mask[i] = False
        np.testing.assert_array_equal(out.mu[mask], d.mu[mask])
        np.testing.assert_array_equal(out.sigma, d.sigma)

    def test_clear_restores_original(self):
        d = feature_dist()
        ov = imp.TherapistOverride(features={"c_R": 0.2, "v_L": 0.7})
        _ = imp.apply_override(d, ov)
        out = imp.apply_override(d, ov.without())
        np.testing.assert_array_equal(out.mu, d.mu)

    def test_nonfinite_override_rejected(self):
        with pytest.raises(InvalidInputError):
            imp.TherapistOverride(features={"h_L": np.nan})

    def test_unknown_feature_rejected(self):
        with pytest.raises(InvalidInputError):
            imp.TherapistOverride(features={"cos_gp_L": 1.0})

    def test_sigma_never_touched(self):
        d = feature_dist(3)
        ov = imp.TherapistOverride(
            features={k: 0.1 for k in imp.OVERRIDABLE}, delta_phase=30.0)
        out = imp.apply_override(d, ov)
        np.testing.assert_array_equal(out.sigma, d.sigma)


class TestPhaseAdvance:
    def test_wraparound(self):
        c, s = np.cos(2 * np.pi * 0.98), np.sin(2 * np.pi * 0.98)
        c2, s2 = imp.advance_phase(c, s, 5.0)
        from exogait.kinematics import decode_phase
        assert decode_phase(c2, s2) == pytest.approx(3.0, abs=1e-9)

    def test_zero_delta_identity(self):
        c, s = 0.6, 0.8
        c2, s2 = imp.advance_phase(c, s, 0.0)
        assert (c2, s2) == (c, s)

    def test_half_cycle_twice_is_identity(self):
        c, s = 0.28, 0.96
        for _ in range(2):
            c, s = imp.advance_phase(c, s, 50.0)
        assert c == pytest.approx(0.28, abs=1e-12)
        assert s == pytest.approx(0.96, abs=1e-12)

    def test_norm_preserved(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            ang = rng.uniform(0, 2 * np.pi)
            d = rng.uniform(0, 100)
            c, s = imp.advance_phase(np.cos(ang), np.sin(ang), d)
            assert abs(np.hypot(c, s) - 1.0) < 1e-12

    @given(st.floats(0, 99.999), st.floats(0, 99.999), st.floats(0, 99.999))
    @settings(max_examples=200, deadline=None)
    def test_additive_composition_mod_100(self, gp, d1, d2):
        from exogait.kinematics import encode_phase, decode_phase
        c, s = encode_phase(gp)
        ca, sa = imp.advance_phase(*imp.advance_phase(c, s, d1), d2)
        expect = (gp + d1 + d2) % 100.0
        got = decode_phase(ca, sa)
        diff = min(abs(got - expect), 100 - abs(got - expect))
        assert diff < 1e-6

    def test_zero_vector_rejected(self):
        with pytest.raises(InvalidInputError):
            imp.advance_phase(0.0, 0.0, 10.0)


class TestImpedanceLaw:
    def test_zero_sigma_full_stiffness(self):
        k, d = imp.compute_impedance(np.zeros(4), np.zeros(4), CFG)
        np.testing.assert_allclose(k, [80, 60, 80, 60])
        np.testing.assert_allclose(d, [8, 6, 8, 6])

    def test_max_sigma_zero_stiffness(self):
        k, d = imp.compute_impedance(np.asarray(CFG.sigma_max_theta),
                                     np.asarray(CFG.sigma_max_theta_dot), CFG)
        np.testing.assert_allclose(k, 0.0, atol=1e-12)
        np.testing.assert_allclose(d, 0.0, atol=1e-12)

    def test_linear_midpoint(self):
        k, d = imp.compute_impedance(0.5 * np.asarray(CFG.sigma_max_theta),
                                     0.5 * np.asarray(CFG.sigma_max_theta_dot), CFG)
        np.testing.assert_allclose(k, [40, 30, 40, 30])
        np.testing.assert_allclose(d, [4, 3, 4, 3])

    def test_clamped_beyond_max(self):
        k, d = imp.compute_impedance(np.full(4, 10.0), np.full(4, 10.0), CFG)
        np.testing.assert_allclose(k, 0.0)
        np.testing.assert_allclose(d, 0.0)

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_bounds_and_monotonicity(self, seed):
        rng = np.random.default_rng(seed)
        s1 = rng.uniform(0, 0.5, 4)
        s2 = s1 + rng.uniform(0, 0.5, 4)
        k1, d1 = imp.compute_impedance(s1, s1, CFG)
        k2, d2 = imp.compute_impedance(s2, s2, CFG)
        for k, d in ((k1, d1), (k2, d2)):
            assert np.all(k >= 0) and np.all(k <= [80, 60, 80, 60])
            assert np.all(d >= 0) and np.all(d <= [8, 6, 8, 6])
        assert np.all(k2 <= k1 + 1e-12) and np.all(d2 <= d1 + 1e-12)


class TestDesiredTorque:
    def make_cmd(self, k=80.0, d=0.0):
        return imp.ImpedanceCommand(theta_d=np.zeros(4), theta_dot_d=np.zeros(4),
                                    k=np.full(4, k), d=np.full(4, d))

    def test_equilibrium_zero(self):
        cmd = self.make_cmd()
        tau = imp.desired_torque(np.zeros(4), np.zeros(4), cmd)
        np.testing.assert_allclose(tau, 0.0)

    def test_spring_term(self):
        cmd = self.make_cmd(k=80.0)
        tau = imp.desired_torque(np.full(4, 0.1), np.zeros(4), cmd)
        np.testing.assert_allclose(tau, 8.0)

    def test_saturation(self):
        cmd = self.make_cmd(k=450.0)
        tau = imp.desired_torque(np.full(4, 0.1), np.zeros(4), cmd, tau_max=30.0)
        np.testing.assert_allclose(tau, 30.0)

    def test_linearity_below_saturation(self):
        cmd = imp.ImpedanceCommand(theta_d=np.zeros(4), theta_dot_d=np.zeros(4),
                                   k=np.array([10.0, 20, 30, 40]),
                                   d=np.array([1.0, 2, 3, 4]))
        rng = np.random.default_rng(1)
        e1, e2 = rng.normal(size=4) * 0.05, rng.normal(size=4) * 0.05
        v1, v2 = rng.normal(size=4) * 0.1, rng.normal(size=4) * 0.1
        t1 = imp.desired_torque(e1, v1, cmd, tau_max=None)
        t2 = imp.desired_torque(e2, v2, cmd, tau_max=None)
        t12 = imp.desired_torque(e1 + e2, v1 + v2, cmd, tau_max=None)
        np.testing.assert_allclose(t12, t1 + t2, atol=1e-12)


class TestSigmaMaxCalibration:
    def make_chain(self):
        fem_members = [self._scalarize(k) for k in range(3)]
        fem = est.EnsembleModel(kind="fem", members=fem_members,
                                in_stats=NormStats(np.zeros(3), np.ones(3)),
                                out_stats=NormStats(np.zeros(12), np.ones(12)),
                                member_subjects=[], output_names=FEATURE_NAMES)
        cpm_members = [self._cpm_member(seed) for seed in range(2)]
        cpm = est.EnsembleModel(kind="cpm", members=cpm_members,
                                in_stats=NormStats(np.zeros(12), np.ones(12)),
                                out_stats=NormStats(np.zeros(8), np.ones(8)),
                                member_subjects=[],
                                output_names=est.KINEMATICS_NAMES)
        return fem, cpm

    @staticmethod
    def _scalarize(seed):
        return Sequential([{"kind": "flatten"},
                           {"kind": "dense", "units": 1, "activation": "tanh"}],
                          (4, 3), m_models=12,
                          rng=np.random.default_rng(100 + seed))

    @staticmethod
    def _cpm_member(seed):
        return Sequential([{"kind": "dense", "units": 1, "activation": "linear"}],
                          (12,), m_models=8, rng=np.random.default_rng(200 + seed))

    def test_single_window_equals_its_sigma(self):
        fem, cpm = self.make_chain()
        w = np.random.default_rng(0).normal(size=(1, 4, 3))
        s_th, s_thd = imp.calibrate_sigma_max(fem, cpm, w, n_samples=32, seed=1)
        f = est.fem_infer(fem, w[0])
        d = est.propagate(cpm, f, 32, np.random.default_rng(1))
        np.testing.assert_allclose(np.concatenate([s_th, s_thd]),
                                   np.maximum(d.sigma, 1e-6), atol=1e-12)

    def test_running_max_monotone(self):
        fem, cpm = self.make_chain()
        rng = np.random.default_rng(2)
        ws = rng.normal(size=(6, 4, 3))
        prev = np.zeros(8)
        for n in range(1, 7):
            s_th, s_thd = imp.calibrate_sigma_max(fem, cpm, ws[:n],
                                                  n_samples=16, seed=3)
            cur = np.concatenate([s_th, s_thd])
            assert np.all(cur >= prev - 1e-15)
            prev = cur

    def test_empty_set_rejected(self):
        fem, cpm = self.make_chain()
        with pytest.raises(InvalidInputError):
            imp.calibrate_sigma_max(fem, cpm, np.empty((0, 4, 3)))

    def test_live_ratio_bounded_on_calibration_set(self):
        fem, cpm = self.make_chain()
        ws = np.random.default_rng(4).normal(size=(8, 4, 3))
        s_th, s_thd = imp.calibrate_sigma_max(fem, cpm, ws, n_samples=24, seed=7)
        cfg = ImpedanceConfig(sigma_max_theta=tuple(s_th),
                              sigma_max_theta_dot=tuple(s_thd))
        rng = np.random.default_rng(7)
        for w in ws:
            f = est.fem_infer(fem, w)
            d = est.propagate(cpm, f, 24, rng)
            k, dd = imp.compute_impedance(d.sigma[:4], d.sigma[4:], cfg)
            assert np.all(k >= 0) and np.all(dd >= 0)
