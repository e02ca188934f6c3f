import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exogait import kinematics as kin


GEOM = kin.LegGeometry(0.44, 0.565)


class TestForwardKinematics:
    def test_neutral_pose_feet_coincide(self):
        fr = kin.forward_kinematics(np.zeros(4), 0.0, GEOM, "left")
        np.testing.assert_allclose(fr, np.zeros(4), atol=1e-12)

    def test_swing_hip_right_angle(self):
        # stance left leg straight down; right hip at 90 deg, knee straight:
        # swing foot ends level with the pelvis, one leg-length forward.
        theta = np.array([0.0, 0.0, np.pi / 2, 0.0])
        fr = kin.forward_kinematics(theta, 0.0, GEOM, "left")
        np.testing.assert_allclose(fr[:2], [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(fr[2:], [1.005, 1.005], atol=1e-12)

    def test_swing_hip_and_knee_right_angle(self):
        theta = np.array([0.0, 0.0, np.pi / 2, np.pi / 2])
        fr = kin.forward_kinematics(theta, 0.0, GEOM, "left")
        np.testing.assert_allclose(fr[2:], [0.44, 1.005 - 0.565], atol=1e-12)

    def test_stance_foot_exactly_zero(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            theta = rng.uniform(-1, 1, 4)
            fr = kin.forward_kinematics(theta, rng.uniform(-0.3, 0.3), GEOM, "right")
            assert fr[2] == 0.0 and fr[3] == 0.0

    def test_left_right_mirror_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            theta = rng.uniform(-1, 1, 4)
            bp = rng.uniform(-0.3, 0.3)
            mirrored = np.array([theta[2], theta[3], theta[0], theta[1]])
            a = kin.foot_positions_pelvis(theta, bp, GEOM)
            b = kin.foot_positions_pelvis(mirrored, bp, GEOM)
            np.testing.assert_allclose(a[[0, 1]], b[[2, 3]], atol=1e-12)
            np.testing.assert_allclose(a[[2, 3]], b[[0, 1]], atol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(kin.InvalidInputError):
            kin.forward_kinematics([np.nan, 0, 0, 0], 0.0, GEOM, "left")

    def test_bad_stance_rejected(self):
        with pytest.raises(kin.InvalidInputError):
            kin.forward_kinematics(np.zeros(4), 0.0, GEOM, "both")

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            hip = rng.uniform(-0.5, 1.2)
            knee = rng.uniform(0.05, 1.5)
            bp = rng.uniform(-0.2, 0.2)
            pel = kin.foot_positions_pelvis([hip, knee, 0, 0], bp, GEOM)
            hip2, knee2 = kin.inverse_leg_kinematics(pel[0], pel[1], bp, GEOM)
            assert abs(hip2 - hip) < 1e-9 and abs(knee2 - knee) < 1e-9


class TestPhaseCodec:
    @pytest.mark.parametrize("gp,expect", [
        (0.0, (1.0, 0.0)),
        (25.0, (0.0, 1.0)),
        (50.0, (-1.0, 0.0)),
    ])
    def test_encode_cardinal(self, gp, expect):
        c, s = kin.encode_phase(gp)
        np.testing.assert_allclose([c, s], expect, atol=1e-12)

    @pytest.mark.parametrize("cs,expect", [
        ((1.0, 0.0), 0.0),
        ((0.0, -1.0), 75.0),
    ])
    def test_decode_cardinal(self, cs, expect):
        assert abs(kin.decode_phase(*cs) - expect) < 1e-12

    def test_decode_renormalizes(self):
        assert kin.decode_phase(1.2, 1.6) == pytest.approx(kin.decode_phase(0.6, 0.8), abs=1e-12)

    def test_round_trip_grid(self):
        grid = np.linspace(0.0, 100.0, 1000, endpoint=False)
        c, s = kin.encode_phase(grid)
        back = kin.decode_phase(c, s)
        assert np.max(np.abs(back - grid)) < 1e-9

    def test_out_of_range_rejected(self):
        for bad in (-0.1, 100.0, 150.0):
            with pytest.raises(kin.InvalidInputError):
                kin.encode_phase(bad)

    def test_zero_vector_rejected(self):
        with pytest.raises(kin.InvalidInputError):
            kin.decode_phase(0.0, 0.0)


class TestStrideFeatures:
    def make_path(self, x_end, z_peak, z_end):
        s = np.linspace(0, 1, 101)
        x = x_end * s
        z = z_peak * np.sin(np.pi * s) ** 2 + z_end * s
        z[100] = z_end
        return np.column_stack([x, z])

    def test_flat_stride(self):
        path = self.make_path(0.5, 0.12, 0.0)
        h, l, c, v = kin.extract_stride_features(path, 1.0)
        assert h == pytest.approx(0.0, abs=1e-12)
        assert l == pytest.approx(0.5)
        assert c == pytest.approx(0.12, abs=1e-3)
        assert v == pytest.approx(0.5)

    def test_ascending_stride_positive_height(self):
        path = self.make_path(0.3, 0.2, 0.17)
        h, _, c, _ = kin.extract_stride_features(path, 0.8)
        assert h == pytest.approx(0.17)
        assert c >= h - 1e-9

    def test_in_place_step(self):
        path = self.make_path(0.0, 0.1, 0.0)
        h, l, c, v = kin.extract_stride_features(path, 1.3)
        assert l == 0.0 and v == 0.0
        assert c == pytest.approx(0.1, abs=1e-3)

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(kin.InvalidInputError):
            kin.extract_stride_features(self.make_path(0.5, 0.1, 0.0), 0.0)

    @given(st.floats(-0.3, 0.6), st.floats(0.0, 0.3), st.floats(-0.2, 0.2),
           st.floats(0.31, 2.0))
    @settings(max_examples=50, deadline=None)
    def test_clearance_bounds_height(self, x_end, z_peak, z_end, dur):
        path = self.make_path(x_end, z_peak, z_end)
        h, l, c, v = kin.extract_stride_features(path, dur)
        assert c >= max(0.0, h) - 1e-9
        assert v == pytest.approx(l / dur)


class TestSegmentation:
    def test_square_wave_heel_strikes(self):
        t = np.arange(0, 10, 0.01)
        alpha_l = np.where((t % 2) < 1.0, 0.9, 0.1)
        alpha = np.column_stack([alpha_l, 1 - alpha_l])
        hs_l, hs_r, stance = kin.detect_stance_and_strides(t, alpha)
        # upward crossings of 0.6 at t = 2, 4, 6, 8
        np.testing.assert_allclose(t[hs_l], [2.0, 4.0, 6.0, 8.0], atol=0.011)
        np.testing.assert_allclose(t[hs_r], [1.0, 3.0, 5.0, 7.0, 9.0], atol=0.011)

    def test_constant_alpha_no_events(self):
        t = np.arange(0, 5, 0.01)
        alpha = np.full((len(t), 2), 0.5)
        hs_l, hs_r, _ = kin.detect_stance_and_strides(t, alpha)
        assert len(hs_l) == 0 and len(hs_r) == 0

    def test_short_stream_empty(self):
        hs_l, hs_r, _ = kin.detect_stance_and_strides(np.array([0.0]), np.array([[0.5, 0.5]]))
        assert len(hs_l) == 0 and len(hs_r) == 0

    def test_minimum_stride_filter(self):
        # a 0.1 s bounce in alpha must not create an extra stride boundary
        t = np.arange(0, 6, 0.01)
        alpha_l = np.where((t % 2) < 1.0, 0.9, 0.1)
        bounce = (t > 2.05) & (t < 2.10)
        alpha_l = np.where(bounce, 0.1, alpha_l)
        alpha_l = np.where((t > 2.10) & (t < 2.15), 0.9, alpha_l)
        alpha = np.column_stack([alpha_l, 1 - alpha_l])
        hs_l, _, _ = kin.detect_stance_and_strides(t, alpha)
        np.testing.assert_allclose(t[hs_l], [2.0, 4.0], atol=0.011)

    def test_stance_hysteresis(self):
        tracker = kin.StanceTracker("left")
        assert tracker.update(0.55) == "left"     # holds between thresholds
        assert tracker.update(0.35) == "right"    # below low -> switch
        assert tracker.update(0.55) == "right"    # holds
        assert tracker.update(0.65) == "left"     # above high -> switch


class TestWindows:
    def test_exact_single_window(self):
        w = kin.build_windows(np.zeros((30, 15)))
        assert w.shape == (1, 30, 15)

    def test_hundred_samples(self):
        w = kin.build_windows(np.zeros((100, 15)))
        assert w.shape[0] == 15

    def test_too_short(self):
        assert kin.build_windows(np.zeros((29, 15))).shape[0] == 0

    def test_count_formula_exhaustive(self):
        for n in range(0, 501):
            w = kin.build_windows(np.zeros((n, 3)))
            expect = 0 if n < 30 else (n - 30) // 5 + 1
            assert w.shape[0] == expect, n

    def test_window_contents(self):
        stream = np.arange(100)[:, None].astype(float)
        w = kin.build_windows(stream)
        np.testing.assert_array_equal(w[0, :, 0], np.arange(30))
        np.testing.assert_array_equal(w[1, :, 0], np.arange(5, 35))


class TestNormStats:
    def test_two_point_channel(self):
        stats = kin.fit_norm_stats(np.array([[0.0], [2.0]]))
        np.testing.assert_allclose(stats.normalize(np.array([[0.0], [2.0]])),
                                   [[-1.0], [1.0]])

    def test_constant_channel(self):
        stats = kin.fit_norm_stats(np.array([[3.0], [3.0], [3.0]]))
        assert stats.offset[0] == 3.0 and stats.scale[0] == 1.0
        np.testing.assert_allclose(stats.normalize(np.array([3.0])), [0.0])

    def test_empty_rejected(self):
        with pytest.raises(kin.InvalidInputError):
            kin.fit_norm_stats(np.empty((0, 4)))

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_round_trip_random(self, seed):
        rng = np.random.default_rng(seed)
        data = rng.normal(size=(50, 6)) * rng.uniform(0.1, 10, 6)
        stats = kin.fit_norm_stats(data)
        back = stats.denormalize(stats.normalize(data))
        assert np.max(np.abs(back - data)) < 1e-9
