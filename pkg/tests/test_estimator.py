import numpy as np
import pytest

from exogait import estimator as est
from exogait.config import TrainConfig, EnsembleConfig
from exogait.kinematics import FEATURE_NAMES, InvalidInputError, NormStats
from exogait.nn import Sequential


def identity_stats(n):
    return NormStats(np.zeros(n), np.ones(n))


def constant_member(values, in_dim=12):
    """Model stack producing fixed outputs regardless of input."""
    values = np.asarray(values, dtype=float)
    m = Sequential([{"kind": "dense", "units": 1, "activation": "linear"}],
                   (in_dim,), m_models=len(values))
    m.layers[0].params["W"][...] = 0.0
    m.layers[0].params["b"][...] = values[:, None, None]
    return m


def linear_member(matrix, bias=None):
    """Single stack of one linear net per output row of ``matrix``."""
    matrix = np.asarray(matrix, dtype=float)
    n_out, n_in = matrix.shape
    m = Sequential([{"kind": "dense", "units": 1, "activation": "linear"}],
                   (n_in,), m_models=n_out)
    m.layers[0].params["W"][...] = matrix[:, :, None]
    m.layers[0].params["b"][...] = 0.0 if bias is None else \
        np.asarray(bias)[:, None, None]
    return m


class TestNormalFit:
    def test_matches_direct_computation(self):
        rng = np.random.default_rng(0)
        vals = rng.normal(size=(6, 12))
        d = est.fit_normal(vals, axis=0)
        np.testing.assert_allclose(d.mu, vals.mean(0), atol=1e-12)
        np.testing.assert_allclose(d.sigma, vals.std(0, ddof=0), atol=1e-12)

    def test_two_point_std(self):
        d = est.fit_normal(np.array([[1.0], [3.0]]), axis=0)
        assert d.mu[0] == 2.0 and d.sigma[0] == 1.0

    def test_gaussian_vector_validation(self):
        with pytest.raises(InvalidInputError):
            est.GaussianVector(np.zeros(3), -np.ones(3))
        with pytest.raises(InvalidInputError):
            est.GaussianVector(np.zeros(3), np.ones(2))


class TestFemInfer:
    def make_ens(self, member_values):
        members = [constant_member(v) for v in member_values]
        return est.EnsembleModel(
            kind="fem", members=members, in_stats=identity_stats(12),
            out_stats=identity_stats(12), member_subjects=[],
            output_names=FEATURE_NAMES)

    def test_two_member_mean_and_spread(self):
        ones = np.ones(12)
        ens = self.make_ens([1.0 * ones, 3.0 * ones])
        window = np.zeros(12)
        d = est.fem_infer(ens, window)
        # non-phase features keep the raw member statistics
        np.testing.assert_allclose(d.mu[4:], 2.0, atol=1e-12)
        np.testing.assert_allclose(d.sigma, 1.0, atol=1e-12)

    def test_identical_members_zero_sigma(self):
        ones = np.ones(12)
        ens = self.make_ens([0.5 * ones, 0.5 * ones, 0.5 * ones])
        d = est.fem_infer(ens, np.zeros(12))
        np.testing.assert_allclose(d.sigma, 0.0, atol=1e-12)

    def test_phase_renormalized_to_unit_circle(self):
        vals = np.full(12, 0.3)
        ens = self.make_ens([vals, vals + 0.2])
        d = est.fem_infer(ens, np.zeros(12))
        for ci, si in est.PHASE_PAIRS:
            assert d.mu[ci] ** 2 + d.mu[si] ** 2 == pytest.approx(1.0, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        ens = self.make_ens([np.ones(12), 2 * np.ones(12)])
        with pytest.raises(InvalidInputError):
            est.fem_infer(ens, np.zeros((3, 3)))


class TestPropagate:
    def make_cpm(self, members):
        return est.EnsembleModel(
            kind="cpm", members=members, in_stats=identity_stats(12),
            out_stats=identity_stats(8), member_subjects=[],
            output_names=est.KINEMATICS_NAMES)

    def test_zero_sigma_reduces_to_ensemble_spread(self):
        a = constant_member(np.arange(8.0))
        b = constant_member(np.arange(8.0) + 2.0)
        cpm = self.make_cpm([a, b])
        f = est.GaussianVector(np.zeros(12), np.zeros(12))
        d = est.propagate(cpm, f, 16, np.random.default_rng(0))
        np.testing.assert_allclose(d.mu, np.arange(8.0) + 1.0, atol=1e-12)
        np.testing.assert_allclose(d.sigma, 1.0, atol=1e-12)

    def test_linear_stub_matches_analytic(self):
        rng = np.random.default_rng(1)
        mat = rng.normal(size=(8, 12)) * 0.3
        cpm = self.make_cpm([linear_member(mat)])
        mu_f = rng.normal(size=12)
        sigma_f = rng.uniform(0.05, 0.3, 12)
        n = 4096
        d = est.propagate(cpm, est.GaussianVector(mu_f, sigma_f), n,
                          np.random.default_rng(2))
        mu_true = mat @ mu_f
        sigma_true = np.sqrt((mat ** 2) @ (sigma_f ** 2))
        se_mu = sigma_true / np.sqrt(n)
        se_sigma = sigma_true / np.sqrt(2 * (n - 1))
        assert np.all(np.abs(d.mu - mu_true) <= 3 * se_mu)
        assert np.all(np.abs(d.sigma - sigma_true) <= 3 * se_sigma)

    def test_small_n_against_large_n_oracle(self):
        rng = np.random.default_rng(3)
        members = [linear_member(rng.normal(size=(8, 12)) * 0.2 + 0.1)
                   for _ in range(3)]
        cpm = self.make_cpm(members)
        f = est.GaussianVector(rng.normal(size=12) * 0.5,
                               rng.uniform(0.02, 0.2, 12))
        small = est.propagate(cpm, f, 64, np.random.default_rng(4))
        big = est.propagate(cpm, f, 10 ** 5, np.random.default_rng(5))
        assert np.all(np.abs(small.mu - big.mu) < 0.02)
        assert np.all(np.abs(small.sigma - big.sigma) / big.sigma < 0.10)

    def test_deterministic_under_seed(self):
        cpm = self.make_cpm([constant_member(np.zeros(8)),
                             constant_member(np.ones(8))])
        f = est.GaussianVector(np.zeros(12), np.ones(12))
        a = est.propagate(cpm, f, 32, np.random.default_rng(9))
        b = est.propagate(cpm, f, 32, np.random.default_rng(9))
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.sigma, b.sigma)

    def test_n_below_two_rejected(self):
        cpm = self.make_cpm([constant_member(np.zeros(8))])
        f = est.GaussianVector(np.zeros(12), np.ones(12))
        with pytest.raises(InvalidInputError):
            est.propagate(cpm, f, 1, np.random.default_rng(0))


class TestAugment:
    def make_set(self):
        f = np.array([[0.0] * 12, [1.0] * 12], dtype=float)
        k = np.array([[0.0] * 8, [2.0] * 8], dtype=float)
        labels = np.array(["level", "stair_up"], dtype=object)
        return f, k, labels

    def test_midpoint(self):
        f, k, labels = self.make_set()
        lam = 0.5
        nf = lam * f[0] + (1 - lam) * f[1]
        nk = lam * k[0] + (1 - lam) * k[1]
        np.testing.assert_allclose(nf, 0.5)
        np.testing.assert_allclose(nk, 1.0)

    def test_lambda_zero_copies_partner(self):
        f, k, _ = self.make_set()
        lam = 0.0
        np.testing.assert_array_equal(lam * f[0] + (1 - lam) * f[1], f[1])

    def test_convex_hull_componentwise(self):
        rng = np.random.default_rng(6)
        f = rng.normal(size=(40, 12))
        k = rng.normal(size=(40, 8))
        labels = np.array(["a"] * 20 + ["b"] * 20, dtype=object)
        nf, nk, nl = est.augment(f, k, labels, 60, np.random.default_rng(7))
        assert len(nf) == 100 and (nl[40:] == "mix").all()
        lo_f, hi_f = f.min(0), f.max(0)
        assert np.all(nf[40:] >= lo_f - 1e-12) and np.all(nf[40:] <= hi_f + 1e-12)

    def test_height_between_source_ranges(self):
        # mixing level (h ~ 0) and stair ascent (h ~ 0.17) stays in between
        rng = np.random.default_rng(8)
        h_col = FEATURE_NAMES.index("h_L")
        f = rng.normal(size=(30, 12)) * 0.01
        f[15:, h_col] = 0.17 + 0.005 * rng.standard_normal(15)
        f[:15, h_col] = 0.001 * rng.standard_normal(15)
        k = rng.normal(size=(30, 8))
        labels = np.array(["level"] * 15 + ["stair_up"] * 15, dtype=object)
        nf, _, _ = est.augment(f, k, labels, 50, np.random.default_rng(9))
        lo = f[:, h_col].min()
        hi = f[:, h_col].max()
        assert np.all(nf[30:, h_col] >= lo - 1e-12)
        assert np.all(nf[30:, h_col] <= hi + 1e-12)

    def test_negative_count_rejected(self):
        f, k, labels = self.make_set()
        with pytest.raises(InvalidInputError):
            est.augment(f, k, labels, -1, np.random.default_rng(0))

    def test_originals_retained(self):
        f, k, labels = self.make_set()
        nf, nk, nl = est.augment(f, k, labels, 5, np.random.default_rng(1))
        np.testing.assert_array_equal(nf[:2], f)
        np.testing.assert_array_equal(nk[:2], k)


def tiny_fem_dataset(n_subjects=4, n_windows=40, rows=6, ch=3, seed=0):
    rng = np.random.default_rng(seed)
    windows, targets = {}, {}
    for i in range(n_subjects):
        w = rng.normal(size=(n_windows, rows, ch))
        t = np.tanh(w.mean(axis=(1, 2)))[:, None] * np.linspace(0.5, 1, 12)
        windows[f"S{i}"] = w
        targets[f"S{i}"] = t
    return windows, targets


class TestEnsembleTraining:
    CFG = TrainConfig(lr=5e-3, batch_size=32, max_epochs=3,
                      early_stop_patience=2, rng_seed=1)
    ENS = EnsembleConfig(n_members=3)

    def small_fem(self, n_jobs=1, seed=1):
        from exogait.config import FemConfig
        w, t = tiny_fem_dataset()
        cfg = TrainConfig(lr=self.CFG.lr, batch_size=self.CFG.batch_size,
                          max_epochs=self.CFG.max_epochs,
                          early_stop_patience=self.CFG.early_stop_patience,
                          rng_seed=seed)
        channels = tuple(f"c{i}" for i in range(3))
        return est.train_fem(w, t, channels, cfg, self.ENS,
                             FemConfig(hidden=3, dense=4), n_jobs=n_jobs)

    def test_member_count_and_bagging(self):
        ens = self.small_fem()
        assert ens.n_members == 3
        all_subjects = {f"S{i}" for i in range(4)}
        for subset in ens.member_subjects:
            assert set(subset) < all_subjects   # strictly fewer than all

    def test_single_member_rejected(self):
        from exogait.config import FemConfig
        w, t = tiny_fem_dataset()
        with pytest.raises(ValueError):
            est.train_fem(w, t, ("a", "b", "c"), self.CFG,
                          EnsembleConfig(n_members=1), FemConfig(3, 4))

    def test_too_few_subjects_rejected(self):
        from exogait.config import FemConfig
        w, t = tiny_fem_dataset(n_subjects=1)
        with pytest.raises(est.ConfigError):
            est.train_fem(w, t, ("a", "b", "c"), self.CFG, self.ENS,
                          FemConfig(3, 4))

    def test_empty_dataset_rejected(self):
        from exogait.config import FemConfig
        with pytest.raises(InvalidInputError):
            est.train_fem({}, {}, ("a",), self.CFG, self.ENS, FemConfig(3, 4))

    def test_seed_reproducibility(self):
        a = self.small_fem(seed=42)
        b = self.small_fem(seed=42)
        for ma, mb in zip(a.members, b.members):
            for (_, pa), (_, pb) in zip(ma.parameters(), mb.parameters()):
                np.testing.assert_array_equal(pa, pb)

    def test_infer_shapes(self):
        ens = self.small_fem()
        w = np.random.default_rng(0).normal(size=(6, 3))
        d = est.fem_infer(ens, ens.in_stats.normalize(w))
        assert d.mu.shape == (12,) and d.sigma.shape == (12,)
        mus, sds = est.fem_infer_batch(
            ens, ens.in_stats.normalize(np.random.default_rng(1).normal(size=(5, 6, 3))))
        assert mus.shape == (5, 12) and sds.shape == (5, 12)
