import math

import numpy as np
import pytest

from dynlab.classify import synth_blobs
from dynlab.pacbayes import (
    BayesConfig,
    BayesianSpikingNet,
    GradStatsConfig,
    gradient_stats,
    kl_gaussian,
    pac_bound,
    prior_variance,
    series_cv,
    sigma_sum,
    train_bayesian_snn,
)


@pytest.fixture(scope="module")
def tiny_blobs():
    return synth_blobs(1, n=200, n_features=16, n_classes=4)


class TestPriorVariance:
    def test_zero_damping_unit_variance(self):
        assert prior_variance(0.0) == 1.0

    def test_transition_clipped_low(self):
        # exponent -4 * 4 = -16 clipped to -5
        assert prior_variance(2.0) == pytest.approx(math.exp(-5.0), rel=1e-12)

    def test_expansive_clipped_high(self):
        # exponent +3 * 4 = +12 clipped to +5
        assert prior_variance(-1.5) == pytest.approx(math.exp(5.0), rel=1e-12)

    def test_sigma_sum_lookup_and_fallback(self):
        assert sigma_sum(2.0) == -4.0
        assert sigma_sum(10.0) == -20.0
        assert sigma_sum(3.3) == pytest.approx(-6.6)  # analytic off-grid


class TestKL:
    def test_matched_distributions_zero(self):
        assert kl_gaussian(np.zeros(7), np.full(7, 2.5), 2.5) == pytest.approx(0.0, abs=1e-12)

    def test_single_weight_hand_case(self):
        assert kl_gaussian([1.0], [1.0], 1.0) == pytest.approx(0.5, abs=1e-12)

    def test_monotone_in_mean_magnitude(self):
        values = [kl_gaussian([mu], [0.5], 1.0) for mu in (0.0, 0.5, 1.0, 2.0)]
        assert values == sorted(values)

    def test_positive_variance_required(self):
        with pytest.raises(ValueError):
            kl_gaussian([0.0], [0.0], 1.0)
        with pytest.raises(ValueError):
            kl_gaussian([0.0], [1.0], 0.0)


class TestBound:
    def test_reference_row(self):
        assert pac_bound(0.061, 2300.0, 1257, 0.05) == pytest.approx(1.019, abs=0.005)

    def test_zero_kl_arithmetic(self):
        expected = math.sqrt(math.log(2.0 * math.sqrt(1001) / 0.05) / 2000.0)
        assert pac_bound(0.0, 0.0, 1001, 0.05) == pytest.approx(expected, abs=1e-12)

    def test_bound_dominates_train_error(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            err = rng.uniform(0, 1)
            assert pac_bound(err, rng.uniform(0, 1e4), rng.integers(2, 10_000)) >= err

    def test_preconditions(self):
        with pytest.raises(ValueError):
            pac_bound(0.1, 10.0, 1)
        with pytest.raises(ValueError):
            pac_bound(1.5, 10.0, 100)


class TestBayesianNet:
    def test_fixed_eps_reproducible(self, tiny_blobs):
        cfg = BayesConfig(hidden=16, timesteps=3)
        rng = np.random.default_rng(0)
        net = BayesianSpikingNet(48, 16, 4, cfg, rng)
        frames = np.random.default_rng(1).standard_normal((6, 3, 48))
        eps1 = np.random.default_rng(2).standard_normal(net.l1.mu.data.shape)
        eps2 = np.random.default_rng(3).standard_normal(net.l2.mu.data.shape)
        a = net.forward(frames, eps1, eps2).data.tobytes()
        b = net.forward(frames, eps1, eps2).data.tobytes()
        assert a == b

    def test_zero_epoch_reports_init(self, tiny_blobs):
        report = train_bayesian_snn(tiny_blobs, 2.0, BayesConfig(epochs=0, hidden=16, eval_samples=2))
        assert report.kl > 0
        assert report.bound >= report.train_error
        assert 0.0 <= report.train_error <= 1.0

    def test_short_training_bound_valid_field(self, tiny_blobs):
        report = train_bayesian_snn(tiny_blobs, 2.0, BayesConfig(epochs=2, hidden=16, eval_samples=2))
        assert report.bound_valid == (report.bound >= report.test_error)
        assert report.gap == pytest.approx(report.test_error - report.train_error)


class TestGradientStats:
    def test_constant_series_zero_cv(self):
        assert series_cv([2.0, 2.0, 2.0]) == 0.0

    def test_hand_case(self):
        assert series_cv([1.0, 2.0, 3.0]) == pytest.approx(0.408248, abs=1e-6)

    def test_short_run_counts_batches(self, tiny_blobs):
        stats = gradient_stats(tiny_blobs, 2.0, GradStatsConfig(epochs=2, hidden=16))
        n_train = len(tiny_blobs.idx_train)
        assert stats.n_batches == 2 * math.ceil(n_train / 32)
        assert stats.mu_grad > 0
        assert stats.cv_grad >= 0
