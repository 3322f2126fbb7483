"""Spiking-network likelihood, samplers and trial-sequence testing."""

import itertools
import math

import numpy as np
import pytest

from klseq.errors import ConfigError, DomainError
from klseq.kltest import KlTestConfig
from klseq.spikenet import (
    MetropolisConfig,
    SpikeTrial,
    fit_sequence,
    last_spike_time,
    log_likelihood,
    metropolis_fit,
    significance_summary,
    simulate_rasters,
    voltage,
    window_sums,
)


class TestSpikeTrial:
    def test_rejects_nonbinary(self):
        with pytest.raises(DomainError, match="neuron 2, time 1"):
            SpikeTrial(np.array([[0, 1], [2, 0]]))

    def test_shape_properties(self):
        tr = SpikeTrial(np.zeros((3, 5), dtype=int))
        assert tr.n_neurons == 3 and tr.n_times == 5


class TestLastSpikeTime:
    def test_no_history_is_one(self):
        assert last_spike_time([0, 0, 0, 0], 3) == 1
        assert last_spike_time([1, 0, 0], 1) == 1

    def test_most_recent_strictly_before(self):
        row = [0, 1, 0, 1, 0]
        assert last_spike_time(row, 5) == 4
        assert last_spike_time(row, 4) == 2
        assert last_spike_time(row, 2) == 1  # own spike at t not counted

    def test_bad_index(self):
        with pytest.raises(DomainError):
            last_spike_time([0, 1], 3)


class TestWindowSums:
    def test_hand_case(self):
        # neuron 1 spikes at t=2; window for (k=1, t=3) starts at 2
        raster = np.array([[0, 1, 0], [1, 0, 1]])
        w = window_sums(raster)
        # k=0, t=2 (0-based): window 2..2 -> own spike and neuron 2's column 2
        np.testing.assert_array_equal(w[0, 2], [1.0, 0.0])
        # k=1 spiked at t=1: window for t=3 covers columns 1..2
        np.testing.assert_array_equal(w[1, 2], [1.0, 1.0])
        # t=1 windows are empty sums
        np.testing.assert_array_equal(w[:, 0], np.zeros((2, 2)))

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(61)
        raster = (rng.random((4, 30)) < 0.3).astype(int)
        w = window_sums(raster)
        for k in range(4):
            for t in range(1, 31):
                tau = last_spike_time(raster[k], t)
                expect = raster[:, tau - 1 : t - 1].sum(axis=1)
                np.testing.assert_array_equal(w[k, t - 1], expect)

    def test_voltage_empty_window_gives_half_rate(self):
        tr = SpikeTrial(np.zeros((2, 3), dtype=int))
        beta = np.array([[5.0, -3.0], [1.0, 2.0]])
        assert voltage(tr, beta, 1, 1) == 0.0  # logistic(0) = 0.5


class TestLogLikelihood:
    def test_normalizes_over_all_rasters(self):
        """Summing the likelihood over every K=2, T=3 raster must give 1."""
        rng = np.random.default_rng(67)
        for _ in range(20):
            beta = rng.normal(0.0, 1.5, (2, 2))
            total = 0.0
            for bits in itertools.product([0, 1], repeat=6):
                raster = np.array(bits).reshape(2, 3)
                total += math.exp(log_likelihood(SpikeTrial(raster), beta))
            assert abs(total - 1.0) < 1e-10

    def test_single_neuron_normalizes(self):
        rng = np.random.default_rng(71)
        for _ in range(5):
            beta = rng.normal(0.0, 1.0, (1, 1))
            total = sum(
                math.exp(log_likelihood(SpikeTrial(np.array(bits).reshape(1, 3)), beta))
                for bits in itertools.product([0, 1], repeat=3)
            )
            assert abs(total - 1.0) < 1e-10


class TestSimulateRasters:
    def test_frequencies_match_model(self):
        """Empirical firing rates agree with exact enumeration probabilities."""
        beta = np.array([[0.8, -0.5], [0.4, 0.6]])
        t_n = 4
        m = 4000
        rasters = simulate_rasters(np.repeat(beta[None], m, axis=0), t_n, np.random.default_rng(73))
        emp = rasters.mean(axis=0)  # (K, T) firing frequency per time
        # exact marginals by enumerating all rasters
        exact = np.zeros((2, t_n))
        for bits in itertools.product([0, 1], repeat=2 * t_n):
            r = np.array(bits).reshape(2, t_n)
            pr = math.exp(log_likelihood(SpikeTrial(r), beta))
            exact += pr * r
        se = np.sqrt(exact * (1 - exact) / m)
        assert np.all(np.abs(emp - exact) < 3 * np.maximum(se, 1e-3))

    def test_deterministic(self):
        beta = np.zeros((2, 2))
        a = simulate_rasters(beta, 10, np.random.default_rng(5))
        b = simulate_rasters(beta, 10, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)


class TestMetropolis:
    def test_no_retained_draws_is_config_error(self):
        tr = SpikeTrial(np.zeros((1, 4), dtype=int))
        with pytest.raises(ConfigError, match="retained"):
            metropolis_fit(tr, 0.0, 1.0, MetropolisConfig(iters=0, burn=0))

    def test_acceptance_rate_reasonable(self):
        rng = np.random.default_rng(79)
        beta = np.array([[0.5, -0.5], [0.5, 0.5]])
        raster = simulate_rasters(beta, 300, rng)[0]
        fit = metropolis_fit(SpikeTrial(raster), 0.0, 1.0, MetropolisConfig(iters=4000, burn=2000, seed=3))
        assert 0.08 < fit.acceptance_rate < 0.6

    def test_single_neuron_posterior_matches_grid(self):
        """K=1 reduces to a one-dimensional posterior checkable on a grid."""
        rng = np.random.default_rng(83)
        beta_true = np.array([[0.9]])
        raster = simulate_rasters(beta_true, 400, rng)[0]
        trial = SpikeTrial(raster)
        w = window_sums(raster)[0, :, 0]
        y = raster[0].astype(float)
        # dense-grid normalization; the posterior is narrow, so adaptive
        # quadrature with default nodes can miss the peak entirely
        b = np.linspace(-6.0, 6.0, 20001)
        lp = (y[None, :] * (b[:, None] * w[None, :]) - np.logaddexp(0.0, b[:, None] * w[None, :])).sum(axis=1)
        lp = lp - 0.5 * b ** 2
        p = np.exp(lp - lp.max())
        p /= p.sum()
        exact_mean = float((b * p).sum())
        exact_sd = math.sqrt(float((b * b * p).sum()) - exact_mean ** 2)
        fit = metropolis_fit(trial, 0.0, 1.0, MetropolisConfig(iters=30000, burn=5000, seed=17))
        chain = fit.draws[:, 0, 0]
        rho = np.corrcoef(chain[:-1], chain[1:])[0, 1]
        ess = len(chain) * (1 - rho) / (1 + rho)
        se = exact_sd / math.sqrt(max(ess, 20.0))
        assert abs(chain.mean() - exact_mean) < 4 * se
        assert abs(chain.std() - exact_sd) < 0.1 * exact_sd + 4 * se

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(89)
        raster = (rng.random((2, 50)) < 0.3).astype(int)
        cfg = MetropolisConfig(iters=500, burn=100, seed=23)
        a = metropolis_fit(SpikeTrial(raster), 0.0, 1.0, cfg)
        b = metropolis_fit(SpikeTrial(raster), 0.0, 1.0, cfg)
        np.testing.assert_array_equal(a.draws, b.draws)


class TestFitSequence:
    def _trials(self, betas, t_n, seed):
        rng = np.random.default_rng(seed)
        out = []
        for i, beta in enumerate(betas):
            raster = simulate_rasters(np.asarray(beta), t_n, rng)[0]
            out.append(SpikeTrial(raster, trial_id=i + 1))
        return out

    def test_two_identical_trials_usually_accepted(self):
        beta = np.array([[0.4, 0.2], [-0.3, 0.5]])
        trials = self._trials([beta, beta], 250, seed=97)
        res = fit_sequence(
            trials,
            KlTestConfig(alpha=0.05, m_draws=150, seed=4),
            MetropolisConfig(iters=4000, burn=2000, seed=0),
        )
        assert len(res.per_trial) == 2
        assert res.trace.detections[0][1].detected is False

    def test_sign_flip_detected(self):
        beta1 = np.array([[0.5, 1.5], [1.5, 0.5]])
        beta2 = np.array([[0.5, -1.5], [-1.5, 0.5]])
        trials = self._trials([beta1, beta2], 600, seed=101)
        res = fit_sequence(
            trials,
            KlTestConfig(alpha=0.05, m_draws=150, seed=6),
            MetropolisConfig(iters=5000, burn=2500, seed=0),
        )
        assert res.trace.changepoints == (2,)

    def test_alpha_zero_never_detects(self):
        beta = np.array([[0.4]])
        trials = self._trials([beta, beta * -2.0], 120, seed=103)
        res = fit_sequence(
            trials,
            KlTestConfig(alpha=0.0, m_draws=50, seed=1),
            MetropolisConfig(iters=800, burn=400, seed=0),
        )
        assert res.trace.changepoints == ()


class TestSignificanceSummary:
    def test_planted_edges_flagged(self):
        rng = np.random.default_rng(107)
        # mild enough that the inhibited neuron still fires and both
        # off-diagonal effects stay identifiable
        beta = np.array([[0.2, 1.2], [-0.6, 0.6]])
        raster = simulate_rasters(beta, 800, rng)[0]
        fit = metropolis_fit(SpikeTrial(raster), 0.0, 1.0, MetropolisConfig(iters=8000, burn=4000, seed=9))
        summary = significance_summary([fit])
        assert summary.excitatory_prop[0, 1] == 1.0
        assert summary.inhibitory_prop[1, 0] == 1.0
        assert summary.intervals.shape == (1, 2, 2, 2)

    def test_empty_input_rejected(self):
        with pytest.raises(ConfigError):
            significance_summary([])
