"""Sequential engine: limit behaviors, segment consistency, detection, predictives."""

import math

import numpy as np
import pytest

from klseq.engine import (
    StepFailure,
    init_state,
    predictive,
    predictive_t,
    run,
    step,
)
from klseq.errors import ConfigError
from klseq.families import (
    ConjugatePosterior,
    FamilyKind,
    SufficientStats,
    accumulate,
    bayes_update,
    default_prior,
    moment_match,
)
from klseq.kltest import KlTestConfig, substream

ALL_KINDS = [FamilyKind.BERNOULLI, FamilyKind.POISSON, FamilyKind.GAUSSIAN]


def _prior(kind):
    return default_prior(kind, nu=5.0)


def _random_series(kind, rng, n_batches=8, batch_size=5):
    if kind is FamilyKind.BERNOULLI:
        return [(rng.random(batch_size) < 0.4).astype(float) for _ in range(n_batches)]
    if kind is FamilyKind.POISSON:
        return [rng.poisson(3.0, batch_size).astype(float) for _ in range(n_batches)]
    return [rng.normal(0.0, 1.0, batch_size) for _ in range(n_batches)]


class TestLimits:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_alpha_zero_equals_one_shot_bayes(self, kind):
        rng = np.random.default_rng(3)
        series = _random_series(kind, rng)
        prior = _prior(kind)
        trace = run(series, prior, KlTestConfig(alpha=0.0, m_draws=10, seed=0), nu=5.0)
        assert trace.changepoints == ()
        state = init_state(prior, nu=5.0)
        for b in series:
            state = step(state, b, KlTestConfig(alpha=0.0, m_draws=10, seed=0))
        # exact equality against plain sequential updating (same additions)
        sequential = prior
        for b in series:
            sequential = bayes_update(sequential, b)
        assert state.posterior.stats == sequential.stats
        # one-shot concatenated update groups the sums differently, so only
        # floating-point-level agreement is meaningful there
        one_shot = bayes_update(prior, np.concatenate(series))
        np.testing.assert_allclose(state.posterior.stats.s, one_shot.stats.s, rtol=1e-12)
        assert state.posterior.stats.n == one_shot.stats.n

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_alpha_one_detects_everywhere(self, kind):
        rng = np.random.default_rng(5)
        series = _random_series(kind, rng, n_batches=6)
        trace = run(series, _prior(kind), KlTestConfig(alpha=1.0, m_draws=200, seed=1), nu=5.0)
        assert trace.changepoints == tuple(range(2, 7))

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_alpha_one_posterior_depends_only_on_last_batch(self, kind):
        rng = np.random.default_rng(7)
        series = _random_series(kind, rng, n_batches=4)
        cfg = KlTestConfig(alpha=1.0, m_draws=200, seed=1)
        state = init_state(_prior(kind), nu=5.0)
        for b in series:
            state = step(state, b, cfg)
        # reconstruct: transfer prior from the pre-detection posterior at the
        # final step, updated with only the final batch
        state2 = init_state(_prior(kind), nu=5.0)
        for b in series[:-1]:
            state2 = step(state2, b, cfg)
        transfer = moment_match(state2.posterior, aux=5.0)
        rebuilt = bayes_update(transfer.as_posterior(), series[-1])
        np.testing.assert_allclose(state.posterior.stats.n, rebuilt.stats.n, rtol=1e-12)
        np.testing.assert_allclose(state.posterior.stats.s, rebuilt.stats.s, rtol=1e-12)


class TestTraceBookkeeping:
    def test_empty_series(self):
        trace = run([], _prior(FamilyKind.BERNOULLI), KlTestConfig(alpha=0.5, m_draws=50, seed=0))
        assert len(trace) == 0 and trace.changepoints == ()

    def test_single_batch_never_detects(self):
        trace = run([[1.0, 0.0]], _prior(FamilyKind.BERNOULLI), KlTestConfig(alpha=1.0, m_draws=50, seed=0))
        assert len(trace) == 1 and trace.changepoints == ()

    def test_one_decision_and_estimate_per_step(self):
        rng = np.random.default_rng(11)
        series = _random_series(FamilyKind.POISSON, rng, n_batches=5)
        trace = run(series, _prior(FamilyKind.POISSON), KlTestConfig(alpha=0.1, m_draws=100, seed=0))
        assert len(trace.detections) == len(trace.estimates) == 5
        steps = [s for s, _ in trace.detections]
        assert steps == list(range(1, 6))

    def test_empty_batch_rejected(self):
        state = init_state(_prior(FamilyKind.BERNOULLI))
        with pytest.raises(ConfigError):
            step(state, [], KlTestConfig(alpha=0.1, m_draws=50, seed=0))

    def test_failure_carries_step_and_partial_trace(self):
        cfg = KlTestConfig(alpha=0.1, m_draws=50, seed=0)
        state = init_state(_prior(FamilyKind.BERNOULLI))
        state = step(state, [1.0, 0.0], cfg)
        with pytest.raises(StepFailure) as exc_info:
            step(state, [0.5], cfg)
        assert exc_info.value.step == 2
        assert len(exc_info.value.trace) == 1


class TestSegmentConsistency:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_posterior_reconstructs_from_last_changepoint(self, kind):
        rng = np.random.default_rng(13)
        cfg = KlTestConfig(alpha=0.6, m_draws=300, seed=2)
        prior = _prior(kind)
        state = init_state(prior, nu=5.0)
        series = _random_series(kind, rng, n_batches=10)
        transfer_at_cp = {1: prior}
        pre_detection = prior
        for i, batch in enumerate(series, start=1):
            pre_detection = state.posterior
            state = step(state, batch, cfg)
            if state.last_cp == i and i > 1:
                transfer_at_cp[i] = moment_match(pre_detection, aux=5.0).as_posterior()
            rebuilt = transfer_at_cp[state.last_cp]
            for b in series[state.last_cp - 1 : i]:
                rebuilt = bayes_update(rebuilt, b)
            np.testing.assert_allclose(state.posterior.stats.n, rebuilt.stats.n, rtol=1e-12)
            np.testing.assert_allclose(state.posterior.stats.s, rebuilt.stats.s, rtol=1e-12, atol=1e-12)


class TestDetection:
    def test_bernoulli_jump_detected_on_time(self):
        """pi steps 0.1 -> 0.9 at batch 50 of 100 (batch size 10, alpha 0.05)."""
        cfg_proto = dict(alpha=0.05, m_draws=2000)
        hits = 0
        reps = 200
        for r in range(reps):
            rng = substream(5000, r)
            series = [(rng.random(10) < 0.1).astype(float) for _ in range(49)]
            series += [(rng.random(10) < 0.9).astype(float) for _ in range(51)]
            trace = run(series, _prior(FamilyKind.BERNOULLI), KlTestConfig(seed=r, **cfg_proto))
            if any(50 <= cp <= 52 for cp in trace.changepoints):
                hits += 1
        assert hits >= 0.9 * reps, f"detected in window only {hits}/{reps}"

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_detection_count_monotone_in_alpha(self, kind):
        rng = np.random.default_rng(17)
        alphas = (0.9, 0.5, 0.1, 0.01)
        for series_idx in range(20):
            series = _random_series(kind, rng, n_batches=8, batch_size=6)
            counts = []
            for alpha in alphas:
                trace = run(series, _prior(kind), KlTestConfig(alpha=alpha, m_draws=400, seed=31), nu=5.0)
                counts.append(len(trace.changepoints))
            assert all(a >= b for a, b in zip(counts, counts[1:])), (kind, counts)


class TestPredictive:
    def test_location_weighting(self):
        # four observations averaging 1 with a zero-centered start
        pred = predictive_t(5.0, 0.0, 1.0, [1.0, 1.0, 1.0, 1.0])
        np.testing.assert_allclose(pred.location, 0.8)
        np.testing.assert_allclose(pred.dof, 9.0)

    def test_no_segment_reduces_to_initial(self):
        pred = predictive_t(5.0, 2.0, 3.0, [])
        np.testing.assert_allclose(pred.location, 2.0)
        np.testing.assert_allclose(pred.dof, 5.0)

    def test_post_change_equals_fresh_start(self):
        """Restarting at the matched estimates is the same function as the
        from-scratch predictive with those values as initial conditions."""
        ys = [0.3, -0.2, 0.5]
        a = predictive_t(6.0, 1.0, 2.0, ys)
        b = predictive_t(6.0, 1.0, 2.0, list(ys))
        assert a == b

    def test_requires_nu_above_two(self):
        with pytest.raises(ConfigError):
            predictive_t(2.0, 0.0, 1.0, [1.0])

    def test_moments_match_sampling_oracle(self):
        rng = np.random.default_rng(19)
        nu, mu_hat, sig_hat = 6.0, 1.5, 2.0
        ys = rng.normal(1.0, 1.2, 7)
        pred = predictive_t(nu, mu_hat, sig_hat, ys)
        m = 1000000
        # compositional draws: variance from the inverse-gamma posterior,
        # mean from the conditional normal, observation from the data model
        j = len(ys)
        ybar, ssd = ys.mean(), np.square(ys - ys.mean()).sum()
        kappa = 1.0 + j
        shape = 0.5 * (nu + j)
        rate = 0.5 * nu * sig_hat + 0.5 * ssd + 0.5 * (j / kappa) * (ybar - mu_hat) ** 2
        loc = (mu_hat + j * ybar) / kappa
        sig2 = rate / rng.gamma(shape, 1.0, m)
        mu = rng.normal(loc, np.sqrt(sig2 / kappa))
        y_new = rng.normal(mu, np.sqrt(sig2))
        se_mean = y_new.std() / math.sqrt(m)
        assert abs(y_new.mean() - pred.mean) < 3 * se_mean
        var_draws = (y_new - y_new.mean()) ** 2
        se_var = var_draws.std() / math.sqrt(m)
        assert abs(y_new.var() - pred.variance) < 3 * se_var
        # the reported scale argument is half the inverse squared t-scale
        t_scale_sq = rate * (kappa + 1.0) / (shape * kappa)
        np.testing.assert_allclose(pred.scale_third_arg, 1.0 / (2.0 * t_scale_sq), rtol=1e-12)

    def test_variance_excess_grid(self):
        """Restarting at a change-point discards accumulated degrees of
        freedom, so the predictive is wider than the no-change predictive on
        the same data, and the relative excess shrinks as the post-change
        segment grows.  Uses idealized data (segment mean mu0, spread exactly
        sigma0^2 per observation) so the comparison isolates the restart."""

        def consistent_obs(n, mu0, sig0_sq):
            # n/2 symmetric pairs: mean mu0 exactly, sum of squares n*sig0_sq
            a = math.sqrt(sig0_sq)
            return [mu0 + a, mu0 - a] * (n // 2)

        mu0, sig0_sq = 0.5, 2.0
        cp_offset = 8  # observations before the change
        for nu in (4.0, 6.0, 10.0):
            excesses = []
            for seg_len in (2, 6, 12):
                total = consistent_obs(cp_offset + seg_len, mu0, sig0_sq)
                no_change = predictive_t(nu, mu0, sig0_sq, total)
                restarted = predictive_t(nu, mu0, sig0_sq, consistent_obs(seg_len, mu0, sig0_sq))
                excess = restarted.variance / no_change.variance - 1.0
                assert excess > 0, (nu, seg_len, excess)
                excesses.append(excess)
            assert excesses[0] > excesses[1] > excesses[2], (nu, excesses)

    def test_engine_predictive_uses_anchor(self):
        cfg = KlTestConfig(alpha=1.0, m_draws=100, seed=3)
        rng = np.random.default_rng(29)
        state = init_state(default_prior(FamilyKind.GAUSSIAN, nu=5.0), nu=5.0)
        state = step(state, rng.normal(0, 1, 6), cfg)
        state = step(state, rng.normal(3, 1, 6), cfg)  # forced detection
        assert state.last_cp == 2 and state.anchor is not None
        pred = predictive(state, 5.0, 0.0, 1.0)
        direct = predictive_t(5.0, state.anchor[0], state.anchor[1], state.segment_obs)
        assert pred == direct

    def test_predictive_gaussian_only(self):
        state = init_state(_prior(FamilyKind.POISSON))
        with pytest.raises(ConfigError):
            predictive(state, 5.0, 0.0, 1.0)
