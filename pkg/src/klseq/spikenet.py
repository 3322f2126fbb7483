"""Bernoulli-with-renewal spiking-network model.

A trial is a K x T binary raster.  Neuron k's membrane voltage at time t
accumulates, with weight beta[k, l], the spikes of every neuron l over the
window running from k's last spike (inclusive) up to t - 1; firing
probabilities are the logistic transform of the voltage.  Coefficients are
fit per trial by a neuron-wise random-scan Metropolis sampler, and KL testing
with per-coefficient moment-matched transfer priors links consecutive trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .errors import ConfigError, DomainError, KlseqError, NumericError
from .kltest import (
    KlDecision,
    KlTestConfig,
    ParamDraws,
    decide,
    interval_from_null_sample,
    kl_monte_carlo,
    substream,
)


@dataclass(frozen=True)
class SpikeTrial:
    raster: np.ndarray  # (K, T) of {0, 1}
    trial_id: int = 0

    def __post_init__(self):
        r = np.asarray(self.raster)
        if r.ndim != 2 or r.size == 0:
            raise DomainError("raster must be a nonempty K x T matrix")
        bad = (r != 0) & (r != 1)
        if np.any(bad):
            k, t = np.argwhere(bad)[0]
            raise DomainError(f"raster entry at neuron {k + 1}, time {t + 1} is not binary")
        object.__setattr__(self, "raster", r.astype(np.int8))

    @property
    def n_neurons(self) -> int:
        return self.raster.shape[0]

    @property
    def n_times(self) -> int:
        return self.raster.shape[1]


@dataclass(frozen=True)
class MetropolisConfig:
    iters: int = 25000
    burn: int = 5000
    proposal_sd: float = 0.5
    adapt: bool = True
    seed: int = 0
    thin: int = 1

    def __post_init__(self):
        if not self.iters >= self.burn >= 0:
            raise ConfigError("metropolis config requires iters >= burn >= 0")
        if not self.proposal_sd > 0:
            raise ConfigError("proposal_sd must be positive")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")


@dataclass(frozen=True)
class MetropolisResult:
    draws: np.ndarray  # (R, K, K) retained coefficient matrices
    acceptance_rate: float
    proposal_sd: np.ndarray  # final per-neuron proposal scales


@dataclass(frozen=True)
class NetworkSummary:
    excitatory_prop: np.ndarray  # (K, K) in [0, 1]
    inhibitory_prop: np.ndarray  # (K, K) in [0, 1]
    intervals: np.ndarray  # (n_trials, K, K, 2) per-trial 95% coefficient intervals


def last_spike_time(row: Sequence[int], t: int) -> int:
    """Last spiking time of a neuron strictly before time t (1-based); 1 if none."""
    row = np.asarray(row)
    if not 1 <= t <= row.size:
        raise DomainError(f"time index {t} outside 1..{row.size}")
    if t == 1:
        return 1
    prior = np.flatnonzero(row[: t - 1])
    return int(prior[-1]) + 1 if prior.size else 1


def window_sums(raster: np.ndarray) -> np.ndarray:
    """W[k, t-1, l] = sum of neuron l's spikes over [tau(k, t), t - 1].

    The window starts at neuron k's last spike (inclusive) and excludes t.
    Shape (K, T, K).
    """
    y = np.asarray(raster)
    k_n, t_n = y.shape
    csum = np.concatenate([np.zeros((k_n, 1)), np.cumsum(y, axis=1)], axis=1)  # csum[l, t] = sum_{w<=t}
    # last spike strictly before each t, per neuron; 0 when none
    idx = np.arange(1, t_n + 1)
    spike_pos = np.where(y == 1, idx, 0)
    last = np.concatenate([np.zeros((k_n, 1), dtype=int), np.maximum.accumulate(spike_pos, axis=1)[:, :-1]], axis=1)
    tau = np.maximum(last, 1)  # (K, T): tau for each (k, t)
    w = np.empty((k_n, t_n, k_n))
    for k in range(k_n):
        w[k] = (csum[:, idx - 1] - csum[:, tau[k] - 1]).T
    return w


def voltage(trial: SpikeTrial, beta: np.ndarray, k: int, t: int) -> float:
    """Membrane voltage of neuron k (1-based) at time t (1-based)."""
    if not 1 <= t <= trial.n_times:
        raise DomainError(f"time index {t} outside 1..{trial.n_times}")
    w = window_sums(trial.raster)
    return float(np.asarray(beta, dtype=float)[k - 1] @ w[k - 1, t - 1])


def log_likelihood(trial: SpikeTrial, beta: np.ndarray) -> float:
    """Joint Bernoulli log-likelihood of the raster under the logistic link."""
    w = window_sums(trial.raster)
    v = np.einsum("ktl,kl->kt", w, np.asarray(beta, dtype=float))
    y = trial.raster
    return float((y * v).sum() - np.logaddexp(0.0, v).sum())


def _neuron_loglik(w_k: np.ndarray, y_k: np.ndarray, beta_row: np.ndarray) -> float:
    v = w_k @ beta_row
    return float(y_k @ v - np.logaddexp(0.0, v).sum())


def metropolis_fit(
    trials: Sequence[SpikeTrial] | SpikeTrial,
    prior_mean: np.ndarray,
    prior_sd: np.ndarray,
    cfg: MetropolisConfig,
) -> MetropolisResult:
    """Neuron-wise random-scan Metropolis over the K x K coefficient matrix.

    Each iteration proposes a joint Gaussian random-walk move on one uniformly
    chosen target row; the acceptance ratio uses only that neuron's likelihood
    terms and its independent-normal row prior.  Proposal scales adapt toward
    ~0.23 acceptance during burn-in and are frozen afterwards.
    """
    if isinstance(trials, SpikeTrial):
        trials = [trials]
    k_n = trials[0].n_neurons
    if any(tr.n_neurons != k_n for tr in trials):
        raise DomainError("all trials must share the same number of neurons")
    prior_mean = np.broadcast_to(np.asarray(prior_mean, dtype=float), (k_n, k_n)).copy()
    prior_sd = np.broadcast_to(np.asarray(prior_sd, dtype=float), (k_n, k_n)).copy()
    if np.any(prior_sd <= 0):
        raise ConfigError("prior standard deviations must be positive")
    # concatenate trials along time: per-neuron likelihood factorizes over rows
    w_all = [np.concatenate([window_sums(tr.raster)[k] for tr in trials], axis=0) for k in range(k_n)]
    y_all = [np.concatenate([tr.raster[k] for tr in trials]).astype(float) for k in range(k_n)]
    rng = substream(cfg.seed)
    beta = prior_mean.copy()
    cur_ll = np.array([_neuron_loglik(w_all[k], y_all[k], beta[k]) for k in range(k_n)])
    scales = np.full(k_n, cfg.proposal_sd)
    n_keep = (cfg.iters - cfg.burn) // cfg.thin
    if n_keep < 1:
        raise ConfigError("no retained draws: need iters > burn (after thinning)")
    draws = np.empty((n_keep, k_n, k_n))
    kept = 0
    accepted = 0
    block_acc = np.zeros(k_n)
    block_tot = np.zeros(k_n)
    for it in range(cfg.iters):
        k = int(rng.integers(k_n))
        prop = beta[k] + scales[k] * rng.standard_normal(k_n)
        prop_ll = _neuron_loglik(w_all[k], y_all[k], prop)
        d_prior = -0.5 * (np.square((prop - prior_mean[k]) / prior_sd[k]).sum() - np.square((beta[k] - prior_mean[k]) / prior_sd[k]).sum())
        log_ratio = prop_ll - cur_ll[k] + d_prior
        if not np.isfinite(log_ratio) and not log_ratio == -np.inf:
            raise NumericError(f"nonfinite acceptance ratio at iteration {it}")
        block_tot[k] += 1
        if np.log(rng.random()) < log_ratio:
            beta[k] = prop
            cur_ll[k] = prop_ll
            accepted += 1
            block_acc[k] += 1
        if cfg.adapt and it < cfg.burn and (it + 1) % 100 == 0:
            done = block_tot > 0
            rate = np.where(done, block_acc / np.maximum(block_tot, 1), 0.23)
            scales[done] *= np.exp(rate[done] - 0.23)
            block_acc[:] = 0
            block_tot[:] = 0
        if it >= cfg.burn and (it - cfg.burn) % cfg.thin == 0 and kept < n_keep:
            draws[kept] = beta
            kept += 1
    rate = accepted / cfg.iters if cfg.iters else 0.0
    return MetropolisResult(draws[:kept], rate, scales)


def simulate_rasters(betas: np.ndarray, t_n: int, rng: np.random.Generator) -> np.ndarray:
    """Generate one K x T pseudo-raster per coefficient matrix, column by column.

    ``betas`` has shape (M, K, K); the result has shape (M, K, T).
    """
    betas = np.asarray(betas, dtype=float)
    if betas.ndim == 2:
        betas = betas[None]
    m, k_n, _ = betas.shape
    out = np.zeros((m, k_n, t_n), dtype=np.int8)
    w = np.zeros((m, k_n, k_n))
    for t in range(t_n):
        v = np.einsum("mkl,mkl->mk", betas, w)
        pi = expit(v)
        y_t = (rng.random((m, k_n)) < pi)
        out[:, :, t] = y_t
        add = y_t[:, None, :].astype(float)
        w = np.where(y_t[:, :, None], add, w + add)
    return out


@dataclass(frozen=True)
class SpikeTrace:
    detections: tuple[tuple[int, KlDecision], ...] = ()

    @property
    def changepoints(self) -> tuple[int, ...]:
        return tuple(step for step, d in self.detections if d.detected)


@dataclass(frozen=True)
class SequenceResult:
    per_trial: tuple[MetropolisResult, ...]
    trace: SpikeTrace


def _loglik_matrix(rasters: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """Log-likelihood of each raster under each beta; shapes (B,K,T), (M,K,K) -> (B, M)."""
    b = rasters.shape[0]
    w_stack = np.stack([window_sums(rasters[i]) for i in range(b)])  # (B, K, T, K)
    y = rasters.astype(float)
    out = np.empty((b, betas.shape[0]))
    for j in range(betas.shape[0]):
        v = np.einsum("bktl,kl->bkt", w_stack, betas[j])
        out[:, j] = (y * v).sum(axis=(1, 2)) - np.logaddexp(0.0, v).sum(axis=(1, 2))
    return out


def fit_sequence(
    trials: Sequence[SpikeTrial],
    cfg: KlTestConfig,
    mcfg: MetropolisConfig,
    prior_mean: float | np.ndarray = 0.0,
    prior_sd: float | np.ndarray = 1.0,
) -> SequenceResult:
    """Fit consecutive trials, KL-testing each new trial against the current draws."""
    if not trials:
        raise ConfigError("need at least one trial")
    k_n = trials[0].n_neurons
    prior = (
        np.broadcast_to(np.asarray(prior_mean, dtype=float), (k_n, k_n)).copy(),
        np.broadcast_to(np.asarray(prior_sd, dtype=float), (k_n, k_n)).copy(),
    )
    segment: list[SpikeTrial] = [trials[0]]
    fits: list[MetropolisResult] = []
    detections: list[tuple[int, KlDecision]] = []
    fit = metropolis_fit(segment, prior[0], prior[1], _keyed(mcfg, cfg.seed, 1))
    fits.append(fit)
    detections.append((1, KlDecision(0.0, -math.inf, math.inf, False, 0)))
    for i, trial in enumerate(trials[1:], start=2):
        try:
            sub = fit.draws[-min(cfg.m_draws, len(fit.draws)):]
            if len(sub) == 0:
                raise ConfigError(f"no retained draws available to test trial {i}")
            obs_ll = _loglik_matrix(trial.raster[None], sub)[0]
            stat = kl_monte_carlo(ParamDraws(sub, "mcmc"), obs_ll)
            if cfg.alpha == 0.0:
                interval = (-math.inf, math.inf)
            else:
                rng = substream(cfg.seed, i)
                pseudo = simulate_rasters(sub, trial.n_times, rng)
                ll = _loglik_matrix(pseudo, sub)
                nulls = logsumexp(ll, axis=1) - math.log(len(sub)) - ll.mean(axis=1)
                interval = interval_from_null_sample(nulls, cfg.alpha)
            decision = decide(stat, interval, len(sub))
            detections.append((i, decision))
            if decision.detected:
                prior = (fit.draws.mean(axis=0), fit.draws.std(axis=0, ddof=1))
                segment = [trial]
            else:
                segment.append(trial)
            fit = metropolis_fit(segment, prior[0], prior[1], _keyed(mcfg, cfg.seed, i))
            fits.append(fit)
        except KlseqError as exc:
            raise type(exc)(f"trial {i}: {exc}") from exc
    return SequenceResult(tuple(fits), SpikeTrace(tuple(detections)))


def _keyed(mcfg: MetropolisConfig, seed: int, step: int) -> MetropolisConfig:
    derived = int(np.random.SeedSequence([int(seed) & (2**63 - 1), 11, step, mcfg.seed]).generate_state(1)[0])
    return MetropolisConfig(mcfg.iters, mcfg.burn, mcfg.proposal_sd, mcfg.adapt, derived, mcfg.thin)


def significance_summary(per_trial: Sequence[MetropolisResult]) -> NetworkSummary:
    """Fraction of trials with the 95% coefficient interval entirely above/below zero."""
    if not per_trial:
        raise ConfigError("need at least one fitted trial")
    intervals = np.stack(
        [np.quantile(fit.draws, [0.025, 0.975], axis=0).transpose(1, 2, 0) for fit in per_trial]
    )  # (n_trials, K, K, 2)
    excitatory = (intervals[..., 0] > 0).mean(axis=0)
    inhibitory = (intervals[..., 1] < 0).mean(axis=0)
    return NetworkSummary(excitatory, inhibitory, intervals)
