"""Multivariate Gaussian model with Normal-inverse-Wishart structure.

The data batches are n x p matrices modeled as i.i.d. N(mu, Sigma) rows.
Posterior inference alternates Gibbs full-conditional draws of mu | Sigma and
Sigma | mu; change-point testing uses the Monte-Carlo KL statistic over the
retained draws, and upon detection the prior is rebuilt by matching the
inverse-Wishart expectation of Sigma and the location to the estimated
posterior means.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import logsumexp

from .errors import ConfigError, KlseqError, NumericError
from .kltest import KlDecision, KlTestConfig, ParamDraws, decide, interval_from_null_sample, kl_monte_carlo, substream

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NiwParams:
    location: np.ndarray  # (p,)
    scale_matrix: np.ndarray  # (p, p), SPD
    kappa: float
    dof: float

    @property
    def dim(self) -> int:
        return len(self.location)

    def __post_init__(self):
        object.__setattr__(self, "location", np.asarray(self.location, dtype=float))
        object.__setattr__(self, "scale_matrix", np.asarray(self.scale_matrix, dtype=float))
        p = self.dim
        if self.scale_matrix.shape != (p, p):
            raise ConfigError("scale_matrix shape does not match the location dimension")
        if not np.allclose(self.scale_matrix, self.scale_matrix.T, atol=1e-10):
            raise ConfigError("scale_matrix must be symmetric")
        try:
            np.linalg.cholesky(self.scale_matrix)
        except np.linalg.LinAlgError as exc:
            raise ConfigError("scale_matrix must be positive-definite") from exc
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        if not self.dof > p + 1:
            raise ConfigError(f"dof must exceed p + 1 = {p + 1} so the inverse-Wishart mean exists")

    def sigma_expectation(self) -> np.ndarray:
        return self.scale_matrix / (self.dof - self.dim - 1.0)


@dataclass(frozen=True)
class MvBatch:
    observations: np.ndarray  # (n, p)

    def __post_init__(self):
        obs = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if obs.size == 0 or not np.all(np.isfinite(obs)):
            raise ConfigError("batch must be a nonempty finite n x p matrix")
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]


@dataclass(frozen=True)
class MvPosteriorDraws:
    mus: np.ndarray  # (M, p)
    sigmas: np.ndarray  # (M, p, p)

    @property
    def retained(self) -> int:
        return len(self.mus)


@dataclass(frozen=True)
class GibbsConfig:
    iters: int = 1000
    burn: int = 500

    def __post_init__(self):
        if not self.iters > self.burn >= 0:
            raise ConfigError("gibbs config requires iters > burn >= 0")


def _inv_wishart_rvs(dof: float, psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One inverse-Wishart draw via the Bartlett decomposition."""
    p = psi.shape[0]
    inv_psi = cho_solve(cho_factor(psi, lower=True), np.eye(p))
    l = np.linalg.cholesky(inv_psi)
    a = np.zeros((p, p))
    a[np.diag_indices(p)] = np.sqrt(rng.chisquare(dof - np.arange(p)))
    if p > 1:
        a[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    w = l @ a
    w = w @ w.T
    return cho_solve(cho_factor(w, lower=True), np.eye(p))


def niw_posterior(prior: NiwParams, data: np.ndarray) -> NiwParams:
    """Closed-form conjugate NIW posterior given stacked observations."""
    y = np.atleast_2d(np.asarray(data, dtype=float))
    n = y.shape[0]
    ybar = y.mean(axis=0)
    kappa_n = prior.kappa + n
    loc_n = (prior.kappa * prior.location + n * ybar) / kappa_n
    centered = y - ybar
    scatter = centered.T @ centered
    dev = (ybar - prior.location)[:, None]
    psi_n = prior.scale_matrix + scatter + (prior.kappa * n / kappa_n) * (dev @ dev.T)
    return NiwParams(loc_n, psi_n, kappa_n, prior.dof + n)


def gibbs_fit(
    prior: NiwParams,
    batch: MvBatch,
    iters: int,
    burn: int,
    seed: int,
) -> MvPosteriorDraws:
    """Gibbs sampler alternating mu | Sigma, data and Sigma | mu, data."""
    if not iters > burn >= 0:
        raise ConfigError("gibbs_fit requires iters > burn >= 0")
    y = batch.observations
    n, p = y.shape
    rng = substream(seed)
    m0, psi0, kappa0, dof0 = prior.location, prior.scale_matrix, prior.kappa, prior.dof
    ybar = y.mean(axis=0)
    kappa_n = kappa0 + n
    mu_cond_mean = (kappa0 * m0 + n * ybar) / kappa_n
    sigma = prior.sigma_expectation()
    mus = np.empty((iters - burn, p))
    sigmas = np.empty((iters - burn, p, p))
    for it in range(iters):
        try:
            l = np.linalg.cholesky(sigma / kappa_n)
            mu = mu_cond_mean + l @ rng.standard_normal(p)
            resid = y - mu
            dev = (mu - m0)[:, None]
            psi_full = psi0 + kappa0 * (dev @ dev.T) + resid.T @ resid
            sigma = _inv_wishart_rvs(dof0 + n + 1.0, psi_full, rng)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"Cholesky failure at Gibbs iteration {it}") from exc
        if it >= burn:
            mus[it - burn] = mu
            sigmas[it - burn] = sigma
    return MvPosteriorDraws(mus, sigmas)


def niw_moment_match(draws: MvPosteriorDraws, dof: float) -> NiwParams:
    """Transfer prior whose marginal expectations match the draw moments.

    The scale matrix is (dof - p - 1) times the estimated posterior mean of
    Sigma so that the inverse-Wishart prior expectation of Sigma reproduces
    that estimate; the location precision multiplier is reset to 1.
    """
    if draws.retained == 0:
        raise ConfigError("cannot moment-match an empty draw set")
    p = draws.mus.shape[1]
    if not dof > p + 1:
        raise ConfigError(f"dof must exceed p + 1 = {p + 1}")
    location = draws.mus.mean(axis=0)
    mean_sigma = draws.sigmas.mean(axis=0)
    mean_sigma = 0.5 * (mean_sigma + mean_sigma.T)
    try:
        np.linalg.cholesky(mean_sigma)
    except np.linalg.LinAlgError:
        warnings.warn("mean of Sigma draws not positive-definite; projecting to nearest SPD")
        vals, vecs = np.linalg.eigh(mean_sigma)
        vals = np.maximum(vals, 1e-10 * max(vals.max(), 1.0))
        mean_sigma = (vecs * vals) @ vecs.T
    return NiwParams(location, (dof - p - 1.0) * mean_sigma, 1.0, dof)


def mvn_loglik_matrix(batches: np.ndarray, draws: MvPosteriorDraws) -> np.ndarray:
    """Log-likelihood of each (n, p) batch under each (mu, Sigma) draw.

    ``batches`` has shape (B, n, p); the result has shape (B, M).
    """
    b, n, p = batches.shape
    flat = batches.reshape(b * n, p)
    out = np.empty((b, draws.retained))
    for j in range(draws.retained):
        l = np.linalg.cholesky(draws.sigmas[j])
        z = solve_triangular(l, (flat - draws.mus[j]).T, lower=True)
        quad = np.square(z).sum(axis=0).reshape(b, n).sum(axis=1)
        logdet = 2.0 * np.log(np.diag(l)).sum()
        out[:, j] = -0.5 * quad - 0.5 * n * (logdet + p * _LOG_2PI)
    return out


@dataclass(frozen=True)
class MvTrace:
    detections: tuple[tuple[int, KlDecision], ...] = ()
    means: tuple[np.ndarray, ...] = ()
    covariances: tuple[np.ndarray, ...] = ()

    @property
    def changepoints(self) -> tuple[int, ...]:
        return tuple(step for step, d in self.detections if d.detected)

    def __len__(self):
        return len(self.detections)


@dataclass(frozen=True)
class MvEngineState:
    prior: NiwParams  # prior of the current segment
    draws: Optional[MvPosteriorDraws] = None
    segment: tuple[np.ndarray, ...] = ()
    last_cp: int = 1
    step: int = 0
    trace: MvTrace = field(default_factory=MvTrace)


_FIRST_STEP = KlDecision(0.0, -math.inf, math.inf, False, 0)


def mv_init(prior: NiwParams) -> MvEngineState:
    return MvEngineState(prior=prior)


def _refit(prior: NiwParams, segment: Sequence[np.ndarray], gibbs: GibbsConfig, seed: int, step_idx: int) -> MvPosteriorDraws:
    data = np.concatenate(segment, axis=0)
    return gibbs_fit(prior, MvBatch(data), gibbs.iters, gibbs.burn, seed=_gibbs_seed(seed, step_idx))


def _gibbs_seed(seed: int, step_idx: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**63 - 1), 7, step_idx]).generate_state(1)[0])


def mv_step(state: MvEngineState, batch: MvBatch, cfg: KlTestConfig, gibbs: GibbsConfig) -> MvEngineState:
    idx = state.step + 1
    try:
        if idx == 1 or state.draws is None:
            decision = _FIRST_STEP
            prior, segment = state.prior, state.segment + (batch.observations,)
            last_cp = state.last_cp
        else:
            draws = state.draws
            if cfg.alpha == 0.0:
                interval = (-math.inf, math.inf)
            else:
                rng = substream(cfg.seed, idx)
                pseudo = _simulate_batches(draws, batch.n, rng)
                ll = mvn_loglik_matrix(pseudo, draws)
                m = draws.retained
                nulls = logsumexp(ll, axis=1) - math.log(m) - ll.mean(axis=1)
                interval = interval_from_null_sample(nulls, cfg.alpha)
            obs_ll = mvn_loglik_matrix(batch.observations[None, :, :], state.draws)[0]
            stat = kl_monte_carlo(ParamDraws(state.draws.mus, "mcmc"), obs_ll)
            decision = decide(stat, interval, state.draws.retained)
            if decision.detected:
                prior = niw_moment_match(state.draws, dof=state.prior.dof)
                segment = (batch.observations,)
                last_cp = idx
            else:
                prior, segment = state.prior, state.segment + (batch.observations,)
                last_cp = state.last_cp
        draws = _refit(prior, segment, gibbs, cfg.seed, idx)
        mean_est = draws.mus.mean(axis=0)
        cov_est = draws.sigmas.mean(axis=0)
    except KlseqError as exc:
        raise type(exc)(f"step {idx}: {exc}") from exc
    trace = MvTrace(
        state.trace.detections + ((idx, decision),),
        state.trace.means + (mean_est,),
        state.trace.covariances + (cov_est,),
    )
    return MvEngineState(prior=prior, draws=draws, segment=segment, last_cp=last_cp, step=idx, trace=trace)


def _simulate_batches(draws: MvPosteriorDraws, n: int, rng: np.random.Generator) -> np.ndarray:
    """One pseudo (n, p) batch per retained draw; shape (M, n, p)."""
    m, p = draws.mus.shape
    z = rng.standard_normal((m, n, p))
    chols = np.linalg.cholesky(draws.sigmas)
    return draws.mus[:, None, :] + np.einsum("mij,mnj->mni", chols, z)


def mv_run(
    batches: Sequence[MvBatch],
    prior: NiwParams,
    cfg: KlTestConfig,
    gibbs: Optional[GibbsConfig] = None,
) -> MvTrace:
    gibbs = gibbs or GibbsConfig()
    state = mv_init(prior)
    for batch in batches:
        state = mv_step(state, batch, cfg, gibbs)
    return state.trace
