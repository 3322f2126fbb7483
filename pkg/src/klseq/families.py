"""Conjugate exponential-family machinery.

Three one-dimensional data families are supported:

* ``bernoulli`` -- binary observations, Beta-conjugate.  Stats are
  ``(n, [S])`` with ``S`` the number of successes; the implied posterior on
  the success probability is ``Beta(S, n - S)``.
* ``poisson`` -- interval counts, Gamma-conjugate.  Each observation is one
  interval count and contributes 1 to ``n``; the posterior on the rate is
  ``Gamma(shape=S, rate=n)``.
* ``gaussian`` -- real observations with a Normal-Gamma conjugate structure.
  Stats are ``(n, [S1, S2])`` holding the sum and the sum of squares.  The
  implied posterior is ``precision ~ Gamma((n+1)/2, Q/2)`` with
  ``Q = S2 - S1**2/n`` and ``mean | precision ~ N(S1/n, 1/(n*precision))``.

All posterior moments are derivatives of the log normalizing constant
``L(n, s) = log c(n, s)``:

* mean of the canonical parameter  = ``-dL/ds``
* variance of the canonical parameter = ``-d2L/ds2`` (per component)
* mean of the cumulant function ``b(theta)`` = ``dL/dn``

computed here with closed-form digamma/trigamma identities rather than
numeric differencing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DegenerateMomentsError, DomainError, ProprietyError
from .special import digamma, trigamma

# Parameters are required to exceed this rather than 0 so that digamma and
# trigamma stay away from their poles.
PROPRIETY_EPS = 1e-12

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class FamilyKind(str, Enum):
    BERNOULLI = "bernoulli"
    POISSON = "poisson"
    GAUSSIAN = "gaussian"


def stat_dim(kind: FamilyKind) -> int:
    return 2 if kind is FamilyKind.GAUSSIAN else 1


@dataclass(frozen=True)
class SufficientStats:
    """Effective sample size ``n`` and accumulated sufficient statistic ``s``."""

    n: float
    s: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "s", tuple(float(v) for v in self.s))
        object.__setattr__(self, "n", float(self.n))
        if self.n < 0:
            raise ProprietyError(f"effective sample size must be nonnegative, got {self.n}")

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        if len(self.s) != len(other.s):
            raise DomainError("cannot add stats of different dimension")
        return SufficientStats(self.n + other.n, tuple(a + b for a, b in zip(self.s, other.s)))

    @staticmethod
    def zero(kind: FamilyKind) -> "SufficientStats":
        return SufficientStats(0.0, (0.0,) * stat_dim(kind))


@dataclass(frozen=True)
class ConjugatePosterior:
    kind: FamilyKind
    stats: SufficientStats


@dataclass(frozen=True)
class PosteriorMoments:
    mean_theta: tuple[float, ...]
    var_theta: tuple[float, ...]
    mean_b: float
    mean_natural: tuple[float, ...]
    var_natural: tuple[float, ...]


@dataclass(frozen=True)
class TransferPriorParams:
    """Moment-matched transfer prior, expressed as pseudo-data stats."""

    kind: FamilyKind
    stats: SufficientStats
    aux: Optional[float] = None  # fixed shape coefficient nu, gaussian only

    def as_posterior(self) -> ConjugatePosterior:
        return ConjugatePosterior(self.kind, self.stats)


def check_proper(post: ConjugatePosterior) -> None:
    """Raise ProprietyError unless ``post`` defines a proper density."""
    n, s = post.stats.n, post.stats.s
    k = post.kind
    if k is FamilyKind.BERNOULLI:
        if not (s[0] > PROPRIETY_EPS and n - s[0] > PROPRIETY_EPS):
            raise ProprietyError(f"bernoulli posterior needs S > 0 and n - S > 0, got (n={n}, S={s[0]})")
    elif k is FamilyKind.POISSON:
        if not (s[0] > PROPRIETY_EPS and n > PROPRIETY_EPS):
            raise ProprietyError(f"poisson posterior needs S > 0 and n > 0, got (n={n}, S={s[0]})")
    else:
        if not n > PROPRIETY_EPS:
            raise ProprietyError(f"gaussian posterior needs n > 0, got n={n}")
        q = s[1] - s[0] ** 2 / n
        if not q > PROPRIETY_EPS:
            raise ProprietyError(f"gaussian posterior needs S2 - S1^2/n > 0, got {q}")


def accumulate(stats: SufficientStats, batch: Sequence[float], kind: FamilyKind) -> SufficientStats:
    """Absorb a batch of observations into ``stats``."""
    y = np.asarray(batch, dtype=float)
    if y.ndim != 1:
        raise DomainError("batch must be one-dimensional")
    if y.size == 0:
        return stats
    if not np.all(np.isfinite(y)):
        idx = int(np.flatnonzero(~np.isfinite(y))[0])
        raise DomainError(f"nonfinite observation at index {idx}")
    if kind is FamilyKind.BERNOULLI:
        bad = (y != 0.0) & (y != 1.0)
        if np.any(bad):
            idx = int(np.flatnonzero(bad)[0])
            raise DomainError(f"bernoulli observation at index {idx} is not binary: {y[idx]}")
        return stats + SufficientStats(float(y.size), (float(y.sum()),))
    if kind is FamilyKind.POISSON:
        bad = (y < 0) | (y != np.floor(y))
        if np.any(bad):
            idx = int(np.flatnonzero(bad)[0])
            raise DomainError(f"poisson count at index {idx} is not a nonnegative integer: {y[idx]}")
        # one fixed-length interval per count
        return stats + SufficientStats(float(y.size), (float(y.sum()),))
    return stats + SufficientStats(float(y.size), (float(y.sum()), float(np.square(y).sum())))


def bayes_update(post: ConjugatePosterior, batch: Sequence[float]) -> ConjugatePosterior:
    check_proper(post)
    return ConjugatePosterior(post.kind, accumulate(post.stats, batch, post.kind))


def _log_norm_arrays(kind: FamilyKind, n, s):
    """log c(n, s); vectorized over matching array arguments.

    ``s`` has shape (..., d) stacked on the last axis.
    """
    n = np.asarray(n, dtype=float)
    s = np.asarray(s, dtype=float)
    if kind is FamilyKind.BERNOULLI:
        return gammaln(n) - gammaln(s[..., 0]) - gammaln(n - s[..., 0])
    if kind is FamilyKind.POISSON:
        return s[..., 0] * np.log(n) - gammaln(s[..., 0])
    q = s[..., 1] - s[..., 0] ** 2 / n
    a = (n + 1.0) / 2.0
    return 0.5 * np.log(n) - _HALF_LOG_2PI - gammaln(a) + a * np.log(q / 2.0)


def log_norm(post: ConjugatePosterior) -> float:
    """log of the normalizing constant c(n, S) of the posterior density."""
    check_proper(post)
    val = float(_log_norm_arrays(post.kind, post.stats.n, np.asarray(post.stats.s)))
    if not np.isfinite(val):
        raise ProprietyError(f"log normalizer is not finite for stats {post.stats}")
    return val


def posterior_moments(post: ConjugatePosterior) -> PosteriorMoments:
    check_proper(post)
    n, s = post.stats.n, post.stats.s
    k = post.kind
    if k is FamilyKind.BERNOULLI:
        a, b = s[0], n - s[0]
        mean_theta = (float(digamma(a) - digamma(b)),)
        var_theta = (float(trigamma(a) + trigamma(b)),)
        mean_b = float(digamma(n) - digamma(b))  # E[-log(1 - pi)]
        mean_nat = (a / n,)
        var_nat = (a * b / (n * n * (n + 1.0)),)
    elif k is FamilyKind.POISSON:
        mean_theta = (float(digamma(s[0]) - np.log(n)),)  # E[log lambda]
        var_theta = (float(trigamma(s[0])),)
        mean_b = s[0] / n  # E[lambda]
        mean_nat = (s[0] / n,)
        var_nat = (s[0] / (n * n),)
    else:
        m = s[0] / n
        q = s[1] - s[0] ** 2 / n
        a = (n + 1.0) / 2.0
        beta = q / 2.0
        e_lam = a / beta
        mean_theta = (m * e_lam, -0.5 * e_lam)
        var_theta = (m * m * e_lam / beta + e_lam / n, a / (4.0 * beta * beta))
        mean_b = 0.5 * (m * m * e_lam + 1.0 / n) - 0.5 * (float(digamma(a)) - np.log(beta))
        e_var = beta / (a - 1.0) if a > 1.0 else np.inf
        v_mu = beta / (n * (a - 1.0)) if a > 1.0 else np.inf
        v_var = beta * beta / ((a - 1.0) ** 2 * (a - 2.0)) if a > 2.0 else np.inf
        mean_nat = (m, e_var)
        var_nat = (v_mu, v_var)
    return PosteriorMoments(
        mean_theta=tuple(float(v) for v in mean_theta),
        var_theta=tuple(float(v) for v in var_theta),
        mean_b=float(mean_b),
        mean_natural=tuple(float(v) for v in mean_nat),
        var_natural=tuple(float(v) for v in var_nat),
    )


def moment_match(post: ConjugatePosterior, aux: Optional[float] = None) -> TransferPriorParams:
    """Conjugate-form prior whose first two marginal moments match ``post``'s.

    For the gaussian family the prior expectation of the mean is the posterior
    mean of the mean and the scale coefficient is the posterior mean of the
    variance; ``aux`` supplies the fixed shape coefficient nu > 2.
    """
    check_proper(post)
    mom = posterior_moments(post)
    k = post.kind
    if k is FamilyKind.BERNOULLI:
        m, v = mom.mean_natural[0], mom.var_natural[0]
        if v >= m * (1.0 - m):
            raise DegenerateMomentsError(
                f"bernoulli moment inversion infeasible: variance {v} >= m(1-m) = {m * (1.0 - m)}"
            )
        t = m * (1.0 - m) / v - 1.0
        return TransferPriorParams(k, SufficientStats(t, (m * t,)))
    if k is FamilyKind.POISSON:
        m, v = mom.mean_natural[0], mom.var_natural[0]
        if v <= 0:
            raise DegenerateMomentsError("poisson moment inversion needs positive variance")
        return TransferPriorParams(k, SufficientStats(m / v, (m * m / v,)))
    if aux is None or not aux > 2.0:
        raise DegenerateMomentsError("gaussian transfer prior requires nu > 2")
    mu_hat, var_hat = mom.mean_natural
    if not np.isfinite(var_hat):
        raise DegenerateMomentsError("gaussian posterior mean of the variance is undefined")
    n0 = aux - 1.0
    s1 = n0 * mu_hat
    s2 = aux * var_hat + n0 * mu_hat * mu_hat
    return TransferPriorParams(k, SufficientStats(n0, (s1, s2)), aux=aux)


def default_prior(
    kind: FamilyKind,
    nu: Optional[float] = None,
    mu0: float = 0.0,
    sigma0_sq: float = 1.0,
) -> ConjugatePosterior:
    """Weak reference prior in pseudo-data form.

    Beta(1, 1) for bernoulli, Gamma(1, 1) for poisson.  The gaussian prior is
    centered at (mu0, sigma0_sq) with shape coefficient nu > 2, the same
    parameterization the moment-matched transfer prior uses.
    """
    if kind is FamilyKind.BERNOULLI:
        return ConjugatePosterior(kind, SufficientStats(2.0, (1.0,)))
    if kind is FamilyKind.POISSON:
        return ConjugatePosterior(kind, SufficientStats(1.0, (1.0,)))
    if nu is None or not nu > 2.0:
        raise DomainError("gaussian prior requires nu > 2")
    n0 = nu - 1.0
    return ConjugatePosterior(
        kind, SufficientStats(n0, (n0 * mu0, nu * sigma0_sq + n0 * mu0 * mu0))
    )


def sample_params(post: ConjugatePosterior, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the conjugate posterior.

    Returns shape (size,) for bernoulli (success probability) and poisson
    (rate), and (size, 2) for gaussian holding (mean, variance) pairs.
    """
    check_proper(post)
    n, s = post.stats.n, post.stats.s
    k = post.kind
    if k is FamilyKind.BERNOULLI:
        return rng.beta(s[0], n - s[0], size=size)
    if k is FamilyKind.POISSON:
        return rng.gamma(shape=s[0], scale=1.0 / n, size=size)
    q = s[1] - s[0] ** 2 / n
    lam = rng.gamma(shape=(n + 1.0) / 2.0, scale=2.0 / q, size=size)
    mu = rng.normal(loc=s[0] / n, scale=np.sqrt(1.0 / (n * lam)))
    return np.column_stack([mu, 1.0 / lam])


def simulate_batch(kind: FamilyKind, theta, size: int, rng: np.random.Generator) -> np.ndarray:
    """Simulate ``size`` observations given one parameter draw."""
    if kind is FamilyKind.BERNOULLI:
        return (rng.random(size) < theta).astype(float)
    if kind is FamilyKind.POISSON:
        return rng.poisson(theta, size=size).astype(float)
    mu, var = theta
    return rng.normal(mu, np.sqrt(var), size=size)


def log_likelihood(kind: FamilyKind, draws: np.ndarray, batch: Sequence[float]) -> np.ndarray:
    """Log-likelihood of ``batch`` under each parameter draw; vectorized over draws."""
    y = np.asarray(batch, dtype=float)
    if kind is FamilyKind.BERNOULLI:
        pi = np.asarray(draws, dtype=float)
        succ = y.sum()
        return succ * np.log(pi) + (y.size - succ) * np.log1p(-pi)
    if kind is FamilyKind.POISSON:
        lam = np.asarray(draws, dtype=float)
        return y.sum() * np.log(lam) - y.size * lam - gammaln(y + 1.0).sum()
    d = np.asarray(draws, dtype=float)
    mu, var = d[:, 0], d[:, 1]
    ss = ((y[None, :] - mu[:, None]) ** 2).sum(axis=1)
    return -0.5 * y.size * (np.log(2.0 * np.pi * var)) - 0.5 * ss / var
