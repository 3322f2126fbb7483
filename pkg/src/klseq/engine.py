"""Sequential fitting with change-point testing for the scalar conjugate families.

Each step tests the incoming batch against the current posterior.  When the
KL statistic stays inside the simulated null acceptance interval the batch is
absorbed by a plain Bayes update; otherwise the posterior is collapsed to its
moment-matched transfer prior before the batch is absorbed and the step is
recorded as a change-point.  The first batch is always a plain update (the
acceptance region of step 1 is the whole sample space).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, KlseqError
from .families import (
    ConjugatePosterior,
    FamilyKind,
    PosteriorMoments,
    SufficientStats,
    accumulate,
    bayes_update,
    moment_match,
    posterior_moments,
)
from .kltest import (
    KlDecision,
    KlTestConfig,
    conjugate_null_interval,
    decide,
    kl_closed_form,
)


@dataclass(frozen=True)
class ChangePointTrace:
    """Per-step decisions and posterior-moment snapshots."""

    detections: tuple[tuple[int, KlDecision], ...] = ()
    estimates: tuple[PosteriorMoments, ...] = ()

    def append(self, step: int, decision: KlDecision, estimate: PosteriorMoments) -> "ChangePointTrace":
        return ChangePointTrace(self.detections + ((step, decision),), self.estimates + (estimate,))

    @property
    def changepoints(self) -> tuple[int, ...]:
        return tuple(step for step, d in self.detections if d.detected)

    def __len__(self):
        return len(self.detections)


@dataclass(frozen=True)
class EngineState:
    posterior: ConjugatePosterior
    last_cp: int = 1
    step: int = 0
    trace: ChangePointTrace = field(default_factory=ChangePointTrace)
    nu: Optional[float] = None  # gaussian transfer-prior shape coefficient
    # raw observations of the current segment (batches last_cp..step), kept
    # for the Student-t predictive of the gaussian family
    segment_obs: tuple[float, ...] = ()
    # matched (mean, variance) estimates installed at the last change-point
    anchor: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class PredictiveT:
    dof: float
    location: float
    scale_third_arg: float
    mean: float
    variance: float


class StepFailure(KlseqError):
    """A step aborted; carries the step index and the partial trace."""

    def __init__(self, step: int, trace: ChangePointTrace, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.trace = trace
        self.cause = cause


_FIRST_STEP_DECISION = KlDecision(0.0, -math.inf, math.inf, False, 0)


def init_state(prior: ConjugatePosterior, nu: Optional[float] = None) -> EngineState:
    return EngineState(posterior=prior, nu=nu)


def step(state: EngineState, batch: Sequence[float], cfg: KlTestConfig) -> EngineState:
    batch = np.asarray(batch, dtype=float)
    if batch.size == 0:
        raise ConfigError("batch must be nonempty")
    idx = state.step + 1
    kind = state.posterior.kind
    try:
        if idx == 1:
            decision = _FIRST_STEP_DECISION
            new_post = bayes_update(state.posterior, batch)
            last_cp = state.last_cp
            anchor = state.anchor
            seg = tuple(batch)
        else:
            # the acceptance interval is computed before the statistic is
            # observed, from the current posterior and the batch shape only
            interval = conjugate_null_interval(state.posterior, batch.size, cfg, step=idx)
            stats = accumulate(SufficientStats.zero(kind), batch, kind)
            stat = kl_closed_form(state.posterior, stats)
            decision = decide(stat, interval, cfg.m_draws)
            if decision.detected:
                mom = posterior_moments(state.posterior)
                transfer = moment_match(state.posterior, aux=state.nu)
                new_post = bayes_update(transfer.as_posterior(), batch)
                last_cp = idx
                anchor = (mom.mean_natural[0], mom.mean_natural[-1]) if kind is FamilyKind.GAUSSIAN else None
                seg = tuple(batch)
            else:
                new_post = bayes_update(state.posterior, batch)
                last_cp = state.last_cp
                anchor = state.anchor
                seg = state.segment_obs + tuple(batch)
        estimate = posterior_moments(new_post)
    except KlseqError as exc:
        raise StepFailure(idx, state.trace, exc) from exc
    return EngineState(
        posterior=new_post,
        last_cp=last_cp,
        step=idx,
        trace=state.trace.append(idx, decision, estimate),
        nu=state.nu,
        segment_obs=seg,
        anchor=anchor,
    )


def run(
    series: Sequence[Sequence[float]],
    prior: ConjugatePosterior,
    cfg: KlTestConfig,
    nu: Optional[float] = None,
) -> ChangePointTrace:
    state = init_state(prior, nu=nu)
    for batch in series:
        state = step(state, batch, cfg)
    return state.trace


def predictive_t(nu: float, mu_hat: float, sigma_hat_sq: float, ys: Sequence[float]) -> PredictiveT:
    """One-step-ahead Student-t predictive under the conjugate dynamic model.

    The prior since the segment start is mean ~ N(mu_hat, var) and
    var ~ IGa(nu/2, nu*sigma_hat_sq/2); ``ys`` are the observations of the
    current segment.  The no-change predictive is the special case where the
    segment starts at time 1 with (mu_hat, sigma_hat_sq) the fixed initial
    conditions.
    """
    if not nu > 2.0:
        raise ConfigError(f"predictive requires nu > 2, got {nu}")
    y = np.asarray(ys, dtype=float)
    j = y.size
    ybar = float(y.mean()) if j else mu_hat
    ssd = float(np.square(y - ybar).sum()) if j else 0.0
    kappa = 1.0 + j
    dof = nu + j
    loc = (mu_hat + j * ybar) / kappa
    rate = 0.5 * nu * sigma_hat_sq + 0.5 * ssd + 0.5 * (j / kappa) * (ybar - mu_hat) ** 2
    shape = 0.5 * dof
    # precision-like third argument: half the inverse squared scale
    scale_sq = rate * (kappa + 1.0) / (shape * kappa)
    third = 1.0 / (2.0 * scale_sq)
    variance = rate / (shape - 1.0) * (kappa + 1.0) / kappa if dof > 2.0 else math.inf
    return PredictiveT(dof=dof, location=loc, scale_third_arg=third, mean=loc, variance=variance)


def predictive(state: EngineState, nu: float, mu0: float, sigma0_sq: float) -> PredictiveT:
    if state.posterior.kind is not FamilyKind.GAUSSIAN:
        raise ConfigError("the Student-t predictive is defined for the gaussian family only")
    if state.last_cp == 1 or state.anchor is None:
        mu_hat, sig_hat = mu0, sigma0_sq
    else:
        mu_hat, sig_hat = state.anchor
    return predictive_t(nu, mu_hat, sig_hat, state.segment_obs)
