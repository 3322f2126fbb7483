"""HTTP service exposing the sequential fits and simulation studies.

The endpoints wrap the library one-to-one: ``/fit`` runs the scalar or
multivariate sequential change-point engine, ``/power-sim`` runs the Bernoulli
power study and ``/spikenet`` fits a sequence of spike-raster trials.  Input
and config problems map to 422, numeric failures during a run to 500 with the
failing step in the detail.
"""

from __future__ import annotations

import math
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import engine, mvgauss, power, spikenet
from .errors import KlseqError, NumericError
from .families import FamilyKind, default_prior, posterior_moments
from .kltest import KlTestConfig

app = FastAPI(title="klseq", version="0.1.0")


class StepRecord(BaseModel):
    step: int
    statistic: float
    lower: float
    upper: float
    detected: bool
    null_sample_size: int
    mean: list[float]
    variance: list[float]
    mean_b: Optional[float] = None
    predictive_dof: Optional[float] = None
    predictive_mean: Optional[float] = None
    predictive_variance: Optional[float] = None


class FitRequest(BaseModel):
    model: Literal["bernoulli", "poisson", "gaussian", "mv-gaussian"]
    batches: list[list[float]] | list[list[list[float]]]
    alpha: float = Field(0.05, ge=0.0, le=1.0)
    mc_draws: int = Field(5000, ge=2)
    seed: int = 0
    # gaussian initial conditions / transfer-prior shape
    nu: float = 5.0
    mu0: float = 0.0
    sigma0_sq: float = 1.0
    # mv-gaussian prior and sampler settings
    prior_location: Optional[list[float]] = None
    prior_scale: Optional[list[list[float]]] = None
    prior_kappa: float = 1.0
    prior_dof: Optional[float] = None
    gibbs_iters: int = 1000
    gibbs_burn: int = 500


class FitResponse(BaseModel):
    model: str
    steps: list[StepRecord]
    changepoints: list[int]


def _sanitize(x: float) -> float:
    # JSON cannot carry inf; the service reports interval endpoints directly,
    # so map them to +/-1e308 sentinels that survive serialization
    if math.isinf(x):
        return math.copysign(1e308, x)
    return float(x)


def _fit_scalar(req: FitRequest) -> FitResponse:
    kind = FamilyKind(req.model)
    nu = req.nu if kind is FamilyKind.GAUSSIAN else None
    prior = default_prior(kind, nu=nu, mu0=req.mu0, sigma0_sq=req.sigma0_sq)
    cfg = KlTestConfig(alpha=req.alpha, m_draws=req.mc_draws, seed=req.seed)
    state = engine.init_state(prior, nu=nu)
    records: list[StepRecord] = []
    for batch in req.batches:
        state = engine.step(state, np.asarray(batch, dtype=float), cfg)
        (step_idx, dec) = state.trace.detections[-1]
        est = state.trace.estimates[-1]
        rec = StepRecord(
            step=step_idx,
            statistic=dec.statistic,
            lower=_sanitize(dec.lower),
            upper=_sanitize(dec.upper),
            detected=dec.detected,
            null_sample_size=dec.null_sample_size,
            mean=list(est.mean_natural),
            variance=list(est.var_natural),
            mean_b=est.mean_b,
        )
        if kind is FamilyKind.GAUSSIAN:
            pred = engine.predictive(state, req.nu, req.mu0, req.sigma0_sq)
            rec.predictive_dof = pred.dof
            rec.predictive_mean = pred.mean
            rec.predictive_variance = _sanitize(pred.variance)
        records.append(rec)
    return FitResponse(model=req.model, steps=records, changepoints=list(state.trace.changepoints))


def _fit_mv(req: FitRequest) -> FitResponse:
    batches = [mvgauss.MvBatch(np.asarray(b, dtype=float)) for b in req.batches]
    p = batches[0].dim
    loc = np.asarray(req.prior_location, dtype=float) if req.prior_location is not None else np.zeros(p)
    scale = np.asarray(req.prior_scale, dtype=float) if req.prior_scale is not None else np.eye(p)
    dof = req.prior_dof if req.prior_dof is not None else p + 3.0
    prior = mvgauss.NiwParams(loc, scale, req.prior_kappa, dof)
    cfg = KlTestConfig(alpha=req.alpha, m_draws=req.mc_draws, seed=req.seed)
    gibbs = mvgauss.GibbsConfig(req.gibbs_iters, req.gibbs_burn)
    trace = mvgauss.mv_run(batches, prior, cfg, gibbs)
    records = []
    for (step_idx, dec), mean, cov in zip(trace.detections, trace.means, trace.covariances):
        records.append(
            StepRecord(
                step=step_idx,
                statistic=dec.statistic,
                lower=_sanitize(dec.lower),
                upper=_sanitize(dec.upper),
                detected=dec.detected,
                null_sample_size=dec.null_sample_size,
                mean=[float(v) for v in mean],
                variance=[float(v) for v in np.diag(cov)],
            )
        )
    return FitResponse(model=req.model, steps=records, changepoints=list(trace.changepoints))


@app.get("/healthz")
def healthz():
    return {"status": "ok"}


@app.post("/fit", response_model=FitResponse)
def fit(req: FitRequest) -> FitResponse:
    try:
        if req.model == "mv-gaussian":
            return _fit_mv(req)
        return _fit_scalar(req)
    except NumericError as exc:
        raise HTTPException(status_code=500, detail=f"numeric: {exc}")
    except engine.StepFailure as exc:
        if isinstance(exc.cause, NumericError):
            raise HTTPException(status_code=500, detail=f"numeric: {exc}")
        raise HTTPException(status_code=422, detail=str(exc))
    except (KlseqError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))


class PowerSimRequest(BaseModel):
    sims: int = Field(10000, ge=1)
    alpha: float = Field(0.2, ge=0.0, le=1.0)
    mc_draws: int = Field(5000, ge=2)
    max_n: int = Field(100, ge=2)
    seed: int = 0


class PowerSimResponse(BaseModel):
    sims: int
    accepted_count: int
    acceptance_rate: float
    n1: list[int]
    n2: list[int]
    pi: list[float]
    statistic: list[float]
    lower: list[float]
    upper: list[float]
    detected: list[bool]
    z_values: list[float]
    cdf_grid: list[float]
    cdf_empirical: list[float]
    cdf_laplace: list[float]
    cdf_band_halfwidth: list[float]
    cdf_points_outside: int
    cdf_pass: bool


@app.post("/power-sim", response_model=PowerSimResponse)
def power_sim(req: PowerSimRequest) -> PowerSimResponse:
    try:
        cfg = power.PowerStudyConfig(
            n_sims=req.sims, max_n=req.max_n, alpha=req.alpha, mc_draws=req.mc_draws, seed=req.seed
        )
        res = power.power_study(cfg)
    except NumericError as exc:
        raise HTTPException(status_code=500, detail=f"numeric: {exc}")
    except (KlseqError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    chk = res.cdf_check
    return PowerSimResponse(
        sims=res.n_sims,
        accepted_count=res.accepted_count,
        acceptance_rate=res.acceptance_rate,
        n1=res.n1.tolist(),
        n2=res.n2.tolist(),
        pi=res.pi.tolist(),
        statistic=res.statistic.tolist(),
        lower=[_sanitize(v) for v in res.lower],
        upper=[_sanitize(v) for v in res.upper],
        detected=res.detected.tolist(),
        z_values=res.z_values.tolist(),
        cdf_grid=chk.grid.tolist(),
        cdf_empirical=chk.empirical.tolist(),
        cdf_laplace=chk.laplace.tolist(),
        cdf_band_halfwidth=chk.band_halfwidth.tolist(),
        cdf_points_outside=chk.n_points_outside,
        cdf_pass=chk.n_points_outside == 0,
    )


class SpikenetRequest(BaseModel):
    rasters: list[list[list[int]]]  # trials, each K x T
    alpha: float = Field(0.05, ge=0.0, le=1.0)
    mc_draws: int = Field(500, ge=2)
    seed: int = 0
    iters: int = 25000
    burn: int = 5000
    thin: int = 1
    proposal_sd: float = 0.5
    prior_mean: float = 0.0
    prior_sd: float = 1.0


class SpikenetResponse(BaseModel):
    n_trials: int
    n_neurons: int
    changepoints: list[int]
    decisions: list[StepRecord]
    coef_means: list[list[list[float]]]  # per trial, K x K
    coef_sds: list[list[list[float]]]
    excitatory_prop: list[list[float]]
    inhibitory_prop: list[list[float]]
    acceptance_rates: list[float]


@app.post("/spikenet", response_model=SpikenetResponse)
def spikenet_fit(req: SpikenetRequest) -> SpikenetResponse:
    try:
        trials = [
            spikenet.SpikeTrial(np.asarray(r, dtype=int), trial_id=i + 1)
            for i, r in enumerate(req.rasters)
        ]
        cfg = KlTestConfig(alpha=req.alpha, m_draws=req.mc_draws, seed=req.seed)
        mcfg = spikenet.MetropolisConfig(
            iters=req.iters, burn=req.burn, proposal_sd=req.proposal_sd, seed=0, thin=req.thin
        )
        result = spikenet.fit_sequence(trials, cfg, mcfg, req.prior_mean, req.prior_sd)
        summary = spikenet.significance_summary(result.per_trial)
    except NumericError as exc:
        raise HTTPException(status_code=500, detail=f"numeric: {exc}")
    except (KlseqError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    decisions = [
        StepRecord(
            step=step_idx,
            statistic=dec.statistic,
            lower=_sanitize(dec.lower),
            upper=_sanitize(dec.upper),
            detected=dec.detected,
            null_sample_size=dec.null_sample_size,
            mean=[],
            variance=[],
        )
        for step_idx, dec in result.trace.detections
    ]
    return SpikenetResponse(
        n_trials=len(trials),
        n_neurons=trials[0].n_neurons,
        changepoints=list(result.trace.changepoints),
        decisions=decisions,
        coef_means=[fit.draws.mean(axis=0).tolist() for fit in result.per_trial],
        coef_sds=[fit.draws.std(axis=0, ddof=1).tolist() for fit in result.per_trial],
        excitatory_prop=summary.excitatory_prop.tolist(),
        inhibitory_prop=summary.inhibitory_prop.tolist(),
        acceptance_rates=[fit.acceptance_rate for fit in result.per_trial],
    )
