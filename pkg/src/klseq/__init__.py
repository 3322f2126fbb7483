"""Sequential Bayesian time-series modeling with KL change-point testing."""

from .engine import ChangePointTrace, EngineState, PredictiveT, StepFailure, init_state, predictive, predictive_t, run, step
from .errors import (
    ConfigError,
    DegenerateMomentsError,
    DomainError,
    KlseqError,
    NumericError,
    ParseError,
    ProprietyError,
)
from .families import (
    ConjugatePosterior,
    FamilyKind,
    PosteriorMoments,
    SufficientStats,
    TransferPriorParams,
    accumulate,
    bayes_update,
    check_proper,
    default_prior,
    log_likelihood,
    log_norm,
    moment_match,
    posterior_moments,
    sample_params,
    simulate_batch,
)
from .kltest import (
    KlDecision,
    KlTestConfig,
    ParamDraws,
    conjugate_null_interval,
    decide,
    interval_from_null_sample,
    kl_closed_form,
    kl_closed_form_many,
    kl_monte_carlo,
    null_critical_interval,
    substream,
)

__version__ = "0.1.0"
