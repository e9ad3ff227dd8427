"""Bayesian computerized adaptive testing with exact probit posteriors.

The package covers the full loop: multi-factor probit item banks, conjugate
skew-normal posterior updates with direct three-step sampling, Monte Carlo
item-selection criteria, a Q-learning selection policy, a simulation harness,
and an HTTP service for live sessions.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .bank import (
    BankError,
    BankGenConfig,
    ItemBank,
    all_success_probs,
    generate_bank,
    probit_prob,
    simulate_response,
)
from .posterior import (
    DECILES,
    PosteriorError,
    PosteriorSamples,
    PredictionQuantiles,
    SunParams,
    SunPosterior,
    moments,
    posterior_predictive,
    prediction_quantiles,
    sample,
    sun_params,
    update,
)
from .selection import (
    RULE_NAMES,
    CriterionScore,
    ImportanceWeights,
    ParamEnsemble,
    SelectionContext,
    SelectionError,
    criterion_scores,
    fully_bayesian_scores,
    importance_weights,
    member_posterior,
    select_eap_kl,
    select_fully_bayesian,
    select_max_pos,
    select_max_var,
    select_mi,
    select_random,
)
from .tmvn import RegionProbabilityUnderflow, TmvnDiagnostics, tmvn_sample, trandn
from .harness import (
    CohortConfig,
    CohortReport,
    FullyBayesianSelector,
    HarnessError,
    HeuristicSelector,
    PolicySelector,
    ResponderAbort,
    SelectorStats,
    SessionConfig,
    SessionRecord,
    SimulatedResponder,
    load_ensemble,
    make_selector,
    oracle_posterior,
    run_cohort,
    run_session,
    save_ensemble,
    simulate_responses,
)

__version__ = "0.1.0"
