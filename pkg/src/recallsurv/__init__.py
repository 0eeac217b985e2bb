"""Estimation of an event-time distribution from recalled event dates.

Respondents report the date of a past event exactly, to the calendar month,
to the calendar year, or not at all, and the chance of each depends on the
time elapsed since the event.  The package fits parametric and
nonparametric models to such data, checks their fit, simulates data and
runs Monte Carlo comparisons.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Dataset,
    DomainError,
    LogisticRecall,
    Mixture,
    PiecewiseRecall,
    SubjectRecord,
    TruncatedWeibull,
    Weibull,
    conditional_densities,
    month_interval,
    observed_v,
    outcome_density,
    recall_probs,
    year_interval,
)
from .nonparametric import build_support, edf, fit_amle, fit_binary_amle  # noqa: E402
from .parametric import LikelihoodKind, fit_mle, loglik  # noqa: E402
from .simulate import Scenario, generate, preset  # noqa: E402

__all__ = [
    "Dataset", "DomainError", "LogisticRecall", "Mixture", "PiecewiseRecall", "SubjectRecord",
    "TruncatedWeibull", "Weibull", "conditional_densities", "month_interval", "observed_v",
    "outcome_density", "recall_probs", "year_interval", "build_support", "edf", "fit_amle",
    "fit_binary_amle", "LikelihoodKind", "fit_mle", "loglik", "Scenario", "generate", "preset",
]
