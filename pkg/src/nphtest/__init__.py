"""Survival-analysis tests for non-proportional hazards.

The centerpiece is an omnibus test that fits single-change-point Cox
models over a small set of candidate change points and combines their
likelihood-ratio p-values with the Cauchy combination rule; comparator
tests (Fleming-Harrington weighted logrank / MaxCombo, restricted mean
survival time, weighted Kaplan-Meier), a piecewise-exponential trial
simulator, and a benchmark harness round out the package.
"""

from .survdata import (
    Dataset,
    EpisodeData,
    StepFunction,
    SubjectRecord,
    kaplan_meier,
    load_gastric,
    read_csv,
    split_at_changepoint,
    write_csv,
)
from .coxfit import CoxFit, FitOptions, fit_cox, likelihood_ratio_test, partial_loglik
from .cauchycp import CauchyCpResult, cauchy_combine, cauchycp_test
from .rivals import maxcombo, rmst_test, weighted_logrank, wkm_test
from .numstats import RngStream, chisq_sf, mvn_rect_prob
from .simgen import HrConfig, ScenarioSpec, hr_profile, simulate_trial

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EpisodeData",
    "StepFunction",
    "SubjectRecord",
    "CoxFit",
    "FitOptions",
    "CauchyCpResult",
    "HrConfig",
    "ScenarioSpec",
    "RngStream",
    "kaplan_meier",
    "load_gastric",
    "read_csv",
    "write_csv",
    "split_at_changepoint",
    "fit_cox",
    "partial_loglik",
    "likelihood_ratio_test",
    "cauchy_combine",
    "cauchycp_test",
    "weighted_logrank",
    "maxcombo",
    "rmst_test",
    "wkm_test",
    "chisq_sf",
    "mvn_rect_prob",
    "hr_profile",
    "simulate_trial",
    "__version__",
]
