"""Omnibus change-point Cox test via the Cauchy combination rule.

For each candidate change point ``t`` a two-piece Cox model is fitted
(one log-hazard-ratio before ``t``, one after), the joint null
``beta_early = beta_late = 0`` is scored with a likelihood-ratio test,
and the resulting p-values are pooled through the heavy-tailed Cauchy
transform

    cct = sum_i w_i * tan(pi * (0.5 - p_i)),
    p_combined = 0.5 - arctan(cct) / pi.

The transform makes the combined statistic standard Cauchy under the
null regardless of how the per-point tests correlate, which is what
keeps the small-alpha tail honest (Liu & Xie 2020).  The candidate with
the smallest p-value is reported as the most informative change point,
together with its hazard ratios before and after the change.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .coxfit import (
    DegenerateLikelihoodError,
    FitOptions,
    RankDeficiencyError,
    fit_cox,
    likelihood_ratio_test,
)
from .survdata import Dataset, NoEventsError, event_time_percentiles, split_at_changepoint

__all__ = [
    "ChangePointFit",
    "CauchyCpResult",
    "DroppedChangepointWarning",
    "FitFailureError",
    "DEFAULT_PERCENTILES",
    "cauchy_combine",
    "cauchycp_test",
]

DEFAULT_PERCENTILES = (0.25, 0.50, 0.75)

_PMIN = 1e-15


class DroppedChangepointWarning(UserWarning):
    """A candidate change point was dropped (duplicate or degenerate)."""


class FitFailureError(RuntimeError):
    """Every per-change-point model failed to fit."""


@dataclass(frozen=True)
class ChangePointFit:
    """One fitted change-point model: LRT p-value and hazard ratios."""

    t_c: float
    p: float
    hr_early: float
    hr_late: float
    df: int
    statistic: float

    def to_dict(self) -> dict:
        return {
            "t": self.t_c,
            "p": self.p,
            "hr_early": self.hr_early,
            "hr_late": self.hr_late,
        }


@dataclass
class CauchyCpResult:
    p_value: float
    per_point: list[ChangePointFit] = field(default_factory=list)
    most_informative: int = 0

    @property
    def best(self) -> ChangePointFit:
        return self.per_point[self.most_informative]

    def to_dict(self) -> dict:
        return {
            "p_value": self.p_value,
            "per_point": [pp.to_dict() for pp in self.per_point],
            "most_informative": self.most_informative,
        }


def cauchy_combine(pvals, weights=None) -> float:
    """Combine p-values with the Cauchy combination rule.

    Weights default to uniform ``1/m`` and are normalized otherwise.
    P-values are clamped to ``[1e-15, 1 - 1e-15]`` before the tangent
    transform; below the clamp the tail identity
    ``tan(pi*(0.5 - p)) ~ 1/(pi*p)`` is used so extreme inputs keep their
    relative accuracy instead of overflowing.
    """
    pvals = np.asarray(pvals, dtype=float)
    if pvals.size == 0:
        raise ValueError("no p-values to combine")
    if np.any((pvals < 0) | (pvals > 1) | ~np.isfinite(pvals)):
        raise ValueError("p-values must lie in [0, 1]")
    if weights is None:
        weights = np.full(pvals.size, 1.0 / pvals.size)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != pvals.shape:
            raise ValueError("weights and p-values have different lengths")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        weights = weights / weights.sum()

    tiny = pvals < _PMIN
    clamped = np.clip(pvals, _PMIN, 1.0 - _PMIN)
    terms = np.where(
        tiny,
        1.0 / (np.pi * np.maximum(pvals, 5e-324)),
        np.tan(np.pi * (0.5 - clamped)),
    )
    cct = float(np.dot(weights, terms))
    if cct > 1.0:
        # 0.5 - arctan(c)/pi == arctan(1/c)/pi for c > 0: accurate tail
        return math.atan(1.0 / cct) / math.pi
    return 0.5 - math.atan(cct) / math.pi


def _fit_one_changepoint(
    data: Dataset, t_c: float, options: FitOptions
) -> ChangePointFit:
    episodes = split_at_changepoint(data, t_c)
    fit = fit_cox(episodes, options)
    df = episodes.n_x_cols
    lrt = likelihood_ratio_test(fit, fit.loglik_null, df)
    hr_early = math.exp(fit.beta[0])
    hr_late = hr_early if df == 1 else math.exp(fit.beta[1])
    return ChangePointFit(
        t_c=float(t_c),
        p=lrt.p_value,
        hr_early=hr_early,
        hr_late=hr_late,
        df=df,
        statistic=lrt.statistic,
    )


def cauchycp_test(
    data: Dataset,
    changepoints=None,
    *,
    percentiles=DEFAULT_PERCENTILES,
    weights=None,
    options: FitOptions | None = None,
) -> CauchyCpResult:
    """Run the change-point omnibus test.

    By default the candidate change points are 0 (the plain
    proportional-hazards model) plus the 25th/50th/75th percentiles of
    the observed event times.  All reported p-values are two-sided
    likelihood-ratio tail probabilities.

    Duplicate candidates are deduplicated, and candidates with no events
    on one side of the split (which would make a coefficient
    unidentifiable) are dropped; both emit
    :class:`DroppedChangepointWarning`.  The combination weight is spread
    uniformly over the surviving candidates unless ``weights`` is given.
    """
    if data.n_events == 0:
        raise NoEventsError("dataset has no observed events")
    opts = options or FitOptions()

    if changepoints is None:
        cps = [0.0, *event_time_percentiles(data, percentiles)]
    else:
        cps = [float(t) for t in changepoints]
        if any(t < 0 for t in cps):
            raise ValueError("change points must be nonnegative")
    cps = sorted(cps)
    if weights is not None:
        weights = {t: w for t, w in zip(cps, np.asarray(weights, dtype=float))}

    deduped = []
    for t in cps:
        if deduped and t == deduped[-1]:
            warnings.warn(
                f"duplicate change point {t:g} dropped", DroppedChangepointWarning
            )
            continue
        deduped.append(t)

    event_times = data.time[data.event]
    kept = []
    for t in deduped:
        if t > 0 and not np.any(event_times > t):
            warnings.warn(
                f"change point {t:g} is at or beyond the last event time: "
                "model degenerates to proportional hazards and is dropped",
                DroppedChangepointWarning,
            )
            continue
        if t > 0 and not np.any(event_times <= t):
            warnings.warn(
                f"change point {t:g} precedes every event time: early "
                "coefficient is unidentifiable, candidate dropped",
                DroppedChangepointWarning,
            )
            continue
        kept.append(t)

    fits: list[ChangePointFit] = []
    for t in kept:
        try:
            fits.append(_fit_one_changepoint(data, t, opts))
        except (RankDeficiencyError, DegenerateLikelihoodError) as err:
            warnings.warn(
                f"change-point model at t={t:g} failed to fit ({err}); dropped",
                DroppedChangepointWarning,
            )
    if not fits:
        raise FitFailureError("no change-point model could be fitted")

    if weights is not None:
        w = np.array([weights[f.t_c] for f in fits])
    else:
        w = None
    combined = cauchy_combine([f.p for f in fits], w)
    best = min(range(len(fits)), key=lambda i: (fits[i].p, fits[i].t_c))
    return CauchyCpResult(p_value=combined, per_point=fits, most_informative=best)
