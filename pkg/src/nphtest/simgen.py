"""Piecewise-exponential two-arm trial simulator.

The control arm has constant hazard ``lambda_c``; the treatment arm's
hazard is ``lambda_c`` times a piecewise-constant hazard-ratio profile
whose change points sit at equal steps between 0 and 8.  Two profile
shapes are supported: a monotone staircase from a starting to an ending
hazard ratio, and a rise-then-fall shape that overshoots the larger
endpoint by 0.2 before coming back down.  Censoring is independent
exponential in both arms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numstats import RngStream
from .survdata import Dataset, StepFunction

__all__ = [
    "HrConfig",
    "ScenarioSpec",
    "hr_profile",
    "piecewise_exp_sample",
    "simulate_trial",
    "NULL_PROFILE",
]

PROFILE_SPAN = 8.0

NULL_PROFILE = StepFunction((), (1.0,))


@dataclass(frozen=True)
class HrConfig:
    """Hazard-ratio profile family: shape 1 (monotone) or 2 (rise-fall)."""

    config: int
    p: int
    h_l: float
    h_r: float

    def __post_init__(self):
        if self.config not in (1, 2):
            raise ValueError(f"config must be 1 or 2, got {self.config}")
        if self.p not in (1, 2, 4):
            raise ValueError(f"number of change points must be 1, 2 or 4, got {self.p}")
        if self.config == 2 and self.p % 2:
            raise ValueError("rise-fall profile needs an even number of change points")
        if self.h_l <= 0 or self.h_r <= 0:
            raise ValueError("hazard ratios must be positive")


def hr_profile(cfg: HrConfig) -> StepFunction:
    """Build the hazard-ratio step function for a profile configuration.

    Change points are at ``8i/(p+1)``, ``i = 1..p``.  Shape 1 walks in
    equal steps from ``h_l`` to ``h_r``.  Shape 2 rises in equal steps
    from ``h_l`` to ``max(h_l, h_r) + 0.2`` over the first half, then
    falls in equal steps to ``h_r``.
    """
    p = cfg.p
    cuts = tuple(PROFILE_SPAN * i / (p + 1) for i in range(1, p + 1))
    if cfg.config == 1:
        delta = (cfg.h_r - cfg.h_l) / p
        values = tuple(cfg.h_l + i * delta for i in range(p + 1))
    else:
        peak = max(cfg.h_l, cfg.h_r) + 0.2
        d_up = 2.0 * (peak - cfg.h_l) / p
        d_down = 2.0 * (peak - cfg.h_r) / p
        rise = [cfg.h_l + i * d_up for i in range(p // 2 + 1)]
        fall = [peak - (i + 1) * d_down for i in range(p // 2)]
        values = tuple(rise + fall)
    return StepFunction(cuts, values)


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation scenario; fully determined by its seed."""

    n_total: int
    hr_profile: StepFunction = NULL_PROFILE
    allocation: float = 1.0  # treatment:control ratio
    lambda_c: float = 0.1
    censor_rate: float = 0.1
    seed: RngStream = field(default_factory=lambda: RngStream(0, 0))

    def __post_init__(self):
        if self.n_total < 2:
            raise ValueError("need at least two subjects")
        if self.lambda_c <= 0 or self.censor_rate <= 0:
            raise ValueError("hazard and censoring rates must be positive")
        if self.allocation <= 0:
            raise ValueError("allocation ratio must be positive")
        if any(v <= 0 for v in self.hr_profile.values):
            raise ValueError("hazard-ratio profile values must be positive")


def _cumhaz_knots(rates: StepFunction):
    cuts = np.asarray(rates.cuts, dtype=float)
    vals = np.asarray(rates.values, dtype=float)
    widths = np.diff(np.concatenate([[0.0], cuts]))
    cum = np.concatenate([[0.0], np.cumsum(vals[:-1] * widths)])
    return cuts, vals, cum


def _sample_piecewise(rates: StepFunction, size: int, gen: np.random.Generator):
    cuts, vals, cum = _cumhaz_knots(rates)
    e = gen.exponential(size=size)
    idx = np.searchsorted(cum, e, side="right") - 1
    left = np.concatenate([[0.0], cuts])
    return left[idx] + (e - cum[idx]) / vals[idx]


def piecewise_exp_sample(rates: StepFunction, rng: RngStream, size: int | None = None):
    """Draw survival times with piecewise-constant hazard ``rates``.

    Inverse-CDF sampling: solve ``Lambda(t) = E`` for ``E ~ Exp(1)``
    along the piecewise-linear cumulative hazard.
    """
    if any(v <= 0 for v in rates.values):
        raise ValueError("all hazard rates must be positive")
    gen = rng.generator()
    out = _sample_piecewise(rates, 1 if size is None else int(size), gen)
    return float(out[0]) if size is None else out


def simulate_trial(spec: ScenarioSpec) -> Dataset:
    """Simulate one two-arm right-censored trial.

    Treatment subjects (``x = 1``, the first ``ceil`` share of the
    allocation) get hazard ``lambda_c * hr_profile(t)``; controls get the
    constant ``lambda_c``.  Follow-up is the minimum of the event and an
    independent exponential censoring time.  Deterministic given the
    scenario seed.
    """
    n = spec.n_total
    n_treat = math.ceil(n * spec.allocation / (1.0 + spec.allocation))
    n_ctrl = n - n_treat
    gen = spec.seed.generator()

    treat_rates = StepFunction(
        spec.hr_profile.cuts,
        tuple(spec.lambda_c * v for v in spec.hr_profile.values),
    )
    t_treat = _sample_piecewise(treat_rates, n_treat, gen)
    t_ctrl = gen.exponential(1.0 / spec.lambda_c, size=n_ctrl)
    censor = gen.exponential(1.0 / spec.censor_rate, size=n)

    event_time = np.concatenate([t_treat, t_ctrl])
    time = np.minimum(event_time, censor)
    event = event_time <= censor
    x = np.concatenate([np.ones(n_treat), np.zeros(n_ctrl)])
    return Dataset(time, event, x)
