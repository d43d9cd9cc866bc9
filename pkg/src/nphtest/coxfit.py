"""Cox partial likelihood on counting-process data, Newton-Raphson
fitting, and likelihood-ratio testing.

The likelihood is the standard one for ``(start, stop]`` risk intervals:
a row is at risk at event time ``t`` when ``start < t <= stop``.  Tied
event times are handled with the Efron approximation by default
(Breslow is selectable); with no ties the two coincide.

Writing ``phi_i = exp(x_i' beta)``, the Efron contribution of an event
time with ``d`` tied events replaces the single risk-set denominator by
``d`` denominators ``S0 - (l/d) * T0``, ``l = 0..d-1``, where ``S0``
sums ``phi`` over the risk set and ``T0`` over the tied events only.
Gradient and Hessian follow by exact differentiation of those terms, so
the optimizer sees analytically consistent derivatives.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .numstats import CholeskyError, chisq_sf, cholesky_solve
from .survdata import EpisodeData, NoEventsError

__all__ = [
    "CoxFit",
    "LrtResult",
    "FitOptions",
    "DegenerateLikelihoodError",
    "RankDeficiencyError",
    "MonotoneLikelihoodWarning",
    "partial_loglik",
    "fit_cox",
    "likelihood_ratio_test",
]

BETA_CAP = 15.0


class DegenerateLikelihoodError(ValueError):
    """The partial likelihood is undefined (no events in the data)."""


class RankDeficiencyError(ValueError):
    """The information matrix is singular for a named design column."""

    def __init__(self, column: str):
        self.column = column
        super().__init__(
            f"singular information matrix: column {column!r} carries no "
            "information within risk sets"
        )


class MonotoneLikelihoodWarning(UserWarning):
    """A coefficient ran away to the cap: likely monotone likelihood."""


@dataclass(frozen=True)
class FitOptions:
    tolerance: float = 1e-9
    max_iter: int = 25
    tie_method: str = "efron"
    grad_tol: float = 1e-6


@dataclass
class CoxFit:
    """Fitted Cox model with the nested-null log-likelihood attached.

    ``loglik_null`` is the maximized partial log-likelihood of the design
    with the tested block removed (covariates refitted, i.e. profiled
    out); when there are no covariates it is the log-likelihood at zero.
    """

    beta: np.ndarray
    loglik: float
    loglik_null: float
    hessian: np.ndarray
    iterations: int
    converged: bool
    col_names: tuple[str, ...]


@dataclass(frozen=True)
class LrtResult:
    statistic: float
    df: int
    p_value: float


class _LikelihoodWorkspace:
    """Beta-independent tabulations reused across likelihood evaluations."""

    def __init__(self, data: EpisodeData, tie_method: str):
        if tie_method not in ("efron", "breslow"):
            raise ValueError(f"unknown tie method {tie_method!r}")
        if not data.event.any():
            raise DegenerateLikelihoodError("no events in data")
        self.x = data.x
        self.n, self.k = data.x.shape

        self.stop_order = np.argsort(data.stop, kind="stable")
        self.start_order = np.argsort(data.start, kind="stable")
        self.stop_sorted = data.stop[self.stop_order]
        self.start_sorted = data.start[self.start_order]

        ev_rows = np.flatnonzero(data.event)
        ev_stop = data.stop[ev_rows]
        tie_order = np.argsort(ev_stop, kind="stable")
        self.event_rows = ev_rows[tie_order]
        self.event_times, tie_starts, tie_counts = np.unique(
            ev_stop[tie_order], return_index=True, return_counts=True
        )
        self.tie_starts = tie_starts
        self.tie_counts = tie_counts

        # risk set at t: {stop >= t} minus {start >= t}
        self.idx_stop = np.searchsorted(self.stop_sorted, self.event_times, "left")
        self.idx_start = np.searchsorted(self.start_sorted, self.event_times, "left")

        # one denominator term per event; frac = l/d within a tie group
        reps = np.repeat(np.arange(len(self.event_times)), tie_counts)
        self.term_group = reps
        if tie_method == "efron":
            offs = np.concatenate([np.arange(c) for c in tie_counts])
            self.frac = offs / np.repeat(tie_counts, tie_counts)
        else:
            self.frac = np.zeros(int(tie_counts.sum()))
        self.any_frac = bool(np.any(self.frac > 0))

    def _suffix(self, arr_sorted: np.ndarray, idx: np.ndarray) -> np.ndarray:
        # sum of arr_sorted[i:] gathered at each idx
        cs = np.cumsum(arr_sorted[::-1], axis=0)[::-1]
        pad = np.zeros((1, *arr_sorted.shape[1:]))
        return np.concatenate([cs, pad])[idx]

    def evaluate(self, beta: np.ndarray):
        x, k = self.x, self.k
        eta = x @ beta
        eta = eta - eta.max()  # partial likelihood is shift-invariant
        phi = np.exp(eta)
        phi_x = phi[:, None] * x
        phi_xx = phi_x[:, :, None] * x[:, None, :]

        s0 = self._suffix(phi[self.stop_order], self.idx_stop) - self._suffix(
            phi[self.start_order], self.idx_start
        )
        s1 = self._suffix(phi_x[self.stop_order], self.idx_stop) - self._suffix(
            phi_x[self.start_order], self.idx_start
        )
        s2 = self._suffix(phi_xx[self.stop_order], self.idx_stop) - self._suffix(
            phi_xx[self.start_order], self.idx_start
        )

        ev = self.event_rows
        t0 = np.add.reduceat(phi[ev], self.tie_starts)
        t1 = np.add.reduceat(phi_x[ev], self.tie_starts)
        t2 = np.add.reduceat(phi_xx[ev], self.tie_starts)

        g, f = self.term_group, self.frac
        if self.any_frac:
            d0 = s0[g] - f * t0[g]
            d1 = s1[g] - f[:, None] * t1[g]
            d2 = s2[g] - f[:, None, None] * t2[g]
        else:
            d0, d1, d2 = s0[g], s1[g], s2[g]

        u = d1 / d0[:, None]
        value = float(eta[ev].sum() - np.log(d0).sum())
        grad = x[ev].sum(axis=0) - u.sum(axis=0)
        hess = -(
            (d2 / d0[:, None, None]).sum(axis=0)
            - np.einsum("ij,il->jl", u, u)
        )
        return value, grad, hess.reshape(k, k)


def partial_loglik(data: EpisodeData, beta, tie_method: str = "efron"):
    """Partial log-likelihood with its analytic gradient and Hessian.

    Returns ``(value, gradient, hessian)`` at ``beta``; the Hessian is the
    second derivative of the returned value (negative information).
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.n_cols,):
        raise ValueError(
            f"beta has length {beta.size}, design has {data.n_cols} columns"
        )
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    return _LikelihoodWorkspace(data, tie_method).evaluate(beta)


def _newton(ws: _LikelihoodWorkspace, opts: FitOptions, col_names):
    k = ws.k
    beta = np.zeros(k)
    value, grad, hess = ws.evaluate(beta)
    iterations = 0
    converged = False
    for iterations in range(1, opts.max_iter + 1):
        try:
            step = cholesky_solve(-hess, grad)
        except CholeskyError as err:
            raise RankDeficiencyError(col_names[err.pivot]) from None
        new_beta = beta + step
        new_value, new_grad, new_hess = ws.evaluate(np.clip(new_beta, -BETA_CAP, BETA_CAP))
        halvings = 0
        while new_value < value and halvings < 20:
            step = step / 2.0
            new_beta = beta + step
            new_value, new_grad, new_hess = ws.evaluate(
                np.clip(new_beta, -BETA_CAP, BETA_CAP)
            )
            halvings += 1
        beta = np.clip(new_beta, -BETA_CAP, BETA_CAP)
        rel_change = abs(new_value - value) / (abs(value) + opts.tolerance)
        value, grad, hess = new_value, new_grad, new_hess
        if rel_change < opts.tolerance and np.max(np.abs(grad)) < opts.grad_tol:
            converged = True
            break
    if np.any(np.abs(beta) >= BETA_CAP):
        capped = [col_names[j] for j in np.flatnonzero(np.abs(beta) >= BETA_CAP)]
        warnings.warn(
            f"coefficient(s) {capped} reached the |beta| = {BETA_CAP:g} cap: "
            "likely monotone partial likelihood",
            MonotoneLikelihoodWarning,
        )
        converged = False
    return beta, value, hess, iterations, converged


def fit_cox(data: EpisodeData, options: FitOptions | None = None) -> CoxFit:
    """Newton-Raphson fit with step-halving, started at ``beta = 0``.

    The returned fit carries the nested-null maximized log-likelihood for
    the tested block (columns ``0..n_x_cols-1``): refit on the remaining
    covariates when there are any, the zero-coefficient likelihood
    otherwise.
    """
    opts = options or FitOptions()
    ws = _LikelihoodWorkspace(data, opts.tie_method)
    beta, value, hess, iterations, converged = _newton(ws, opts, data.col_names)

    if data.n_cols > data.n_x_cols:
        null_fit_ws = _LikelihoodWorkspace(data.drop_x_block(), opts.tie_method)
        _, null_value, _, _, _ = _newton(
            null_fit_ws, opts, data.col_names[data.n_x_cols:]
        )
    else:
        null_value, _, _ = ws.evaluate(np.zeros(data.n_cols))
    return CoxFit(
        beta=beta,
        loglik=value,
        loglik_null=null_value,
        hessian=hess,
        iterations=iterations,
        converged=converged,
        col_names=data.col_names,
    )


def likelihood_ratio_test(full: CoxFit, null_loglik: float, df: int) -> LrtResult:
    """Chi-square likelihood-ratio test of the nested null."""
    if df <= 0:
        raise ValueError(f"df must be positive, got {df}")
    statistic = max(0.0, 2.0 * (full.loglik - null_loglik))
    return LrtResult(statistic=statistic, df=int(df), p_value=chisq_sf(statistic, df))
