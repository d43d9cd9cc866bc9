"""Right-censored survival data: subject records, counting-process episode
splitting around a change point, Kaplan-Meier estimation, and event-time
percentiles.

A change point ``t_c`` turns the ordinary (time, event) representation
into start/stop episodes so that the variable of interest can act with
one coefficient before ``t_c`` and another after it: a subject followed
beyond ``t_c`` contributes an event-free episode ``(0, t_c]`` where the
early column carries ``x``, and an episode ``(t_c, time]`` where the
late column carries ``x``.  Fitting a Cox model on the split data is the
standard time-dependent-covariate reformulation of a piecewise-constant
effect.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "SubjectRecord",
    "Dataset",
    "EpisodeRow",
    "EpisodeData",
    "StepFunction",
    "InvalidRecordError",
    "NoEventsError",
    "split_at_changepoint",
    "event_time_percentiles",
    "kaplan_meier",
    "km_table",
    "read_csv",
    "write_csv",
    "load_gastric",
]


class InvalidRecordError(ValueError):
    """A subject record violates the data contract (e.g. zero follow-up)."""


class NoEventsError(ValueError):
    """The operation requires at least one observed event."""


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: follow-up time, event flag, variable of interest, covariates."""

    time: float
    event: bool
    x: float
    covariates: tuple[float, ...] = ()


@dataclass(frozen=True)
class EpisodeRow:
    """One counting-process risk interval ``(start, stop]``."""

    start: float
    stop: float
    event: bool
    x_early: float
    x_late: float
    covariates: tuple[float, ...]
    subject_id: int


class Dataset:
    """Array-backed collection of :class:`SubjectRecord`.

    Parameters
    ----------
    time : array of nonnegative follow-up times
    event : boolean array, True = event observed
    x : array, the variable of interest (arm indicator or biomarker)
    covariates : optional (n, p) array of additional adjustment columns
    """

    def __init__(self, time, event, x, covariates=None):
        self.time = np.asarray(time, dtype=float)
        self.event = np.asarray(event, dtype=bool)
        self.x = np.asarray(x, dtype=float)
        n = len(self.time)
        if covariates is None:
            covariates = np.empty((n, 0))
        self.covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        if self.covariates.shape[0] != n and self.covariates.size == 0:
            self.covariates = self.covariates.reshape(n, 0)
        if not (len(self.event) == len(self.x) == self.covariates.shape[0] == n):
            raise InvalidRecordError("time, event, x, covariates lengths differ")
        if n == 0:
            raise InvalidRecordError("dataset is empty")
        if np.any(~np.isfinite(self.time)) or np.any(self.time < 0):
            raise InvalidRecordError("times must be finite and nonnegative")

    def __len__(self) -> int:
        return len(self.time)

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def records(self) -> Iterator[SubjectRecord]:
        for i in range(len(self)):
            yield SubjectRecord(
                float(self.time[i]),
                bool(self.event[i]),
                float(self.x[i]),
                tuple(self.covariates[i]),
            )

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord]) -> "Dataset":
        return cls(
            [r.time for r in records],
            [r.event for r in records],
            [r.x for r in records],
            np.array([r.covariates for r in records], dtype=float).reshape(
                len(records), -1
            ),
        )

    def with_x(self, x) -> "Dataset":
        """Same subjects, different variable of interest (marker loop)."""
        return Dataset(self.time, self.event, x, self.covariates)

    def inverted_events(self) -> "Dataset":
        """Event flags flipped: the censoring-distribution view."""
        return Dataset(self.time, ~self.event, self.x, self.covariates)


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous piecewise-constant function.

    ``values[i]`` applies on ``[cuts[i-1], cuts[i])`` with ``cuts``
    strictly increasing, so there is one more value than cuts.
    """

    cuts: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        cuts = np.asarray(self.cuts, dtype=float)
        if len(self.values) != len(cuts) + 1:
            raise ValueError("need exactly len(cuts) + 1 values")
        if cuts.size and np.any(np.diff(cuts) <= 0):
            raise ValueError("cuts must be strictly increasing")
        object.__setattr__(self, "cuts", tuple(float(c) for c in cuts))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __call__(self, t):
        idx = np.searchsorted(self.cuts, np.asarray(t, dtype=float), side="right")
        out = np.asarray(self.values, dtype=float)[idx]
        return float(out) if np.isscalar(t) else out

    def integral(self, a: float, b: float) -> float:
        """Exact integral of the step function over ``[a, b]``."""
        if b < a:
            raise ValueError("integration bounds reversed")
        knots = np.array([a, *[c for c in self.cuts if a < c < b], b])
        heights = self(knots[:-1])
        return float(np.sum(np.atleast_1d(heights) * np.diff(knots)))


class EpisodeData:
    """Counting-process design: one row per risk interval ``(start, stop]``.

    ``x`` holds the regression columns (variable-of-interest block first,
    then covariates); ``n_x_cols`` is the size of the tested block (1 for
    the plain proportional-hazards design, 2 after a change-point split).
    """

    def __init__(self, start, stop, event, x, subject_id, n_x_cols, col_names):
        self.start = np.asarray(start, dtype=float)
        self.stop = np.asarray(stop, dtype=float)
        self.event = np.asarray(event, dtype=bool)
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.subject_id = np.asarray(subject_id, dtype=np.intp)
        self.n_x_cols = int(n_x_cols)
        self.col_names = tuple(col_names)
        if np.any(self.start >= self.stop):
            raise InvalidRecordError("episodes must satisfy start < stop")

    def __len__(self) -> int:
        return len(self.stop)

    @property
    def n_cols(self) -> int:
        return self.x.shape[1]

    def rows(self) -> Iterator[EpisodeRow]:
        late = self.n_x_cols == 2
        for i in range(len(self)):
            yield EpisodeRow(
                float(self.start[i]),
                float(self.stop[i]),
                bool(self.event[i]),
                float(self.x[i, 0]),
                float(self.x[i, 1]) if late else 0.0,
                tuple(self.x[i, self.n_x_cols:]),
                int(self.subject_id[i]),
            )

    def drop_x_block(self) -> "EpisodeData":
        """The nested null design: covariates only, tested block removed."""
        return EpisodeData(
            self.start,
            self.stop,
            self.event,
            self.x[:, self.n_x_cols:],
            self.subject_id,
            0,
            self.col_names[self.n_x_cols:],
        )


def split_at_changepoint(data: Dataset, t_c: float) -> EpisodeData:
    """Split subjects into counting-process episodes around ``t_c``.

    Subjects with ``time <= t_c`` keep a single early episode (an event at
    exactly ``t_c`` belongs to the early period; the late interval would
    have zero length).  With ``t_c = 0`` no split happens and the design
    has a single ``x`` column: the proportional-hazards case.
    """
    if t_c < 0:
        raise ValueError(f"change point must be nonnegative, got {t_c}")
    if np.any(data.time == 0):
        raise InvalidRecordError("subject with time 0 has a zero-length risk interval")

    n = len(data)
    znames = [f"z{j + 1}" for j in range(data.n_covariates)]
    if t_c == 0:
        x = np.column_stack([data.x, data.covariates])
        return EpisodeData(
            np.zeros(n), data.time, data.event, x, np.arange(n), 1, ["x", *znames]
        )

    crosses = data.time > t_c
    n_rows = n + int(crosses.sum())
    start = np.zeros(n_rows)
    stop = np.empty(n_rows)
    event = np.zeros(n_rows, dtype=bool)
    x = np.zeros((n_rows, 2 + data.n_covariates))
    sid = np.empty(n_rows, dtype=np.intp)

    row = 0
    for i in range(n):
        if crosses[i]:
            stop[row], x[row, 0], sid[row] = t_c, data.x[i], i
            x[row, 2:] = data.covariates[i]
            row += 1
            start[row], stop[row], event[row] = t_c, data.time[i], data.event[i]
            x[row, 1], sid[row] = data.x[i], i
        else:
            stop[row], event[row] = data.time[i], data.event[i]
            x[row, 0], sid[row] = data.x[i], i
        x[row, 2:] = data.covariates[i]
        row += 1
    return EpisodeData(
        start, stop, event, x, sid, 2, ["x_early", "x_late", *znames]
    )


def event_time_percentiles(data: Dataset, probs) -> np.ndarray:
    """Empirical quantiles of the uncensored event times.

    Linear interpolation between order statistics (the convention of
    ``numpy.quantile`` and R's default type 7).
    """
    probs = np.asarray(probs, dtype=float)
    if np.any((probs <= 0) | (probs >= 1)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    if np.any(np.diff(probs) < 0):
        raise ValueError("probabilities must be sorted ascending")
    events = data.time[data.event]
    if events.size == 0:
        raise NoEventsError("no observed events in dataset")
    return np.quantile(events, probs)


def km_table(data: Dataset):
    """Risk-set tabulation at the distinct event times.

    Returns ``(times, n_risk, n_event, survival)`` where ``survival`` is
    the product-limit estimate just after each event time.
    """
    order = np.argsort(data.time, kind="stable")
    t, e = data.time[order], data.event[order]
    event_times = np.unique(t[e])
    # at risk at time s: everyone with follow-up >= s
    n_risk = len(t) - np.searchsorted(t, event_times, side="left")
    n_event = np.array(
        [np.count_nonzero(t[e] == s) for s in event_times], dtype=float
    )
    surv = np.cumprod(1.0 - n_event / n_risk)
    return event_times, n_risk.astype(float), n_event, surv


def kaplan_meier(data: Dataset) -> StepFunction:
    """Product-limit estimate of the survival function."""
    times, _, _, surv = km_table(data)
    return StepFunction(tuple(times), (1.0, *surv))


# ---------------------------------------------------------------------------
# CSV dataset format: header  time,event,x[,z1,...,zp]
# ---------------------------------------------------------------------------

def read_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidRecordError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:3] != ["time", "event", "x"]:
            raise InvalidRecordError(
                f"{path}: header must start with time,event,x (got {header[:3]})"
            )
        n_cols = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != n_cols:
                raise InvalidRecordError(
                    f"{path}: line {lineno}: expected {n_cols} fields, got {len(row)}"
                )
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise InvalidRecordError(
                    f"{path}: line {lineno}: non-numeric field"
                ) from None
            if vals[1] not in (0.0, 1.0):
                raise InvalidRecordError(
                    f"{path}: line {lineno}: event must be 0 or 1, got {row[1]}"
                )
            rows.append(vals)
    if not rows:
        raise InvalidRecordError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    return Dataset(arr[:, 0], arr[:, 1] > 0, arr[:, 2], arr[:, 3:])


def write_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["time", "event", "x", *[f"z{j + 1}" for j in range(data.n_covariates)]]
        )
        for i in range(len(data)):
            writer.writerow(
                [
                    format(data.time[i], "g"),
                    int(data.event[i]),
                    format(data.x[i], "g"),
                    *[format(v, "g") for v in data.covariates[i]],
                ]
            )


def load_gastric() -> Dataset:
    """The bundled two-arm gastric carcinoma trial (90 patients).

    Chemotherapy-alone arm coded ``x = 0``, chemotherapy plus radiation
    ``x = 1``; times in days.
    """
    ref = resources.files("nphtest.data").joinpath("gastric.csv")
    with resources.as_file(ref) as path:
        return read_csv(path)
