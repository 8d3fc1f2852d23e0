"""Subject records, baseline schemas, and the columnar cohort container.

A cohort is a set of subjects observed on a monthly grid t = 0..K. Row t = 0
is the baseline visit: every subject enters with a measured marker value
(mirroring eligibility screening), so ``last_observed_marker`` is always
defined from the start. ``months_since_last_monitor`` is 0 at baseline and
follows the reset/increment recurrence afterwards.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

END_REASONS = ("administrative_end", "lost", "death", "other_censoring")
_REASON_CODE = {name: i for i, name in enumerate(END_REASONS)}

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"


@dataclass(frozen=True)
class BaselineField:
    name: str
    kind: str
    levels: tuple = ()

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise ConfigError(f"unknown baseline field kind {self.kind!r}")
        if self.kind == CATEGORICAL and len(self.levels) < 2:
            raise ConfigError(
                f"categorical field {self.name!r} needs at least two levels"
            )


@dataclass(frozen=True)
class BaselineSchema:
    """Baseline covariate layout, declared once per cohort."""

    fields: tuple

    @property
    def names(self):
        return [f.name for f in self.fields]

    def validate_values(self, values):
        if values.shape[1] != len(self.fields):
            raise ConfigError("baseline width does not match schema")
        for j, f in enumerate(self.fields):
            col = values[:, j]
            if not np.all(np.isfinite(col)):
                raise ConfigError(f"baseline field {f.name!r} has non-finite values")
            if f.kind == CATEGORICAL:
                codes = np.unique(col)
                if np.any(codes != np.round(codes)) or codes.min() < 0 or \
                        codes.max() >= len(f.levels):
                    raise ConfigError(
                        f"baseline field {f.name!r} has codes outside its levels"
                    )


@dataclass(frozen=True)
class TimeRow:
    """One subject-month of observed data."""

    t: int
    monitor: int
    observed_marker: float  # nan when not measured this month
    last_observed_marker: float
    months_since_last_monitor: int
    override_flag: int


@dataclass
class SubjectRecord:
    """Row-wise view of one subject, convenient for fixtures and tracing."""

    subject_id: str
    baseline: dict
    rows: list
    outcome_y: float  # nan when missing
    d_total: int
    followup_end: int
    end_reason: str
    horizon: int


class Cohort:
    """Columnar store of subject records sharing one baseline schema."""

    def __init__(self, subject_ids, baseline, schema, horizon, followup_end,
                 end_reason, outcome_y, d_total, t, monitor, observed_marker,
                 last_observed_marker, months_since, override_flag,
                 validate=True):
        self.subject_ids = list(subject_ids)
        self.baseline = np.asarray(baseline, dtype=np.float64)
        self.schema = schema
        self.horizon = int(horizon)
        self.followup_end = np.asarray(followup_end, dtype=np.int64)
        self.end_reason = np.asarray(end_reason, dtype=np.int8)
        self.outcome_y = np.asarray(outcome_y, dtype=np.float64)
        self.d_total = np.asarray(d_total, dtype=np.int64)
        self.t = np.asarray(t, dtype=np.int64)
        self.monitor = np.asarray(monitor, dtype=np.int8)
        self.observed_marker = np.asarray(observed_marker, dtype=np.float64)
        self.last_observed_marker = np.asarray(last_observed_marker,
                                               dtype=np.float64)
        self.months_since = np.asarray(months_since, dtype=np.int64)
        self.override_flag = np.asarray(override_flag, dtype=np.int8)
        self.offsets = np.concatenate(
            [[0], np.cumsum(self.followup_end + 1)]
        ).astype(np.int64)
        if validate:
            self.validate()

    @property
    def n_subjects(self):
        return len(self.subject_ids)

    @property
    def n_rows(self):
        return self.t.size

    def end_reason_name(self, i):
        return END_REASONS[self.end_reason[i]]

    def validate(self):
        n = self.n_subjects
        if self.baseline.shape[0] != n:
            raise ConfigError("baseline rows do not match subject count")
        self.schema.validate_values(self.baseline)
        if len(set(self.subject_ids)) != n:
            raise ConfigError("duplicate subject ids")
        if np.any(self.followup_end < 0) or np.any(self.followup_end > self.horizon):
            raise ConfigError("followup_end must lie in [0, horizon]")
        if self.offsets[-1] != self.n_rows:
            raise ConfigError("row blocks do not match followup_end")
        present = ~np.isnan(self.outcome_y)
        if np.any(present & (self.followup_end != self.horizon)):
            raise ConfigError("outcome recorded for a subject that left early")
        ok_y = np.isnan(self.outcome_y) | (self.outcome_y == 0) | (self.outcome_y == 1)
        if not np.all(ok_y):
            raise ConfigError("outcome_y must be 0, 1, or missing")
        if np.any((self.monitor != 0) & (self.monitor != 1)):
            raise ConfigError("monitor must be binary")
        if np.any((self.override_flag != 0) & (self.override_flag != 1)):
            raise ConfigError("override_flag must be binary")

        for i in range(n):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            ts = self.t[lo:hi]
            if not np.array_equal(ts, np.arange(self.followup_end[i] + 1)):
                raise ConfigError(
                    f"subject {self.subject_ids[i]}: months must be 0..followup_end "
                    "with no gaps"
                )
            mon = self.monitor[lo:hi]
            if self.d_total[i] != int(mon.sum()):
                raise ConfigError(
                    f"subject {self.subject_ids[i]}: d_total does not equal the "
                    "monitored-row count"
                )
            obs = self.observed_marker[lo:hi]
            if np.any(np.isnan(obs[mon == 1])):
                raise ConfigError(
                    f"subject {self.subject_ids[i]}: monitored months must record "
                    "a marker value"
                )
            if np.any(~np.isnan(obs[mon == 0])):
                raise ConfigError(
                    f"subject {self.subject_ids[i]}: marker recorded on an "
                    "unmonitored month"
                )
            if mon[0] != 1:
                raise ConfigError(
                    f"subject {self.subject_ids[i]}: baseline month must be "
                    "monitored (entry requires a measured marker)"
                )
            # carried-forward marker
            carry = np.where(mon == 1, obs, np.nan)
            expected_last = np.empty(hi - lo)
            cur = np.nan
            for k in range(hi - lo):
                if not np.isnan(carry[k]):
                    cur = carry[k]
                expected_last[k] = cur
            got = self.last_observed_marker[lo:hi]
            if not np.array_equal(np.isnan(expected_last), np.isnan(got)) or \
                    not np.allclose(np.nan_to_num(expected_last), np.nan_to_num(got)):
                raise ConfigError(
                    f"subject {self.subject_ids[i]}: last_observed_marker must "
                    "carry the most recent measurement forward"
                )
            m = self.months_since[lo:hi]
            if mon[0] == 1 and m[0] != 0:
                raise ConfigError(
                    f"subject {self.subject_ids[i]}: months_since_last_monitor "
                    "must be 0 on a monitored month"
                )
            for k in range(1, hi - lo):
                want = 0 if mon[k] == 1 else m[k - 1] + 1
                if m[k] != want:
                    raise ConfigError(
                        f"subject {self.subject_ids[i]}: months_since_last_monitor "
                        f"breaks the reset/increment rule at t={k}"
                    )

    # ------------------------------------------------------------------
    # record-level views
    # ------------------------------------------------------------------
    def record(self, i):
        lo, hi = self.offsets[i], self.offsets[i + 1]
        rows = [
            TimeRow(
                t=int(self.t[k]),
                monitor=int(self.monitor[k]),
                observed_marker=float(self.observed_marker[k]),
                last_observed_marker=float(self.last_observed_marker[k]),
                months_since_last_monitor=int(self.months_since[k]),
                override_flag=int(self.override_flag[k]),
            )
            for k in range(lo, hi)
        ]
        baseline = {
            f.name: float(self.baseline[i, j])
            for j, f in enumerate(self.schema.fields)
        }
        return SubjectRecord(
            subject_id=self.subject_ids[i],
            baseline=baseline,
            rows=rows,
            outcome_y=float(self.outcome_y[i]),
            d_total=int(self.d_total[i]),
            followup_end=int(self.followup_end[i]),
            end_reason=self.end_reason_name(i),
            horizon=self.horizon,
        )

    def records(self):
        return [self.record(i) for i in range(self.n_subjects)]

    @classmethod
    def from_records(cls, records, schema, horizon):
        if not records:
            raise ConfigError("cannot build a cohort from zero records")
        ids, base, fue, reason, y, d = [], [], [], [], [], []
        t, mon, obs, last, msince, ovr = [], [], [], [], [], []
        for r in records:
            ids.append(r.subject_id)
            base.append([r.baseline[f.name] for f in schema.fields])
            fue.append(r.followup_end)
            reason.append(_REASON_CODE[r.end_reason])
            y.append(np.nan if r.outcome_y is None else r.outcome_y)
            d.append(r.d_total)
            for row in r.rows:
                t.append(row.t)
                mon.append(row.monitor)
                obs.append(row.observed_marker)
                last.append(row.last_observed_marker)
                msince.append(row.months_since_last_monitor)
                ovr.append(row.override_flag)
        return cls(
            subject_ids=ids, baseline=np.array(base, dtype=np.float64),
            schema=schema, horizon=horizon, followup_end=fue,
            end_reason=reason, outcome_y=y, d_total=d, t=t, monitor=mon,
            observed_marker=obs, last_observed_marker=last,
            months_since=msince, override_flag=ovr,
        )

    # ------------------------------------------------------------------
    # derived array views used by the estimation pipeline
    # ------------------------------------------------------------------
    def prev_state(self):
        """Pre-decision state for every row: the previous row's observed state.

        Row t's monitoring decision is governed by the state recorded at
        t - 1. For t = 0 the row's own (baseline) state is returned, so the
        arrays are aligned with the flat row layout.
        """
        last = self.last_observed_marker
        ovr = self.override_flag
        m = self.months_since
        prev_last = np.empty_like(last)
        prev_ovr = np.empty_like(ovr)
        gap = np.empty_like(m)
        prev_last[1:] = last[:-1]
        prev_ovr[1:] = ovr[:-1]
        gap[1:] = m[:-1] + 1
        starts = self.offsets[:-1]
        prev_last[starts] = last[starts]
        prev_ovr[starts] = ovr[starts]
        gap[starts] = m[starts]
        return prev_last, prev_ovr, gap

    def subject_index_per_row(self):
        idx = np.zeros(self.n_rows, dtype=np.int64)
        idx[self.offsets[1:-1]] = 1
        return np.cumsum(idx)

    def decision_rows(self):
        """Mask of rows where an observational monitoring decision was made.

        The baseline month is a protocol visit (always monitored), so
        decisions start at t = 1.
        """
        return self.t >= 1


def baseline_design(cohort, terms="all"):
    """One-hot / identity design from baseline covariates.

    Categorical fields expand to indicator columns for every level beyond
    the first; continuous fields enter linearly. Returns ``(X, names)``.
    """
    if terms == "all":
        wanted = cohort.schema.names
    elif terms is None:
        wanted = []
    else:
        wanted = list(terms)
        unknown = set(wanted) - set(cohort.schema.names)
        if unknown:
            raise ConfigError(f"unknown baseline terms: {sorted(unknown)}")
    cols, names = [], []
    for j, f in enumerate(cohort.schema.fields):
        if f.name not in wanted:
            continue
        col = cohort.baseline[:, j]
        if f.kind == CONTINUOUS:
            cols.append(col)
            names.append(f.name)
        else:
            for code in range(1, len(f.levels)):
                cols.append((col == code).astype(np.float64))
                names.append(f"{f.name}={f.levels[code]}")
    if not cols:
        return np.empty((cohort.n_subjects, 0)), []
    return np.column_stack(cols), names
