"""Panel data model: ordered six-month periods, each holding a cross-section of stocks.

Storage is columnar per period (monthly values as an (n_obs, n_vars, 6) array)
with NaN marking missing cells and missing targets. A Panel is immutable by
convention after construction; imputation and slicing return new objects.

CSV layout (UTF-8, comma-delimited, header mandatory):

    period_label,obs_id,Train,X1_1,...,X1_6,X2_1,...,X{V}_6,Norm_Ret_F6M

Empty cells mean missing. Train is 0 or 1. Labels are "YYYY_H" with H in {1,2}.
"""

from __future__ import annotations

import csv
import hashlib
import re
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    AlreadyImputedError,
    DuplicatePeriodLabelOrderError,
    EmptyFileError,
    MalformedLabelError,
    MalformedRowError,
    MissingColumnError,
    OrdinalOutOfRangeError,
)

LABEL_RE = re.compile(r"^(\d{4})_([12])$")

N_MONTHS = 6

IMPUTE_ZERO = "zero"
IMPUTE_MEDIAN = "median"
RAW = "raw"


def parse_label(label: str) -> tuple[int, int]:
    """Split "YYYY_H" into (year, half)."""
    m = LABEL_RE.match(label)
    if not m:
        raise MalformedLabelError(f"period label must look like YYYY_H, got {label!r}")
    return int(m.group(1)), int(m.group(2))


def next_label(label: str) -> str:
    year, half = parse_label(label)
    return f"{year}_2" if half == 1 else f"{year + 1}_1"


@dataclass(frozen=True)
class PeriodId:
    ordinal: int
    label: str


@dataclass(frozen=True)
class StockObservation:
    """Row view over one stock in one period; monthly is (n_vars, 6)."""

    obs_id: str
    monthly: np.ndarray
    is_train: bool
    target: float | None


class PeriodData:
    """One period's cross-section."""

    __slots__ = ("pid", "obs_ids", "monthly", "is_train", "target")

    def __init__(self, pid: PeriodId, obs_ids: list[str], monthly: np.ndarray,
                 is_train: np.ndarray, target: np.ndarray):
        self.pid = pid
        self.obs_ids = obs_ids
        self.monthly = monthly
        self.is_train = is_train
        self.target = target

    @property
    def n_obs(self) -> int:
        return len(self.obs_ids)

    @property
    def n_vars(self) -> int:
        return self.monthly.shape[1]

    def observation(self, i: int) -> StockObservation:
        t = self.target[i]
        return StockObservation(
            obs_id=self.obs_ids[i],
            monthly=self.monthly[i],
            is_train=bool(self.is_train[i]),
            target=None if np.isnan(t) else float(t),
        )

    def filter_rows(self, mask: np.ndarray) -> "PeriodData":
        ids = [oid for oid, keep in zip(self.obs_ids, mask) if keep]
        return PeriodData(self.pid, ids, self.monthly[mask], self.is_train[mask],
                          self.target[mask])


@dataclass(frozen=True)
class Provenance:
    source: str
    imputation: str = RAW
    generator: str | None = None


class Panel:
    """Ordered list of periods. Views produced by slicing keep original ordinals."""

    def __init__(self, periods: list[PeriodData], provenance: Provenance):
        self.periods = periods
        self.provenance = provenance
        self._by_ordinal = {p.pid.ordinal: p for p in periods}

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def n_variables(self) -> int:
        return self.periods[0].n_vars if self.periods else 0

    @property
    def last_ordinal(self) -> int:
        return self.periods[-1].pid.ordinal

    def labels(self) -> list[str]:
        return [p.pid.label for p in self.periods]

    def period(self, ordinal: int) -> PeriodData:
        try:
            return self._by_ordinal[ordinal]
        except KeyError:
            raise OrdinalOutOfRangeError(f"no period with ordinal {ordinal}") from None

    def validate(self) -> None:
        """Check the construction invariants (fresh panels, not views)."""
        if not self.periods:
            raise EmptyFileError("panel has no periods")
        v = self.periods[0].n_vars
        prev_key = None
        for i, p in enumerate(self.periods):
            if p.pid.ordinal != i + 1:
                raise DuplicatePeriodLabelOrderError(
                    f"ordinals must be consecutive from 1, got {p.pid.ordinal} at position {i}")
            key = parse_label(p.pid.label)
            if prev_key is not None and key <= prev_key:
                raise DuplicatePeriodLabelOrderError(
                    f"labels must strictly increase, got {p.pid.label} after ordinal {i}")
            prev_key = key
            if p.n_obs < 1:
                raise MalformedRowError(f"period {p.pid.label} holds no observations")
            if p.monthly.shape != (p.n_obs, v, N_MONTHS):
                raise MalformedRowError(
                    f"period {p.pid.label} monthly shape {p.monthly.shape} inconsistent")
            final = i == len(self.periods) - 1
            if not final and np.any(p.is_train & np.isnan(p.target)):
                raise MalformedRowError(
                    f"period {p.pid.label}: training rows must carry a target")

    def equals(self, other: "Panel") -> bool:
        if self.n_periods != other.n_periods:
            return False
        for a, b in zip(self.periods, other.periods):
            if a.pid != b.pid or a.obs_ids != b.obs_ids:
                return False
            if not np.array_equal(a.monthly, b.monthly, equal_nan=True):
                return False
            if not np.array_equal(a.is_train, b.is_train):
                return False
            if not np.array_equal(a.target, b.target, equal_nan=True):
                return False
        return True

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.periods:
            h.update(p.pid.label.encode())
            h.update("\x00".join(p.obs_ids).encode())
            h.update(p.monthly.tobytes())
            h.update(p.is_train.tobytes())
            h.update(p.target.tobytes())
        return h.hexdigest()


def expected_header(n_vars: int) -> list[str]:
    cols = ["period_label", "obs_id", "Train"]
    for i in range(1, n_vars + 1):
        cols.extend(f"X{i}_{j}" for j in range(1, N_MONTHS + 1))
    cols.append("Norm_Ret_F6M")
    return cols


def load_csv(path) -> Panel:
    """Load a challenge-format CSV into a raw (unimputed) Panel."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFileError(f"{path}: file is empty") from None
        n_value_cols = len(header) - 4
        if n_value_cols < N_MONTHS or n_value_cols % N_MONTHS != 0:
            raise MissingColumnError(
                f"{path}: header has {len(header)} columns, expected 4 + 6*n_vars")
        n_vars = n_value_cols // N_MONTHS
        expect = expected_header(n_vars)
        if header != expect:
            bad = [c for c, e in zip(header, expect) if c != e][:3]
            raise MissingColumnError(f"{path}: unexpected header columns near {bad}")

        groups: dict[str, list[tuple[str, bool, np.ndarray, float]]] = {}
        n_fields = len(header)
        for row_no, row in enumerate(reader, start=2):
            if len(row) != n_fields:
                raise MalformedRowError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {n_fields}")
            label, obs_id, train_s = row[0], row[1], row[2]
            if not LABEL_RE.match(label):
                raise DuplicatePeriodLabelOrderError(
                    f"{path}: row {row_no} label {label!r} is not chronologically sortable")
            if train_s not in ("0", "1"):
                raise MalformedRowError(
                    f"{path}: row {row_no} Train must be 0 or 1, got {train_s!r}")
            try:
                vals = np.asarray([f if f != "" else "nan" for f in row[3:]],
                                  dtype=np.float64)
            except ValueError:
                raise MalformedRowError(
                    f"{path}: row {row_no} contains an unparseable number") from None
            monthly = vals[:-1].reshape(n_vars, N_MONTHS)
            groups.setdefault(label, []).append((obs_id, train_s == "1", monthly, vals[-1]))

    if not groups:
        raise EmptyFileError(f"{path}: no data rows")

    periods = []
    for ordinal, label in enumerate(sorted(groups), start=1):
        rows = groups[label]
        periods.append(PeriodData(
            pid=PeriodId(ordinal=ordinal, label=label),
            obs_ids=[r[0] for r in rows],
            monthly=np.stack([r[2] for r in rows]),
            is_train=np.asarray([r[1] for r in rows], dtype=bool),
            target=np.asarray([r[3] for r in rows], dtype=np.float64),
        ))
    panel = Panel(periods, Provenance(source=str(path)))
    panel.validate()
    return panel


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def write_csv(panel: Panel, path) -> None:
    """Inverse of load_csv; round-trips field-exactly (shortest-round-trip floats)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(expected_header(panel.n_variables)) + "\n")
        for p in panel.periods:
            flat = p.monthly.reshape(p.n_obs, -1)
            for i, oid in enumerate(p.obs_ids):
                cells = [p.pid.label, oid, "1" if p.is_train[i] else "0"]
                cells.extend(_fmt(v) for v in flat[i])
                cells.append(_fmt(p.target[i]))
                fh.write(",".join(cells) + "\n")


def impute(panel: Panel, strategy: str) -> Panel:
    """Fill missing monthly cells; returns a new Panel.

    "zero" writes 0 into every missing cell. "median" uses the per-period
    median of each (variable, month) column over that period's training rows,
    falling back to 0 when the whole column is missing. Targets are left
    untouched (they are absent by design on test rows and final periods).
    """
    if panel.provenance.imputation != RAW:
        raise AlreadyImputedError(
            f"panel already imputed with {panel.provenance.imputation!r}")
    if strategy not in (IMPUTE_ZERO, IMPUTE_MEDIAN):
        raise ValueError(f"unknown imputation strategy: {strategy!r}")
    periods = []
    for p in panel.periods:
        monthly = p.monthly.copy()
        mask = np.isnan(monthly)
        if mask.any():
            if strategy == IMPUTE_ZERO:
                monthly[mask] = 0.0
            else:
                train_block = monthly[p.is_train]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    med = (np.nanmedian(train_block, axis=0)
                           if train_block.shape[0] else
                           np.full((p.n_vars, N_MONTHS), np.nan))
                med = np.where(np.isnan(med), 0.0, med)
                fill = np.broadcast_to(med, monthly.shape)
                monthly[mask] = fill[mask]
        periods.append(PeriodData(p.pid, p.obs_ids, monthly, p.is_train, p.target))
    return Panel(periods, replace(panel.provenance, imputation=strategy))


def slice_window(panel: Panel, end_ordinal: int, last: int | None = None) -> Panel:
    """Periods with ordinal <= end_ordinal; last=k keeps only the k most recent of those."""
    if not 1 <= end_ordinal <= panel.last_ordinal:
        raise OrdinalOutOfRangeError(
            f"end_ordinal {end_ordinal} outside 1..{panel.last_ordinal}")
    if last is not None and last < 1:
        raise ValueError("last must be >= 1")
    kept = [p for p in panel.periods if p.pid.ordinal <= end_ordinal]
    if last is not None:
        kept = kept[-last:]
    return Panel(kept, panel.provenance)


def split(panel: Panel) -> tuple[Panel, Panel]:
    """Partition every period's rows by the train flag; (train view, test view)."""
    train = [p.filter_rows(p.is_train) for p in panel.periods]
    test = [p.filter_rows(~p.is_train) for p in panel.periods]
    return Panel(train, panel.provenance), Panel(test, panel.provenance)
