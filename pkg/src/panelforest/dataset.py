"""Entity-by-year panel container and analysis-ready transformations.

A :class:`PanelDataset` holds named numeric series keyed by (entity, year).
Rows are stored in canonical (entity, year) order, missing cells are NaN,
and every operation returns a new dataset, so instances are safe to share.

Lags are keyed by calendar year, not row position: the lag of ``x`` at
(e, y) is the value at (e, y - k), which keeps unbalanced panels aligned
and never leaks values across entities.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "PanelDataset",
    "DescriptiveStats",
    "ColumnStats",
    "CorrelationMatrix",
    "OutlierRule",
    "SchemaError",
    "IntegrityError",
    "RemovalRecord",
    "from_records",
    "load_csv",
    "add_lags",
    "log_transform",
    "remove_outliers",
    "describe",
    "correlation_matrix",
    "write_removal_log",
]

ROLES = {"dependent", "regressor", "control", "instrument", "derived"}


class SchemaError(ValueError):
    """Input file does not provide the required entity/year layout."""


class IntegrityError(ValueError):
    """Panel invariant violated (duplicate keys, unknown columns, ...)."""


@dataclass(frozen=True)
class PanelDataset:
    """Immutable entity x year panel of named numeric series.

    Attributes
    ----------
    entity : np.ndarray
        Entity code per row (string), canonical (entity, year) sort order.
    year : np.ndarray
        Calendar year per row (int64).
    columns : dict
        Column name -> float64 array aligned with rows; NaN marks missing.
    column_roles : dict
        Column name -> role in {dependent, regressor, control, instrument,
        derived}.
    derived_from : dict
        For derived columns, name -> (parent column, transformation tag).
    parse_warnings : dict
        Column name -> count of unparseable cells coerced to missing
        during CSV loading.
    """

    entity: np.ndarray
    year: np.ndarray
    columns: dict[str, np.ndarray]
    column_roles: dict[str, str] = field(default_factory=dict)
    derived_from: dict[str, tuple[str, str]] = field(default_factory=dict)
    parse_warnings: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.entity)
        if len(self.year) != n:
            raise IntegrityError("entity and year arrays differ in length")
        for name, values in self.columns.items():
            if len(values) != n:
                raise IntegrityError(f"column {name!r} has {len(values)} rows, expected {n}")
        keys = list(zip(self.entity.tolist(), self.year.tolist()))
        if len(set(keys)) != n:
            seen, dups = set(), set()
            for k in keys:
                if k in seen:
                    dups.add(k)
                seen.add(k)
            raise IntegrityError(f"duplicate (entity, year) keys: {sorted(dups)[:5]}")
        if keys != sorted(keys):
            raise IntegrityError("rows must be sorted by (entity, year)")
        for name, role in self.column_roles.items():
            if role not in ROLES:
                raise IntegrityError(f"unknown role {role!r} for column {name!r}")

    # -- basic views ---------------------------------------------------

    @property
    def n_rows(self) -> int:
        return len(self.entity)

    @property
    def entities(self) -> list[str]:
        """Unique entity codes in canonical order."""
        return sorted(set(self.entity.tolist()))

    @property
    def years(self) -> list[int]:
        """Unique years, ascending."""
        return sorted(set(self.year.tolist()))

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise KeyError(f"unknown column {name!r}; have {sorted(self.columns)}") from None

    def require_columns(self, names: Iterable[str]) -> None:
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise KeyError(f"unknown columns {missing}; have {sorted(self.columns)}")

    def with_column(self, name: str, values: np.ndarray, role: str = "derived",
                    parent: str | None = None, transform: str | None = None) -> "PanelDataset":
        """New dataset with one column added (or replaced)."""
        cols = dict(self.columns)
        cols[name] = np.asarray(values, dtype=np.float64)
        roles = dict(self.column_roles)
        roles[name] = role
        derived = dict(self.derived_from)
        if parent is not None:
            derived[name] = (parent, transform or "")
        return PanelDataset(self.entity, self.year, cols, roles, derived, dict(self.parse_warnings))

    def select_rows(self, mask: np.ndarray) -> "PanelDataset":
        """New dataset restricted to rows where mask is True."""
        mask = np.asarray(mask, dtype=bool)
        cols = {name: values[mask] for name, values in self.columns.items()}
        return PanelDataset(self.entity[mask], self.year[mask], cols,
                            dict(self.column_roles), dict(self.derived_from),
                            dict(self.parse_warnings))

    def complete_rows(self, names: Sequence[str]) -> np.ndarray:
        """Boolean mask of rows with no missing value in `names`."""
        self.require_columns(names)
        mask = np.ones(self.n_rows, dtype=bool)
        for name in names:
            mask &= ~np.isnan(self.columns[name])
        return mask

    def fingerprint(self) -> str:
        """Content hash used to match fits against their source data."""
        import hashlib

        h = hashlib.sha256()
        h.update("\x1f".join(self.entity.tolist()).encode())
        h.update(self.year.astype(np.int64).tobytes())
        for name in sorted(self.columns):
            values = self.columns[name]
            h.update(name.encode())
            h.update(np.isnan(values).tobytes())
            h.update(np.nan_to_num(values, nan=0.0).astype(np.float64).tobytes())
        return h.hexdigest()


def from_records(entity: Sequence[str], year: Sequence[int],
                 columns: Mapping[str, Sequence[float]],
                 column_roles: Mapping[str, str] | None = None) -> PanelDataset:
    """Build a dataset from parallel sequences, sorting rows canonically."""
    ent = np.asarray(entity, dtype=object)
    yr = np.asarray(year, dtype=np.int64)
    order = np.lexsort((yr, ent))
    cols = {name: np.asarray(vals, dtype=np.float64)[order] for name, vals in columns.items()}
    return PanelDataset(ent[order], yr[order], cols, dict(column_roles or {}))


def load_csv(path, role_map: Mapping[str, str] | None = None,
             entity_col: str = "Code", year_col: str = "Year") -> PanelDataset:
    """Load a UTF-8 CSV with a header row into a PanelDataset.

    The file must contain `entity_col` and `year_col`; every other column
    is parsed as numeric.  Empty cells and unparseable numeric cells become
    missing (the latter are counted per column in ``parse_warnings``).

    Raises
    ------
    SchemaError
        Missing entity/year column, or a role_map name absent from the header.
    IntegrityError
        Duplicate (entity, year) rows.
    """
    role_map = dict(role_map or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if entity_col not in header:
            raise SchemaError(f"{path}: missing entity column {entity_col!r}")
        if year_col not in header:
            raise SchemaError(f"{path}: missing year column {year_col!r}")
        unknown_roles = [n for n in role_map if n not in header]
        if unknown_roles:
            raise SchemaError(f"{path}: role_map names not in header: {unknown_roles}")

        e_idx, y_idx = header.index(entity_col), header.index(year_col)
        value_names = [h for i, h in enumerate(header) if i not in (e_idx, y_idx)]
        entities, years = [], []
        raw_cols: dict[str, list[float]] = {name: [] for name in value_names}
        bad_cells: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            entities.append(row[e_idx].strip())
            try:
                years.append(int(float(row[y_idx])))
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-integer year {row[y_idx]!r}") from None
            for i, name in enumerate(value_names):
                col_pos = header.index(name)
                cell = row[col_pos].strip() if col_pos < len(row) else ""
                if not cell:
                    raw_cols[name].append(math.nan)
                    continue
                try:
                    raw_cols[name].append(float(cell))
                except ValueError:
                    raw_cols[name].append(math.nan)
                    bad_cells[name] = bad_cells.get(name, 0) + 1

    ent = np.asarray(entities, dtype=object)
    yr = np.asarray(years, dtype=np.int64)
    keys = list(zip(entities, years))
    if len(set(keys)) != len(keys):
        seen, dups = set(), []
        for k in keys:
            if k in seen:
                dups.append(k)
            seen.add(k)
        raise IntegrityError(f"{path}: duplicate (entity, year) rows: {dups[:5]}")
    order = np.lexsort((yr, ent))
    cols = {name: np.asarray(vals, dtype=np.float64)[order] for name, vals in raw_cols.items()}
    if bad_cells:
        total = sum(bad_cells.values())
        warnings.warn(f"{path}: {total} unparseable numeric cells coerced to missing "
                      f"({dict(sorted(bad_cells.items()))})", stacklevel=2)
    return PanelDataset(ent[order], yr[order], cols, role_map, parse_warnings=bad_cells)


def add_lags(ds: PanelDataset, vars: Sequence[str], k: int = 1) -> PanelDataset:
    """Add calendar-lag columns ``<name>(t-k)`` for each name in `vars`.

    The lag at (e, y) is the value at (e, y - k) when that row exists,
    otherwise missing; entities never borrow from each other, and gap
    years lag to missing rather than to the previous row.
    """
    if k < 1:
        raise ValueError(f"lag order must be >= 1, got {k}")
    ds.require_columns(vars)
    out = ds
    # (entity, year) -> row index; rebuilt once, shared by all vars
    index = {(e, y): i for i, (e, y) in enumerate(zip(ds.entity.tolist(), ds.year.tolist()))}
    for name in vars:
        src = ds.columns[name]
        lagged = np.full(ds.n_rows, np.nan)
        for i, (e, y) in enumerate(zip(ds.entity.tolist(), ds.year.tolist())):
            j = index.get((e, y - k))
            if j is not None:
                lagged[i] = src[j]
        out = out.with_column(f"{name}(t-{k})", lagged, role="derived",
                              parent=name, transform=f"lag:{k}")
    return out


def log_transform(ds: PanelDataset, vars: Sequence[str]) -> PanelDataset:
    """Add natural-log columns ``LN_<name>``; missing stays missing.

    Raises ValueError identifying (entity, year, variable) on any
    non-positive value.
    """
    ds.require_columns(vars)
    out = ds
    for name in vars:
        src = ds.columns[name]
        bad = np.where(~np.isnan(src) & (src <= 0))[0]
        if bad.size:
            i = int(bad[0])
            raise ValueError(
                f"log_transform({name!r}): non-positive value {src[i]} at "
                f"entity={ds.entity[i]!r}, year={int(ds.year[i])}"
                + (f" (+{bad.size - 1} more)" if bad.size > 1 else "")
            )
        with np.errstate(invalid="ignore"):
            out = out.with_column(f"LN_{name}", np.log(src), role="derived",
                                  parent=name, transform="log")
    return out


@dataclass(frozen=True)
class OutlierRule:
    """Observation-wise outlier rule: none, iqr(k), or zscore(k)."""

    kind: str = "iqr"  # {"none", "iqr", "zscore"}
    k: float = 1.5

    def __post_init__(self):
        if self.kind not in {"none", "iqr", "zscore"}:
            raise ValueError(f"unknown outlier rule {self.kind!r}")
        if self.kind != "none" and self.k <= 0:
            raise ValueError("outlier rule multiplier must be positive")

    def bounds(self, values: np.ndarray) -> tuple[float, float]:
        clean = values[~np.isnan(values)]
        if self.kind == "iqr":
            q1, q3 = np.percentile(clean, [25, 75])
            span = self.k * (q3 - q1)
            return float(q1 - span), float(q3 + span)
        if self.kind == "zscore":
            mu, sd = float(np.mean(clean)), float(np.std(clean, ddof=1))
            return mu - self.k * sd, mu + self.k * sd
        return -math.inf, math.inf


@dataclass(frozen=True)
class RemovalRecord:
    entity: str
    year: int
    variable: str
    value: float
    lower: float
    upper: float


def remove_outliers(ds: PanelDataset, vars: Sequence[str],
                    rule: OutlierRule | None = None) -> tuple[PanelDataset, list[RemovalRecord]]:
    """Drop observations flagged by `rule` on any variable in `vars`.

    Returns the filtered dataset and a removal log with exactly one
    record per dropped row, attributed to the first variable (in `vars`
    order) that flagged it.  `rule=None` defaults to iqr(1.5); use
    ``OutlierRule("none")`` for a no-op.
    """
    rule = rule if rule is not None else OutlierRule("iqr", 1.5)
    ds.require_columns(vars)
    if rule.kind == "none":
        return ds, []
    keep = np.ones(ds.n_rows, dtype=bool)
    log: list[RemovalRecord] = []
    for name in vars:
        values = ds.columns[name]
        if np.all(np.isnan(values)):
            continue
        lo, hi = rule.bounds(values)
        flagged = keep & ~np.isnan(values) & ((values < lo) | (values > hi))
        for i in np.where(flagged)[0]:
            log.append(RemovalRecord(str(ds.entity[i]), int(ds.year[i]), name,
                                     float(values[i]), lo, hi))
        keep &= ~flagged
    return ds.select_rows(keep), sorted(log, key=lambda r: (r.entity, r.year, r.variable))


def write_removal_log(log: Sequence[RemovalRecord], path) -> None:
    """Write the removal log as CSV: entity,year,variable,value,lower,upper."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity", "year", "variable", "value", "lower", "upper"])
        for rec in log:
            writer.writerow([rec.entity, rec.year, rec.variable,
                             repr(rec.value), repr(rec.lower), repr(rec.upper)])


@dataclass(frozen=True)
class ColumnStats:
    mean: float
    median: float
    min: float
    max: float
    std_dev: float
    skewness: float
    kurtosis: float
    count: int


@dataclass(frozen=True)
class DescriptiveStats:
    """Per-column summary statistics over non-missing cells.

    std_dev is the sample standard deviation (n-1 denominator); skewness
    and kurtosis are the standardized central-moment estimators m3/m2^1.5
    and m4/m2^2 - 3 (excess/Fisher convention).  Undefined statistics are
    NaN, never an exception.
    """

    columns: dict[str, ColumnStats]

    def __getitem__(self, name: str) -> ColumnStats:
        return self.columns[name]

    def rows(self) -> list[tuple]:
        out = []
        for name, s in self.columns.items():
            out.append((name, s.mean, s.median, s.min, s.max, s.std_dev,
                        s.skewness, s.kurtosis, s.count))
        return out


def _column_stats(values: np.ndarray) -> ColumnStats:
    clean = values[~np.isnan(values)]
    n = clean.size
    if n < 2:
        m = float(clean[0]) if n == 1 else math.nan
        return ColumnStats(m, m, m, m, math.nan, math.nan, math.nan, n)
    mean = float(np.mean(clean))
    centered = clean - mean
    m2 = float(np.mean(centered**2))
    m3 = float(np.mean(centered**3))
    m4 = float(np.mean(centered**4))
    if m2 > 0:
        skew = m3 / m2**1.5
        kurt = m4 / m2**2 - 3.0
    else:
        skew, kurt = 0.0, math.nan  # constant column
    return ColumnStats(mean, float(np.median(clean)), float(np.min(clean)),
                       float(np.max(clean)), float(np.std(clean, ddof=1)), skew, kurt, n)


def describe(ds: PanelDataset, vars: Sequence[str] | None = None) -> DescriptiveStats:
    """Descriptive statistics for `vars` (default: every column)."""
    names = list(vars) if vars is not None else list(ds.columns)
    ds.require_columns(names)
    return DescriptiveStats({name: _column_stats(ds.columns[name]) for name in names})


@dataclass(frozen=True)
class CorrelationMatrix:
    """Pairwise-complete Pearson correlations; NaN marks undefined pairs."""

    names: tuple[str, ...]
    matrix: np.ndarray

    def __getitem__(self, pair: tuple[str, str]) -> float:
        i, j = self.names.index(pair[0]), self.names.index(pair[1])
        return float(self.matrix[i, j])


def correlation_matrix(ds: PanelDataset, vars: Sequence[str]) -> CorrelationMatrix:
    """Pearson correlations on pairwise-complete observations.

    Diagonal is exactly 1.  Pairs with fewer than 2 complete observations
    or a zero-variance side get NaN.
    """
    names = list(vars)
    ds.require_columns(names)
    p = len(names)
    mat = np.full((p, p), np.nan)
    np.fill_diagonal(mat, 1.0)
    series = [ds.columns[n] for n in names]
    for i in range(p):
        for j in range(i + 1, p):
            both = ~np.isnan(series[i]) & ~np.isnan(series[j])
            if both.sum() < 2:
                continue
            x, y = series[i][both], series[j][both]
            sx, sy = np.std(x), np.std(y)
            if sx == 0 or sy == 0:
                continue
            r = float(np.mean((x - np.mean(x)) * (y - np.mean(y))) / (sx * sy))
            mat[i, j] = mat[j, i] = min(1.0, max(-1.0, r))
    return CorrelationMatrix(tuple(names), mat)
