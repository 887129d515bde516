"""Columnar datasets, CSV input/output and out-of-time partitioning.

A :class:`Dataset` is a small immutable-by-convention column store: one
target column (binary), one period column (integer YYYYMM), optional id
column, and any number of numeric, categorical or latent predictor
columns.  Missing values are NaN (numeric) or ``None`` (categorical) and
round-trip through CSV as empty fields.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

COLUMN_KINDS = ("numeric", "categorical", "period", "target", "id", "latent")

# integer-valued kinds; missing values are not allowed in these columns
_INT_KINDS = frozenset({"period", "target", "id"})
_FLOAT_KINDS = frozenset({"numeric", "latent"})


class DataError(ValueError):
    """Schema or value violation in a dataset."""


@dataclass
class Column:
    name: str
    kind: str
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in COLUMN_KINDS:
            raise DataError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.kind in _INT_KINDS:
            self.values = np.asarray(self.values, dtype=np.int64)
        elif self.kind in _FLOAT_KINDS:
            self.values = np.asarray(self.values, dtype=np.float64)
        else:
            self.values = np.asarray(self.values, dtype=object)


class Dataset:
    """Equal-length named columns plus kind metadata."""

    def __init__(self, columns: list[Column], *, require_target: bool = True):
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        lengths = {len(c.values) for c in columns}
        if len(lengths) > 1:
            raise DataError(f"columns have unequal lengths: {sorted(lengths)}")
        self.columns = columns
        self._by_name = {c.name: c for c in columns}
        self._validate(require_target)

    def _validate(self, require_target: bool) -> None:
        targets = [c for c in self.columns if c.kind == "target"]
        periods = [c for c in self.columns if c.kind == "period"]
        if len(periods) != 1:
            raise DataError(f"expected exactly one period column, found {len(periods)}")
        bad_period = _invalid_periods(periods[0].values)
        if bad_period.size:
            raise DataError(
                f"period column {periods[0].name!r} has non-YYYYMM value "
                f"{periods[0].values[bad_period[0]]} at row {bad_period[0] + 1}"
            )
        if require_target:
            if len(targets) != 1:
                raise DataError(f"expected exactly one target column, found {len(targets)}")
            tv = targets[0].values
            bad = np.flatnonzero((tv != 0) & (tv != 1))
            if bad.size:
                raise DataError(
                    f"target column {targets[0].name!r} has value {tv[bad[0]]} "
                    f"outside {{0,1}} at row {bad[0] + 1}"
                )
        elif len(targets) > 1:
            raise DataError("more than one target column")

    # -- accessors ----------------------------------------------------------

    @property
    def n_rows(self) -> int:
        return len(self.columns[0].values) if self.columns else 0

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        try:
            return self._by_name[name]
        except KeyError:
            raise DataError(f"no column named {name!r}") from None

    def kind(self, name: str) -> str:
        return self.column(name).kind

    def target(self) -> np.ndarray:
        col = next(c for c in self.columns if c.kind == "target")
        return col.values

    def periods(self) -> np.ndarray:
        col = next(c for c in self.columns if c.kind == "period")
        return col.values

    def predictor_names(self) -> list[str]:
        """Names of modeling columns: numeric and categorical kinds only."""
        return [c.name for c in self.columns if c.kind in ("numeric", "categorical")]

    def take(self, index: np.ndarray) -> "Dataset":
        """Row subset (boolean mask or integer index), copied."""
        has_target = any(c.kind == "target" for c in self.columns)
        cols = [Column(c.name, c.kind, c.values[index].copy()) for c in self.columns]
        return Dataset(cols, require_target=has_target)


@dataclass
class TimePartition:
    boundary: int
    train: Dataset
    valid: Dataset


def _invalid_periods(values: np.ndarray) -> np.ndarray:
    months = values % 100
    return np.flatnonzero((values < 190001) | (months < 1) | (months > 12))


# -- CSV ---------------------------------------------------------------------


def _format_cell(kind: str, v) -> str:
    if kind in _INT_KINDS:
        return str(int(v))
    if kind in _FLOAT_KINDS:
        fv = float(v)
        return "" if np.isnan(fv) else repr(fv)
    return "" if v is None else str(v)


def save_csv(dataset: Dataset, path: str | Path, *, write_schema: bool = True) -> None:
    """Write a dataset as UTF-8 CSV with a header row.

    Floats are rendered with shortest round-trip repr so that
    ``load_csv(save_csv(ds))`` reproduces values bit for bit.  A sidecar
    ``<path>.schema`` records column kinds unless disabled.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset.names)
        kinds = [c.kind for c in dataset.columns]
        cols = [c.values for c in dataset.columns]
        for i in range(dataset.n_rows):
            writer.writerow([_format_cell(k, col[i]) for k, col in zip(kinds, cols)])
    if write_schema:
        schema_path = path.with_name(path.name + ".schema")
        with schema_path.open("w", encoding="utf-8") as fh:
            for c in dataset.columns:
                fh.write(f"{c.name}={c.kind}\n")


def _read_schema(path: Path) -> dict[str, str]:
    schema: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}: line {lineno} is not name=kind")
        name, kind = line.split("=", 1)
        if kind not in COLUMN_KINDS:
            raise DataError(f"{path}: unknown kind {kind!r} for column {name!r}")
        schema[name] = kind
    return schema


def _infer_kind(name: str, raw: list[str]) -> str:
    if name == "period":
        return "period"
    if name == "target":
        return "target"
    if name == "id":
        return "id"
    non_empty = [v for v in raw if v != ""]
    if not non_empty:
        return "numeric"
    try:
        for v in non_empty:
            float(v)
    except ValueError:
        return "categorical"
    return "numeric"


def load_csv(
    path: str | Path,
    schema: dict[str, str] | None = None,
    *,
    require_target: bool = True,
) -> Dataset:
    """Load a CSV into a Dataset.

    Column kinds come from, in order of precedence: the ``schema``
    argument, a ``<path>.schema`` sidecar, or inference (columns named
    period/target/id get those kinds; otherwise all-numeric parses are
    numeric and anything else categorical).  Empty fields are missing.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    width = len(header)
    for i, row in enumerate(rows, 1):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {width}")

    if schema is None:
        sidecar = path.with_name(path.name + ".schema")
        schema = _read_schema(sidecar) if sidecar.exists() else {}

    raw_cols = [[row[j] for row in rows] for j in range(width)]
    columns = []
    for name, raw in zip(header, raw_cols):
        kind = schema.get(name) or _infer_kind(name, raw)
        columns.append(_parse_column(name, kind, raw))
    return Dataset(columns, require_target=require_target)


def _parse_column(name: str, kind: str, raw: list[str]) -> Column:
    if kind in _INT_KINDS:
        values = np.empty(len(raw), dtype=np.int64)
        for i, v in enumerate(raw):
            if v == "":
                raise DataError(f"column {name!r}: missing value at row {i + 1} not allowed")
            try:
                values[i] = int(v)
            except ValueError:
                raise DataError(f"column {name!r}: non-integer {v!r} at row {i + 1}") from None
        if kind == "target":
            bad = np.flatnonzero((values != 0) & (values != 1))
            if bad.size:
                raise DataError(
                    f"column {name!r}: target value {values[bad[0]]} at row {bad[0] + 1} "
                    "outside {0,1}"
                )
        return Column(name, kind, values)
    if kind in _FLOAT_KINDS:
        values = np.full(len(raw), np.nan)
        for i, v in enumerate(raw):
            if v != "":
                try:
                    values[i] = float(v)
                except ValueError:
                    raise DataError(f"column {name!r}: non-numeric {v!r} at row {i + 1}") from None
        return Column(name, kind, values)
    values = np.array([None if v == "" else v for v in raw], dtype=object)
    return Column(name, kind, values)


# -- partitioning ------------------------------------------------------------


def time_partition(dataset: Dataset, boundary: int) -> TimePartition:
    """Split by period: rows with period <= boundary train, the rest validate.

    Raises when either side would be empty, since an out-of-time
    comparison needs observations on both sides of the boundary.
    """
    periods = dataset.periods()
    train_mask = periods <= boundary
    n_train = int(train_mask.sum())
    if n_train == 0:
        raise DataError(f"boundary {boundary} precedes all periods (min {periods.min()})")
    if n_train == dataset.n_rows:
        raise DataError(f"boundary {boundary} follows all periods (max {periods.max()})")
    return TimePartition(
        boundary=boundary,
        train=dataset.take(train_mask),
        valid=dataset.take(~train_mask),
    )


def subsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Uniform row subsample without replacement, order preserving."""
    if not 0 < fraction <= 1:
        raise DataError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return dataset
    n_keep = max(1, int(round(dataset.n_rows * fraction)))
    rng = np.random.default_rng([seed, 0x5AB5])
    idx = np.sort(rng.choice(dataset.n_rows, size=n_keep, replace=False))
    return dataset.take(idx)
