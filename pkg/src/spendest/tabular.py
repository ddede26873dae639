"""Typed tabular loading, cleaning, and one-hot encoding.

A :class:`Schema` gives every CSV column a role (id, categorical,
numeric, target, mention_flag).  Loading validates cells against that
role, cleaning drops unusable target rows, the IQR filter removes
outliers, and :func:`one_hot_encode` turns the surviving rows into a
dense float matrix with a reusable :class:`Encoding`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

COLUMN_KINDS = ("id", "categorical", "numeric", "target", "mention_flag")

# CSV cells spelled exactly this way count as missing.
MISSING_TOKENS = ("", "NA")

_TRUE_TOKENS = ("1", "true")
_FALSE_TOKENS = ("0", "false")


@dataclass(frozen=True)
class Column:
    name: str
    kind: str


@dataclass(frozen=True)
class Schema:
    """Ordered column roles for one dataset.

    Exactly one ``id`` and one ``target`` column are required; at most
    one ``mention_flag`` is allowed.  Names must be unique and nonempty.
    """

    columns: tuple[Column, ...]

    def __post_init__(self) -> None:
        names = [c.name for c in self.columns]
        if any(not n for n in names):
            raise DataError("schema column names must be nonempty")
        if len(set(names)) != len(names):
            raise DataError("schema column names must be unique")
        for c in self.columns:
            if c.kind not in COLUMN_KINDS:
                raise DataError(f"unknown column kind {c.kind!r} for {c.name!r}")
        kinds = [c.kind for c in self.columns]
        if kinds.count("id") != 1:
            raise DataError("schema needs exactly one id column")
        if kinds.count("target") != 1:
            raise DataError("schema needs exactly one target column")
        if kinds.count("mention_flag") > 1:
            raise DataError("schema allows at most one mention_flag column")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def id_column(self) -> str:
        return next(c.name for c in self.columns if c.kind == "id")

    @property
    def target_column(self) -> str:
        return next(c.name for c in self.columns if c.kind == "target")

    @property
    def mention_column(self) -> str | None:
        return next((c.name for c in self.columns if c.kind == "mention_flag"), None)

    @property
    def numeric_columns(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == "numeric"]

    @property
    def categorical_columns(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == "categorical"]

    def kind_of(self, name: str) -> str:
        for c in self.columns:
            if c.name == name:
                return c.kind
        raise DataError(f"unknown column {name!r}")

    def to_doc(self) -> list[dict]:
        return [{"name": c.name, "kind": c.kind} for c in self.columns]

    @classmethod
    def from_doc(cls, doc: Iterable[dict]) -> "Schema":
        cols = []
        for entry in doc:
            if set(entry) != {"name", "kind"}:
                raise DataError(f"schema entries need exactly name/kind, got {sorted(entry)}")
            cols.append(Column(str(entry["name"]), str(entry["kind"])))
        return cls(tuple(cols))


@dataclass(frozen=True)
class Table:
    """Immutable-by-convention rows under a schema.

    Cells are ``float`` (numeric/target), ``str`` (id/categorical),
    ``bool`` (mention_flag), or ``None`` for missing.  Rows are dicts
    keyed by column name; do not mutate them.
    """

    schema: Schema
    rows: tuple[dict, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        self.schema.kind_of(name)
        return [row[name] for row in self.rows]

    def subset(self, indices: Sequence[int]) -> "Table":
        return Table(self.schema, tuple(self.rows[i] for i in indices))

    def target_values(self) -> np.ndarray:
        """Observed target column as float64; raises if any cell is missing."""
        name = self.schema.target_column
        vals = []
        for i, row in enumerate(self.rows):
            if row[name] is None:
                raise DataError(f"row {i} has a missing target; clean_target first")
            vals.append(row[name])
        return np.asarray(vals, dtype=np.float64)


def _parse_cell(raw: str, kind: str, row_index: int, name: str):
    if kind in ("numeric", "target", "categorical", "mention_flag") and raw in MISSING_TOKENS:
        return None
    if kind == "id":
        if raw in MISSING_TOKENS:
            raise DataError(f"row {row_index}, column {name!r}: id may not be missing")
        return raw
    if kind == "categorical":
        return raw
    if kind == "mention_flag":
        low = raw.lower()
        if low in _TRUE_TOKENS:
            return True
        if low in _FALSE_TOKENS:
            return False
        raise DataError(f"row {row_index}, column {name!r}: {raw!r} is not a flag value")
    # numeric or target
    try:
        value = float(raw)
    except ValueError as exc:
        raise DataError(
            f"row {row_index}, column {name!r}: {raw!r} is not numeric"
        ) from exc
    if not math.isfinite(value):
        raise DataError(f"row {row_index}, column {name!r}: {raw!r} is not finite")
    return value


def load_csv(path: str | Path, schema: Schema) -> Table:
    """Read a CSV whose header matches the schema names, order-insensitive.

    Empty cells and the literal ``NA`` become missing.  Numeric cells that
    fail to parse raise :class:`DataError` naming the row and column.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file, expected a header row") from None
            if len(set(header)) != len(header):
                raise DataError(f"{path}: duplicate header columns")
            expected = set(schema.names)
            got = set(header)
            if got != expected:
                missing = sorted(expected - got)
                extra = sorted(got - expected)
                parts = []
                if missing:
                    parts.append(f"missing columns {missing}")
                if extra:
                    parts.append(f"unexpected columns {extra}")
                raise DataError(f"{path}: header mismatch: " + "; ".join(parts))
            positions = {name: header.index(name) for name in schema.names}
            rows = []
            for row_index, record in enumerate(reader, start=1):
                if len(record) != len(header):
                    raise DataError(
                        f"{path}: row {row_index} has {len(record)} cells, expected {len(header)}"
                    )
                row = {}
                for col in schema.columns:
                    raw = record[positions[col.name]]
                    row[col.name] = _parse_cell(raw, col.kind, row_index, col.name)
                rows.append(row)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return Table(schema, tuple(rows))


def clean_target(table: Table) -> Table:
    """Keep rows whose target is present and nonzero."""
    name = table.schema.target_column
    keep = [i for i, row in enumerate(table.rows) if row[name] is not None and row[name] != 0]
    return table.subset(keep)


def _quantile(sorted_values: Sequence[float], p: float) -> float:
    # Linear interpolation at position p * (n - 1) over the sorted values.
    n = len(sorted_values)
    pos = p * (n - 1)
    lo = math.floor(pos)
    hi = math.ceil(pos)
    if lo == hi:
        return float(sorted_values[lo])
    frac = pos - lo
    return float(sorted_values[lo] + (sorted_values[hi] - sorted_values[lo]) * frac)


def iqr_fences(values: Sequence[float], k: float) -> tuple[float, float]:
    """Tukey fences [Q1 - k*IQR, Q3 + k*IQR] with interpolated quartiles."""
    if len(values) == 0:
        raise DataError("cannot compute quartiles of an empty column")
    if k < 0:
        raise DataError(f"IQR multiplier must be nonnegative, got {k}")
    ordered = sorted(float(v) for v in values)
    q1 = _quantile(ordered, 0.25)
    q3 = _quantile(ordered, 0.75)
    iqr = q3 - q1
    return q1 - k * iqr, q3 + k * iqr


def iqr_filter(table: Table, column: str, k: float = 1.5) -> Table:
    """Drop rows whose ``column`` value falls outside the Tukey fences.

    Missing cells are kept; fences come from the observed cells only.
    """
    kind = table.schema.kind_of(column)
    if kind not in ("numeric", "target"):
        raise DataError(f"column {column!r} is {kind}, IQR filtering needs a numeric column")
    if len(table) == 0:
        raise DataError("cannot IQR-filter an empty table")
    observed = [row[column] for row in table.rows if row[column] is not None]
    low, high = iqr_fences(observed, k)
    keep = [
        i
        for i, row in enumerate(table.rows)
        if row[column] is None or low <= row[column] <= high
    ]
    return table.subset(keep)


@dataclass(frozen=True)
class Encoding:
    """Reusable one-hot vocabulary plus training-set numeric column means."""

    categorical: dict[str, list[str]] = field(default_factory=dict)
    numeric_means: dict[str, float] = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "categorical": {col: list(cats) for col, cats in self.categorical.items()},
            "numeric_means": {col: float(m) for col, m in self.numeric_means.items()},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Encoding":
        if set(doc) != {"categorical", "numeric_means"}:
            raise DataError(f"encoding document needs categorical/numeric_means, got {sorted(doc)}")
        return cls(
            categorical={str(c): [str(v) for v in vs] for c, vs in doc["categorical"].items()},
            numeric_means={str(c): float(m) for c, m in doc["numeric_means"].items()},
        )


@dataclass(frozen=True)
class EncodedMatrix:
    """Dense float64 feature matrix with stable feature names and row ids."""

    feature_names: tuple[str, ...]
    values: np.ndarray
    row_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise DataError("encoded matrix must be 2-D")
        if self.values.shape != (len(self.row_ids), len(self.feature_names)):
            raise DataError("encoded matrix shape disagrees with names/ids")
        if self.values.size and not np.isfinite(self.values).all():
            raise DataError("encoded matrix must be finite")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def take(self, indices: Sequence[int]) -> "EncodedMatrix":
        idx = np.asarray(indices, dtype=np.intp)
        return EncodedMatrix(
            self.feature_names,
            self.values[idx],
            tuple(self.row_ids[i] for i in idx),
        )


def _build_encoding(table: Table) -> Encoding:
    schema = table.schema
    categorical = {}
    for col in schema.categorical_columns:
        seen = {row[col] for row in table.rows if row[col] is not None}
        categorical[col] = sorted(seen)
    numeric_means = {}
    for col in schema.numeric_columns:
        observed = [row[col] for row in table.rows if row[col] is not None]
        # A column with no observations still needs a defined fill value.
        numeric_means[col] = float(np.mean(observed)) if observed else 0.0
    return Encoding(categorical=categorical, numeric_means=numeric_means)


def one_hot_encode(table: Table, encoding: Encoding | None = None) -> tuple[EncodedMatrix, Encoding]:
    """Encode numeric and categorical columns into a dense matrix.

    Feature order: numeric columns in schema order, then one dummy per
    category, groups in schema order and categories sorted.  A category
    absent from the encoding (or a missing cell) encodes as all zeros;
    a missing numeric cell becomes that column's recorded mean.
    """
    schema = table.schema
    if encoding is None:
        encoding = _build_encoding(table)
    else:
        for col in schema.categorical_columns:
            if col not in encoding.categorical:
                raise DataError(f"encoding lacks categories for column {col!r}")
        for col in schema.numeric_columns:
            if col not in encoding.numeric_means:
                raise DataError(f"encoding lacks a mean for numeric column {col!r}")

    feature_names: list[str] = list(schema.numeric_columns)
    for col in schema.categorical_columns:
        feature_names.extend(f"{col}={cat}" for cat in encoding.categorical[col])

    n = len(table)
    values = np.zeros((n, len(feature_names)), dtype=np.float64)
    for j, col in enumerate(schema.numeric_columns):
        mean = encoding.numeric_means[col]
        for i, row in enumerate(table.rows):
            cell = row[col]
            values[i, j] = mean if cell is None else cell
    offset = len(schema.numeric_columns)
    for col in schema.categorical_columns:
        index = {cat: offset + j for j, cat in enumerate(encoding.categorical[col])}
        for i, row in enumerate(table.rows):
            cell = row[col]
            if cell is not None and cell in index:
                values[i, index[cell]] = 1.0
        offset += len(encoding.categorical[col])

    id_col = schema.id_column
    row_ids = tuple(row[id_col] for row in table.rows)
    matrix = EncodedMatrix(tuple(feature_names), values, row_ids)
    return matrix, encoding


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint train/test row indices from a seeded shuffle."""

    train: tuple[int, ...]
    test: tuple[int, ...]
    seed: int


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_test_split(n: int, test_fraction: float, seed: int) -> SplitIndices:
    """Split ``range(n)`` with |test| = round(test_fraction * n)."""
    if n < 0:
        raise DataError(f"row count must be nonnegative, got {n}")
    if not 0.0 <= test_fraction <= 1.0:
        raise DataError(f"test_fraction must lie in [0, 1], got {test_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = round_half_up(test_fraction * n)
    test = tuple(sorted(int(i) for i in order[:n_test]))
    train = tuple(sorted(int(i) for i in order[n_test:]))
    return SplitIndices(train=train, test=test, seed=seed)
