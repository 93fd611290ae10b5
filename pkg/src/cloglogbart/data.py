"""Dataset ingestion, validation, and the built-in simulation generators.

CSV in: header row, comma-delimited, UTF-8, decimal point, no missing
values.  Categorical predictors are declared by name and expanded to one
indicator column per level in alphabetical order, with the mapping recorded
so datasets round-trip exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

ROLES = ("outcome", "time", "status", "predictor", "categorical-predictor")


@dataclass
class Schema:
    """Column role declarations for ingestion."""

    outcome: str | None = None
    time: str | None = None
    status: str | None = None
    predictors: list[str] | None = None  # None = every remaining column
    categorical: list[str] = field(default_factory=list)
    outcome_kind: str = "numeric"  # numeric | ordinal | binary
    K: int | None = None


@dataclass
class Dataset:
    names: list[str]  # expanded column names
    matrix: np.ndarray  # (n, len(names)) floats
    roles: dict  # expanded column name -> role
    categorical_levels: dict = field(default_factory=dict)  # raw col -> levels
    raw_categorical: dict = field(default_factory=dict)  # raw col -> string values

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.names == other.names
            and self.roles == other.roles
            and self.categorical_levels == other.categorical_levels
            and np.array_equal(self.matrix, other.matrix)
            and {k: list(v) for k, v in self.raw_categorical.items()}
            == {k: list(v) for k, v in other.raw_categorical.items()}
        )

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.matrix[:, self.names.index(name)]

    def predictor_names(self) -> list[str]:
        return [c for c in self.names
                if self.roles[c] in ("predictor", "categorical-predictor")]

    def predictors(self) -> np.ndarray:
        cols = [self.names.index(c) for c in self.predictor_names()]
        return self.matrix[:, cols]

    def outcome(self) -> np.ndarray:
        for name, role in self.roles.items():
            if role == "outcome":
                return self.column(name)
        raise DataError("dataset has no outcome column")

    def time_status(self) -> tuple[np.ndarray, np.ndarray]:
        t = s = None
        for name, role in self.roles.items():
            if role == "time":
                t = self.column(name)
            elif role == "status":
                s = self.column(name)
        if t is None or s is None:
            raise DataError("dataset lacks time/status columns")
        return t, s.astype(np.int64)


def _parse_cell(raw: str, row: int, col: str) -> float:
    text = raw.strip()
    if text == "":
        raise DataError(f"missing value at row {row}, column '{col}'")
    try:
        return float(text)
    except ValueError:
        raise DataError(
            f"non-numeric value '{text}' at row {row}, column '{col}'"
        ) from None


def load_dataset(path, schema: Schema) -> Dataset:
    """Typed dataset from CSV; raises DataError naming the offending row and
    column on any validation failure."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]

    declared = [c for c in ([schema.outcome, schema.time, schema.status] or [])
                if c] + list(schema.categorical or []) + list(schema.predictors or [])
    for col in declared:
        if col not in header:
            raise DataError(f"schema names unknown column '{col}'")

    special = {c for c in (schema.outcome, schema.time, schema.status) if c}
    if schema.predictors is None:
        pred_cols = [c for c in header if c not in special]
    else:
        pred_cols = list(schema.predictors)
    cat_cols = [c for c in pred_cols if c in set(schema.categorical)]
    num_pred_cols = [c for c in pred_cols if c not in set(schema.categorical)]

    n = len(rows)
    col_index = {c: i for i, c in enumerate(header)}
    for r, row in enumerate(rows, start=2):  # 1-based with header as row 1
        if len(row) != len(header):
            raise DataError(f"row {r} has {len(row)} cells, expected {len(header)}")

    def numeric_column(col: str) -> np.ndarray:
        idx = col_index[col]
        return np.array([_parse_cell(rows[i][idx], i + 2, col) for i in range(n)])

    names: list[str] = []
    columns: list[np.ndarray] = []
    roles: dict[str, str] = {}
    cat_levels: dict[str, list] = {}
    raw_cat: dict[str, list] = {}

    if schema.outcome:
        col = numeric_column(schema.outcome)
        _validate_outcome(col, schema, schema.outcome)
        names.append(schema.outcome)
        columns.append(col)
        roles[schema.outcome] = "outcome"
    if schema.time:
        col = numeric_column(schema.time)
        bad = np.flatnonzero(col <= 0)
        if bad.size:
            raise DataError(
                f"nonpositive time {col[bad[0]]} at row {bad[0] + 2}, "
                f"column '{schema.time}'")
        names.append(schema.time)
        columns.append(col)
        roles[schema.time] = "time"
    if schema.status:
        col = numeric_column(schema.status)
        bad = np.flatnonzero(~np.isin(col, [0.0, 1.0]))
        if bad.size:
            raise DataError(
                f"status must be 0/1; got {col[bad[0]]} at row {bad[0] + 2}, "
                f"column '{schema.status}'")
        names.append(schema.status)
        columns.append(col)
        roles[schema.status] = "status"

    for col in num_pred_cols:
        names.append(col)
        columns.append(numeric_column(col))
        roles[col] = "predictor"
    for col in cat_cols:
        idx = col_index[col]
        values = [rows[i][idx].strip() for i in range(n)]
        for i, v in enumerate(values):
            if v == "":
                raise DataError(f"missing value at row {i + 2}, column '{col}'")
        levels = sorted(set(values))
        cat_levels[col] = levels
        raw_cat[col] = values
        for level in levels:
            names.append(f"{col}={level}")
            columns.append(np.array([1.0 if v == level else 0.0 for v in values]))
            roles[f"{col}={level}"] = "categorical-predictor"

    if not columns:
        raise DataError(f"{path}: schema selected no columns")
    return Dataset(names=names, matrix=np.column_stack(columns), roles=roles,
                   categorical_levels=cat_levels, raw_categorical=raw_cat)


def _validate_outcome(col: np.ndarray, schema: Schema, name: str) -> None:
    if schema.outcome_kind == "ordinal":
        K = schema.K or int(col.max())
        ints = col.astype(np.int64)
        bad = np.flatnonzero((col != ints) | (ints < 1) | (ints > K))
        if bad.size:
            raise DataError(
                f"ordinal outcome must be an integer in 1..{K}; got "
                f"{col[bad[0]]} at row {bad[0] + 2}, column '{name}'")
    elif schema.outcome_kind == "binary":
        bad = np.flatnonzero(~np.isin(col, [0.0, 1.0]))
        if bad.size:
            raise DataError(
                f"binary outcome must be 0/1; got {col[bad[0]]} at row "
                f"{bad[0] + 2}, column '{name}'")


def write_dataset(dataset: Dataset, path) -> None:
    """CSV writer that inverts load_dataset exactly (full float precision;
    categorical predictors restored to their raw levels)."""
    expanded_cat = {name for col in dataset.categorical_levels
                    for name in (f"{col}={lv}" for lv in dataset.categorical_levels[col])}
    out_cols = []
    for name in dataset.names:
        if name in expanded_cat:
            continue
        out_cols.append((name, [repr(float(v)) for v in dataset.column(name)]))
    for col, values in dataset.raw_categorical.items():
        out_cols.append((col, list(values)))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([c for c, _ in out_cols])
        for i in range(dataset.n):
            writer.writerow([vals[i] for _, vals in out_cols])


def dataset_from_arrays(X: np.ndarray, names=None, **special) -> Dataset:
    """In-memory dataset from predictor matrix plus named special columns
    (outcome=..., time=..., status=...)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    names = list(names) if names else [f"x{j + 1}" for j in range(X.shape[1])]
    cols, all_names, roles = [], [], {}
    for role, vec in special.items():
        if vec is None:
            continue
        all_names.append(role)
        cols.append(np.asarray(vec, dtype=float))
        roles[role] = role if role in ("outcome", "time", "status") else "predictor"
    for j, name in enumerate(names):
        all_names.append(name)
        cols.append(X[:, j])
        roles[name] = "predictor"
    return Dataset(names=all_names, matrix=np.column_stack(cols), roles=roles)


def simulate_dunson(n: int = 500, seed: int = 0) -> Dataset:
    """Benchmark mixture: X ~ Uniform(0,1) and
    Y ~ e^{-2x} Normal(x, 0.1^2) + (1 - e^{-2x}) Normal(x^4, 0.2^2)."""
    if n < 1:
        raise DataError("n must be at least 1")
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    w = np.exp(-2.0 * x)
    first = rng.random(n) < w
    y = np.where(first,
                 rng.normal(x, 0.1),
                 rng.normal(x**4, 0.2))
    return Dataset(
        names=["y", "x"],
        matrix=np.column_stack([y, x]),
        roles={"y": "outcome", "x": "predictor"},
    )


def dunson_true_density(x: float, y_grid: np.ndarray) -> np.ndarray:
    """Exact conditional density of the benchmark mixture at covariate x."""
    y_grid = np.asarray(y_grid, dtype=float)
    w = np.exp(-2.0 * x)

    def norm_pdf(y, m, s):
        return np.exp(-0.5 * ((y - m) / s) ** 2) / (np.sqrt(2 * np.pi) * s)

    return w * norm_pdf(y_grid, x, 0.1) + (1.0 - w) * norm_pdf(y_grid, x**4, 0.2)


def dunson_true_mean(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = np.exp(-2.0 * x)
    return w * x + (1.0 - w) * x**4
