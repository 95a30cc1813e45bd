"""Functional datasets: grids, response curves, covariates, and wide CSV I/O."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateColumnError, GridError, ParseError, SchemaError

RESPONSE_PREFIX = "y"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Strictly increasing evaluation points of a curve domain."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise GridError(f"grid needs at least 2 points, got {pts.size}")
        if not np.all(np.isfinite(pts)):
            raise GridError("grid contains non-finite values")
        if np.any(np.diff(pts) <= 0):
            raise GridError(f"grid is not strictly increasing: {pts.tolist()[:10]}")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return self.points.size

    @property
    def lower(self) -> float:
        return float(self.points[0])

    @property
    def upper(self) -> float:
        return float(self.points[-1])

    def __eq__(self, other):
        return isinstance(other, Grid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class ScalarCovariate:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ParseError("scalar covariate has missing or non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    def take(self, idx):
        return ScalarCovariate(self.values[idx])


@dataclass(frozen=True)
class CategoricalCovariate:
    levels: tuple
    values: np.ndarray

    def __post_init__(self):
        levels = tuple(str(x) for x in self.levels)
        if len(set(levels)) != len(levels):
            raise SchemaError(f"duplicate levels {levels}")
        vals = np.array([str(v) for v in np.asarray(self.values).ravel()], dtype=object)
        unknown = sorted(set(vals.tolist()) - set(levels))
        if unknown:
            raise SchemaError(f"unknown level(s) {unknown}; allowed {list(levels)}")
        vals.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", vals)

    def codes(self) -> np.ndarray:
        lookup = {lev: k for k, lev in enumerate(self.levels)}
        return np.array([lookup[v] for v in self.values], dtype=int)

    def take(self, idx):
        return CategoricalCovariate(self.levels, self.values[idx])


@dataclass(frozen=True)
class FunctionalCovariate:
    values: np.ndarray
    grid: Grid
    standardized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ParseError("functional covariate must be a matrix")
        if v.shape[1] != len(self.grid):
            raise ParseError(
                f"functional covariate has {v.shape[1]} columns but grid has {len(self.grid)}"
            )
        if not np.all(np.isfinite(v)):
            raise ParseError("functional covariate has missing or non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    def take(self, idx):
        return FunctionalCovariate(self.values[idx], self.grid, self.standardized)


Covariate = ScalarCovariate | CategoricalCovariate | FunctionalCovariate


@dataclass(frozen=True)
class FunctionalDataset:
    """N response curves on a common grid plus named covariates."""

    response: np.ndarray
    grid: Grid
    covariates: Mapping[str, Covariate] = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.response, dtype=float)
        if y.ndim != 2:
            raise ParseError("response must be an N x G matrix")
        if y.shape[1] != len(self.grid):
            raise ParseError(f"response has {y.shape[1]} columns, grid has {len(self.grid)}")
        if y.shape[0] < 1:
            raise ParseError("dataset has no curves")
        if not np.all(np.isfinite(y)):
            raise ParseError("response has missing or non-finite cells")
        if self.grid.lower < 0:
            raise GridError("response grid must lie in [0, t_max]")
        n = y.shape[0]
        covs = dict(self.covariates)
        for name, cov in covs.items():
            if len(cov.values) != n:
                raise ParseError(f"covariate {name!r} has {len(cov.values)} rows, expected {n}")
        object.__setattr__(self, "response", _frozen(y))
        object.__setattr__(self, "covariates", covs)

    @property
    def n_curves(self) -> int:
        return self.response.shape[0]

    @property
    def n_points(self) -> int:
        return self.response.shape[1]

    def take(self, idx) -> "FunctionalDataset":
        idx = np.asarray(idx, dtype=int)
        return FunctionalDataset(
            self.response[idx], self.grid, {k: c.take(idx) for k, c in self.covariates.items()}
        )

    def with_covariates(self, **extra) -> "FunctionalDataset":
        covs = dict(self.covariates)
        covs.update(extra)
        return FunctionalDataset(self.response, self.grid, covs)

    def with_response(self, response) -> "FunctionalDataset":
        return FunctionalDataset(response, self.grid, self.covariates)


@dataclass
class DatasetSchema:
    """Column roles for wide CSV files.

    Columns named ``<response>@<t>`` form the response block and ``<name>@<s>``
    a functional covariate. Plain columns are scalar unless listed in
    ``categorical`` (optionally with their level set).
    """

    response: str = RESPONSE_PREFIX
    categorical: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "DatasetSchema":
        if not d:
            return cls()
        cats = d.get("categorical", {}) or {}
        if isinstance(cats, (list, tuple)):
            cats = {c: None for c in cats}
        return cls(response=d.get("response", RESPONSE_PREFIX),
                   categorical={k: (None if v is None else [str(x) for x in v]) for k, v in cats.items()})

    def to_dict(self) -> dict:
        return {"response": self.response, "categorical": dict(self.categorical)}


def _read_rows(table) -> list[list[str]]:
    if isinstance(table, (str, os.PathLike)) and os.path.exists(table):
        with open(table, newline="", encoding="utf-8") as fh:
            return list(csv.reader(fh))
    if isinstance(table, str):
        return list(csv.reader(io.StringIO(table)))
    if hasattr(table, "read"):
        return list(csv.reader(table))
    return [list(map(str, r)) for r in table]


def _parse_float(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as a number ({where})") from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {text!r} ({where})")
    return v


def ingest_dataset(table, schema: DatasetSchema | Mapping | None = None) -> FunctionalDataset:
    """Read a wide-format table (path, CSV text, file object or row list)."""
    if not isinstance(schema, DatasetSchema):
        schema = DatasetSchema.from_dict(schema)
    rows = _read_rows(table)
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError("empty table")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise ParseError("table has a header but no rows")
    for k, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ParseError(f"row {k} has {len(r)} fields, header has {len(header)}")
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names")

    blocks: dict[str, list[tuple[float, int]]] = {}
    plain: list[tuple[str, int]] = []
    for j, name in enumerate(header):
        if "@" in name:
            base, _, at = name.partition("@")
            blocks.setdefault(base, []).append((_parse_float(at, f"header {name!r}"), j))
        else:
            plain.append((name, j))
    if schema.response not in blocks:
        raise SchemaError(f"no response columns named '{schema.response}@<t>'")

    def block_matrix(base):
        entries = blocks[base]
        grid = Grid(np.array([t for t, _ in entries]))
        cols = [j for _, j in entries]
        mat = np.empty((len(body), len(cols)))
        for i, r in enumerate(body):
            for c, j in enumerate(cols):
                mat[i, c] = _parse_float(r[j], f"row {i + 2}, column {header[j]!r}")
        return mat, grid

    y, grid = block_matrix(schema.response)
    covs: dict[str, Covariate] = {}
    for base in blocks:
        if base == schema.response:
            continue
        mat, g = block_matrix(base)
        covs[base] = FunctionalCovariate(mat, g)
    for name, j in plain:
        col = [r[j].strip() for r in body]
        if name in schema.categorical:
            levels = schema.categorical[name]
            if levels is None:
                levels = sorted(set(col))
            covs[name] = CategoricalCovariate(tuple(levels), np.array(col, dtype=object))
        else:
            covs[name] = ScalarCovariate(
                np.array([_parse_float(v, f"column {name!r}") for v in col])
            )
    return FunctionalDataset(y, grid, covs)


def _fmt(x: float) -> str:
    return repr(float(x))


def dataset_rows(ds: FunctionalDataset, response_name: str = RESPONSE_PREFIX) -> list[list[str]]:
    header = [f"{response_name}@{_fmt(t)}" for t in ds.grid.points]
    columns: list[np.ndarray | list] = [ds.response[:, g] for g in range(ds.n_points)]
    for name, cov in ds.covariates.items():
        if isinstance(cov, FunctionalCovariate):
            header += [f"{name}@{_fmt(s)}" for s in cov.grid.points]
            columns += [cov.values[:, k] for k in range(cov.values.shape[1])]
    for name, cov in ds.covariates.items():
        if isinstance(cov, ScalarCovariate):
            header.append(name)
            columns.append(cov.values)
        elif isinstance(cov, CategoricalCovariate):
            header.append(name)
            columns.append(list(cov.values))
    rows = [header]
    for i in range(ds.n_curves):
        rows.append([c[i] if isinstance(c[i], str) else _fmt(c[i]) for c in columns])
    return rows


def write_dataset(ds: FunctionalDataset, path, response_name: str = RESPONSE_PREFIX) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(dataset_rows(ds, response_name))


def schema_for(ds: FunctionalDataset) -> DatasetSchema:
    cats = {n: list(c.levels) for n, c in ds.covariates.items()
            if isinstance(c, CategoricalCovariate)}
    return DatasetSchema(categorical=cats)


def functional_moments(cov: FunctionalCovariate) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and sample standard deviation (denominator N-1)."""
    x = cov.values
    if x.shape[0] < 2:
        raise DegenerateColumnError("standardizing needs at least 2 curves")
    return x.mean(axis=0), x.std(axis=0, ddof=1)


def standardize_functional(cov: FunctionalCovariate, mean=None, sd=None) -> FunctionalCovariate:
    """Center and scale a functional covariate pointwise.

    Without ``mean``/``sd`` the moments are estimated from ``cov`` itself;
    prediction passes the training moments instead.
    """
    if mean is None or sd is None:
        mean, sd = functional_moments(cov)
    sd = np.asarray(sd, dtype=float)
    if np.any(~(sd > 0)):
        bad = cov.grid.points[~(sd > 0)]
        raise DegenerateColumnError(f"zero pointwise variance at s = {bad[:5].tolist()}")
    return FunctionalCovariate((cov.values - mean) / sd, cov.grid, standardized=True)


def numeric_derivative(cov: FunctionalCovariate) -> FunctionalCovariate:
    """Forward differences on the left-endpoint grid; the last point is dropped."""
    pts = cov.grid.points
    # the output grid must itself hold at least two points
    if pts.size < 3:
        raise GridError(f"derivative needs a grid of length >= 3, got {pts.size}")
    d = np.diff(cov.values, axis=1) / np.diff(pts)
    return FunctionalCovariate(d, Grid(pts[:-1]))
