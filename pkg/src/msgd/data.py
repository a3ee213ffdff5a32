"""Population construction: synthetic generators and CSV ingestion.

CSV files are UTF-8 with a header row. Columns are picked by name:

* classification: ``feature_columns`` plus a 0/1 ``label_column``;
* masked regression: ``feature_columns`` (user embeddings) plus
  ``rating_columns``; a cell equal to ``sentinel`` (empty by default) is
  unrated.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .types import DomainError, Population

log = logging.getLogger(__name__)

Source = Literal[
    "synthetic-uniform-1d",
    "synthetic-gaussian-mixture",
    "synthetic-clusters",
    "csv-classification",
    "csv-masked-regression",
]
SOURCES: tuple[str, ...] = (
    "synthetic-uniform-1d",
    "synthetic-gaussian-mixture",
    "synthetic-clusters",
    "csv-classification",
    "csv-masked-regression",
)
VARIANCE_FLOOR = 1e-12


class DataError(ValueError):
    """Malformed or missing input data."""


@dataclass(frozen=True)
class DatasetSpec:
    """How to build a train/test population pair.

    ``split`` is the test fraction. ``standardize=None`` standardizes
    classification data only. ``add_bias`` appends a constant feature after
    standardization (classification only).

    ``synthetic-clusters`` draws ``n_clusters`` Gaussian blobs in ``dim``
    dimensions whose labels follow a different random linear rule in each
    blob, so no single linear classifier fits everyone.
    """

    source: Source = "synthetic-uniform-1d"
    n: int = 1000
    means: tuple[float, ...] = (0.25, 0.75)
    stddevs: tuple[float, ...] = (0.05,)
    weights: tuple[float, ...] | None = None
    dim: int = 2
    n_clusters: int = 4
    cluster_spread: float = 4.0
    label_noise: float = 0.0
    rule_spread: float = 1.0
    center_offset: float = 1.0
    path: str | None = None
    feature_columns: tuple[str, ...] | None = None
    label_column: str = "y"
    rating_columns: tuple[str, ...] | None = None
    sentinel: str = ""
    split: float = 0.2
    standardize: bool | None = None
    add_bias: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise DomainError(f"unknown data source {self.source!r}")
        if not 0.0 < self.split < 1.0:
            raise DomainError("split must lie in (0, 1)")
        if self.source.startswith("synthetic") and self.n < 2:
            raise DomainError("need at least 2 samples")
        if self.source.startswith("csv") and not self.path:
            raise DomainError(f"{self.source} needs a path")


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    floored: tuple[int, ...] = field(default=())

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        var = X.var(axis=0)
        floored = tuple(int(j) for j in np.flatnonzero(var < VARIANCE_FLOOR))
        scale = np.where(var < VARIANCE_FLOOR, 1.0, np.sqrt(var))
        return cls(mean, scale, floored)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


def _replace_features(pop: Population, X: np.ndarray) -> Population:
    return Population(X, pop.kind, labels=pop.labels, ratings=pop.ratings, mask=pop.mask)


# --- synthetic -----------------------------------------------------------


def _uniform_1d(spec: DatasetSpec, rng: np.random.Generator) -> Population:
    return Population(rng.random(spec.n), "scalar-1d")


def _gaussian_mixture(spec: DatasetSpec, rng: np.random.Generator) -> Population:
    means = np.asarray(spec.means, dtype=np.float64)
    m = means.size
    sds = np.broadcast_to(np.asarray(spec.stddevs, dtype=np.float64), (m,))
    w = np.full(m, 1.0 / m) if spec.weights is None else np.asarray(spec.weights, dtype=np.float64)
    if w.size != m or (w < 0).any() or not np.isclose(w.sum(), 1.0):
        raise DomainError("mixture weights must be a probability vector, one per mean")
    comp = rng.choice(m, size=spec.n, p=w)
    return Population(means[comp] + sds[comp] * rng.standard_normal(spec.n), "scalar-1d")


def _clusters(spec: DatasetSpec, rng: np.random.Generator) -> Population:
    d, c = spec.dim, spec.n_clusters
    centers = rng.standard_normal((c, d)) * spec.cluster_spread
    shared = rng.standard_normal(d)
    shared /= np.linalg.norm(shared)
    rules = shared + spec.rule_spread * rng.standard_normal((c, d)) / np.sqrt(d)
    rules /= np.linalg.norm(rules, axis=1, keepdims=True)
    comp = rng.integers(c, size=spec.n)
    Z = centers[comp] + rng.standard_normal((spec.n, d))
    score = ((Z - centers[comp] * spec.center_offset) * rules[comp]).sum(axis=1)
    y = (score > 0).astype(np.float64)
    flip = rng.random(spec.n) < spec.label_noise
    y[flip] = 1.0 - y[flip]
    return Population(Z, "binary-classification", labels=y)


# --- CSV -----------------------------------------------------------------


def _read_rows(path: str | Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}, line {reader.line_num}: expected {len(header)} fields, got {len(row)}")
            rows.append((reader.line_num, row))
    return header, rows


def _columns(header: list[str], names: Sequence[str], path) -> list[int]:
    missing = [n for n in names if n not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return [header.index(n) for n in names]


def _float(cell: str, path, line: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{path}, line {line}, column {col!r}: cannot parse {cell!r} as a number") from None
    if not np.isfinite(v):
        raise DataError(f"{path}, line {line}, column {col!r}: non-finite value {cell!r}")
    return v


def ingest_classification(path: str | Path, spec: DatasetSpec | None = None) -> Population:
    spec = spec or DatasetSpec("csv-classification", path=str(path))
    header, rows = _read_rows(path)
    label_col = spec.label_column
    feats = list(spec.feature_columns) if spec.feature_columns else [h for h in header if h != label_col]
    fi = _columns(header, feats, path)
    (li,) = _columns(header, [label_col], path)
    if not rows:
        raise DataError(f"{path}: no data rows")
    X = np.empty((len(rows), len(fi)))
    y = np.empty(len(rows))
    for r, (line, row) in enumerate(rows):
        X[r] = [_float(row[j], path, line, header[j]) for j in fi]
        y[r] = _float(row[li], path, line, label_col)
        if y[r] not in (0.0, 1.0):
            raise DataError(f"{path}, line {line}: label must be 0 or 1, got {row[li]!r}")
    return Population(X, "binary-classification", labels=y)


def ingest_masked(path: str | Path, spec: DatasetSpec | None = None) -> tuple[Population, int]:
    """Read a masked-ratings CSV; returns the population and how many rows had no ratings."""
    spec = spec or DatasetSpec("csv-masked-regression", path=str(path))
    header, rows = _read_rows(path)
    if spec.feature_columns is None:
        raise DataError("masked regression needs explicit feature_columns")
    feats = list(spec.feature_columns)
    ratings = list(spec.rating_columns) if spec.rating_columns else [h for h in header if h not in feats]
    fi = _columns(header, feats, path)
    ri = _columns(header, ratings, path)
    X, R, M = [], [], []
    dropped = 0
    for line, row in rows:
        mask = [row[j].strip() != spec.sentinel for j in ri]
        if not any(mask):
            dropped += 1
            continue
        X.append([_float(row[j], path, line, header[j]) for j in fi])
        R.append([_float(row[j], path, line, header[j]) if m else 0.0 for j, m in zip(ri, mask)])
        M.append(mask)
    if dropped:
        log.warning("%s: dropped %d rows without any rating", path, dropped)
    if not X:
        raise DomainError(f"{path}: every row has an empty rating mask")
    pop = Population(np.array(X), "regression-masked", ratings=np.array(R), mask=np.array(M, dtype=bool))
    return pop, dropped


def write_csv(pop: Population, path: str | Path, sentinel: str = "") -> None:
    """Write a population in the ingestion schema; floats use round-trip ``repr``."""
    d = pop.dim
    fcols = [f"x{j}" for j in range(d)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if pop.kind == "binary-classification":
            w.writerow(fcols + ["y"])
            for x, y in zip(pop.features, pop.labels):
                w.writerow([repr(float(v)) for v in x] + [str(int(y))])
        elif pop.kind == "regression-masked":
            w.writerow(fcols + [f"r{j}" for j in range(pop.n_ratings)])
            for x, r, m in zip(pop.features, pop.ratings, pop.mask):
                w.writerow([repr(float(v)) for v in x] + [repr(float(v)) if o else sentinel for v, o in zip(r, m)])
        else:
            w.writerow(fcols)
            for x in pop.features:
                w.writerow([repr(float(v)) for v in x])


def read_csv(path: str | Path, kind: str, sentinel: str = "") -> Population:
    """Read back a file produced by :func:`write_csv`."""
    header, _ = _read_rows(path)
    fcols = tuple(h for h in header if h.startswith("x"))
    if kind == "binary-classification":
        return ingest_classification(path, DatasetSpec("csv-classification", path=str(path), feature_columns=fcols))
    if kind == "regression-masked":
        spec = DatasetSpec("csv-masked-regression", path=str(path), feature_columns=fcols, sentinel=sentinel)
        return ingest_masked(path, spec)[0]
    _, rows = _read_rows(path)
    return Population(np.array([[_float(c, path, line, "x0") for c in row] for line, row in rows]), "scalar-1d")


# --- entry point ---------------------------------------------------------


def split_population(pop: Population, test_fraction: float, rng: np.random.Generator) -> tuple[Population, Population]:
    n = len(pop)
    n_test = int(round(test_fraction * n))
    if not 0 < n_test < n:
        raise DomainError(f"split {test_fraction} leaves an empty side for {n} points")
    perm = rng.permutation(n)
    return pop.subset(perm[n_test:]), pop.subset(perm[:n_test])


def generate(spec: DatasetSpec, rng: np.random.Generator | None = None) -> tuple[Population, Population]:
    """Build ``(train, test)``; deterministic given ``spec.seed`` when ``rng`` is omitted.

    Standardization statistics come from the training side only.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.source == "synthetic-uniform-1d":
        pop = _uniform_1d(spec, rng)
    elif spec.source == "synthetic-gaussian-mixture":
        pop = _gaussian_mixture(spec, rng)
    elif spec.source == "synthetic-clusters":
        pop = _clusters(spec, rng)
    elif spec.source == "csv-classification":
        pop = ingest_classification(spec.path, spec)
    else:
        pop = ingest_masked(spec.path, spec)[0]
    train, test = split_population(pop, spec.split, rng)
    standardize = spec.standardize if spec.standardize is not None else pop.kind == "binary-classification"
    if standardize:
        st = Standardizer.fit(train.features)
        if st.floored:
            log.info("constant feature columns %s left unscaled", list(st.floored))
        train = _replace_features(train, st.apply(train.features))
        test = _replace_features(test, st.apply(test.features))
    if spec.add_bias:
        if pop.kind != "binary-classification":
            raise DomainError("add_bias only applies to classification data")
        train = _replace_features(train, np.hstack([train.features, np.ones((len(train), 1))]))
        test = _replace_features(test, np.hstack([test.features, np.ones((len(test), 1))]))
    return train, test
