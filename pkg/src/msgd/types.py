"""Shared domain types and the randomness contract.

Parameters for every service live in one ``(k, p)`` array; the attached
``shape`` tells a loss how to view a single flat row (``(d, d_r)`` for the
masked regression task, ``(d, 1)`` otherwise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.typing import NDArray

TaskKind = Literal["regression-masked", "binary-classification", "scalar-1d"]
TASK_KINDS: tuple[str, ...] = ("regression-masked", "binary-classification", "scalar-1d")


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


def _frozen(a: NDArray) -> NDArray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DataPoint:
    """One user's payload.

    ``mask`` holds the (0-based) indices of observed ratings and is only set
    for the masked regression task.
    """

    features: NDArray[np.float64]
    label: float | None = None
    ratings: NDArray[np.float64] | None = None
    mask: NDArray[np.intp] | None = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "features", feats)
        if self.ratings is not None:
            object.__setattr__(self, "ratings", np.asarray(self.ratings, dtype=np.float64).reshape(-1))
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=np.intp).reshape(-1)
            if mask.size == 0:
                raise DomainError("mask must be nonempty")
            if self.ratings is not None and (mask.min() < 0 or mask.max() >= self.ratings.size):
                raise DomainError(f"mask index out of range for {self.ratings.size} ratings")
            object.__setattr__(self, "mask", mask)


@dataclass(frozen=True, eq=False)
class ModelBank:
    """The tuple of ``k`` service models stored as a read-only ``(k, p)`` array."""

    params: NDArray[np.float64]
    shape: tuple[int, int]

    def __post_init__(self) -> None:
        params = np.array(self.params, dtype=np.float64, ndmin=2, copy=True)
        if params.ndim != 2 or params.shape[0] < 1:
            raise DomainError("params must be a nonempty (k, p) array")
        rows, cols = self.shape
        if rows * cols != params.shape[1]:
            raise DomainError(f"shape {self.shape} does not match parameter dimension {params.shape[1]}")
        object.__setattr__(self, "params", _frozen(params))
        object.__setattr__(self, "shape", (int(rows), int(cols)))

    @classmethod
    def from_vectors(cls, vectors: Sequence[Sequence[float]] | NDArray, shape: tuple[int, int] | None = None) -> "ModelBank":
        arr = np.array(vectors, dtype=np.float64, ndmin=2)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim > 2:
            arr = arr.reshape(arr.shape[0], -1)
        if shape is None:
            shape = (arr.shape[1], 1)
        return cls(arr, shape)

    @property
    def k(self) -> int:
        return self.params.shape[0]

    @property
    def p(self) -> int:
        return self.params.shape[1]

    def theta(self, i: int) -> NDArray[np.float64]:
        return self.params[i]

    def replace_rows(self, updates: dict[int, NDArray[np.float64]]) -> "ModelBank":
        """Return a new bank with the given rows swapped in; other rows are copied bitwise."""
        new = self.params.copy()
        for i, row in updates.items():
            new[i] = row
        return ModelBank(new, self.shape)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.params).all())


def validate_bank(bank: ModelBank) -> list[str]:
    """Warn about every pair of services with exactly identical parameters."""
    warnings: list[str] = []
    for i in range(bank.k):
        for j in range(i + 1, bank.k):
            if np.array_equal(bank.params[i], bank.params[j]):
                warnings.append(f"services {i} and {j} have identical parameters")
    return warnings


@dataclass(frozen=True, eq=False)
class Population:
    """A finite, homogeneous set of users stored column-wise.

    ``labels`` is set for binary classification; ``ratings``/``mask`` (a
    boolean ``(N, d_r)`` matrix) for masked regression. ``radius`` is the
    largest feature norm, kept for diagnostics.
    """

    features: NDArray[np.float64]
    kind: TaskKind
    labels: NDArray[np.float64] | None = None
    ratings: NDArray[np.float64] | None = None
    mask: NDArray[np.bool_] | None = None
    radius: float = field(init=False)

    def __post_init__(self) -> None:
        feats = np.array(self.features, dtype=np.float64, copy=True)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise DomainError("population must be nonempty")
        if self.kind not in TASK_KINDS:
            raise DomainError(f"unknown task kind {self.kind!r}")
        n = feats.shape[0]
        object.__setattr__(self, "features", _frozen(feats))
        if self.kind == "binary-classification":
            if self.labels is None:
                raise DomainError("classification population needs labels")
            labels = np.array(self.labels, dtype=np.float64).reshape(-1)
            if labels.shape[0] != n or not np.isin(labels, (0.0, 1.0)).all():
                raise DomainError("labels must be one 0/1 value per point")
            object.__setattr__(self, "labels", _frozen(labels))
        if self.kind == "regression-masked":
            if self.ratings is None or self.mask is None:
                raise DomainError("masked regression population needs ratings and mask")
            ratings = np.array(self.ratings, dtype=np.float64, ndmin=2)
            mask = np.array(self.mask, dtype=bool, ndmin=2)
            if ratings.shape != mask.shape or ratings.shape[0] != n:
                raise DomainError("ratings and mask must both be (N, d_r)")
            if not mask.any(axis=1).all():
                raise DomainError("every point needs at least one observed rating")
            ratings = np.where(mask, ratings, 0.0)
            object.__setattr__(self, "ratings", _frozen(ratings))
            object.__setattr__(self, "mask", _frozen(mask))
        if self.kind == "scalar-1d" and feats.shape[1] != 1:
            raise DomainError("scalar-1d population must have one feature")
        object.__setattr__(self, "radius", float(np.sqrt((feats**2).sum(axis=1)).max()))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_ratings(self) -> int:
        return 0 if self.ratings is None else self.ratings.shape[1]

    def point(self, i: int) -> DataPoint:
        if self.kind == "binary-classification":
            return DataPoint(self.features[i], label=float(self.labels[i]))
        if self.kind == "regression-masked":
            return DataPoint(self.features[i], ratings=self.ratings[i], mask=np.flatnonzero(self.mask[i]))
        return DataPoint(self.features[i])

    def subset(self, idx: NDArray[np.intp]) -> "Population":
        idx = np.asarray(idx, dtype=np.intp)
        return Population(
            self.features[idx],
            self.kind,
            labels=None if self.labels is None else self.labels[idx],
            ratings=None if self.ratings is None else self.ratings[idx],
            mask=None if self.mask is None else self.mask[idx],
        )

    @classmethod
    def from_points(cls, points: Sequence[DataPoint], kind: TaskKind, n_ratings: int | None = None) -> "Population":
        if not points:
            raise DomainError("population must be nonempty")
        feats = np.stack([p.features for p in points])
        if kind == "binary-classification":
            return cls(feats, kind, labels=np.array([p.label for p in points], dtype=np.float64))
        if kind == "regression-masked":
            d_r = n_ratings if n_ratings is not None else points[0].ratings.size
            ratings = np.zeros((len(points), d_r))
            mask = np.zeros((len(points), d_r), dtype=bool)
            for row, p in enumerate(points):
                mask[row, p.mask] = True
                ratings[row, p.mask] = p.ratings[p.mask]
            return cls(feats, kind, ratings=ratings, mask=mask)
        return cls(feats, kind)


ScheduleKind = Literal["inverse-t", "constant", "custom"]


@dataclass(frozen=True)
class StepSchedule:
    kind: ScheduleKind = "inverse-t"
    eta_c: float = 1.0
    table: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("inverse-t", "constant", "custom"):
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "custom":
            if not self.table or min(self.table) <= 0:
                raise DomainError("custom schedule needs a nonempty table of positive step sizes")
        elif not self.eta_c > 0:
            raise DomainError("eta_c must be positive")

    @property
    def square_summable(self) -> bool | None:
        """Whether the squared steps have a finite sum; ``None`` when a finite table cannot say."""
        if self.kind == "inverse-t":
            return True
        if self.kind == "constant":
            return False
        return None


def step_size(schedule: StepSchedule, t: int) -> float:
    if t < 1:
        raise DomainError(f"step index must be >= 1, got {t}")
    if schedule.kind == "inverse-t":
        return schedule.eta_c / t
    if schedule.kind == "constant":
        return schedule.eta_c
    if t > len(schedule.table):
        raise DomainError(f"custom schedule has {len(schedule.table)} entries, step {t} requested")
    return schedule.table[t - 1]


def inverse_t_square_sum(eta_c: float, T: int) -> float:
    """Partial sum of the squared inverse-t steps, summed smallest-first."""
    return math.fsum((eta_c / t) ** 2 for t in range(T, 0, -1))


@dataclass(frozen=True)
class RandomSource:
    """Deterministic stream keyed by ``(seed, stream)``.

    Distinct stream ids spawn independent children of one ``SeedSequence``.
    """

    seed: int
    stream: int = 0

    def _sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=(self.stream,))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._sequence()))

    def spawn(self, n: int) -> list[np.random.Generator]:
        """``n`` independent generators derived from this stream."""
        return [np.random.Generator(np.random.PCG64(s)) for s in self._sequence().spawn(n)]
