"""Evaluation series: displacement, accuracies and run comparison."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, fields
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .loss import LossModel
from .objective import partition
from .types import DomainError, ModelBank, Population


@dataclass(frozen=True)
class TrajectoryRecord:
    """Metrics for one evaluation step.

    ``f_policy`` is the expected test loss under the run's actual choice
    model; it equals ``f`` for bounded-rational users. Accuracies are
    ``None`` for tasks that are not binary classification;
    ``subpop_acc_unweighted`` is the plain mean over services of their
    accuracy on their own partition.
    """

    t: int
    f: float
    f_pr: float
    f_np: float
    f_policy: float
    residual: float
    displacement: float
    proportions: tuple[float, ...]
    selection_counts: tuple[int, ...]
    subpop_acc: float | None = None
    wholepop_acc: float | None = None
    subpop_acc_unweighted: float | None = None

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def to_row(self) -> dict:
        """Flat mapping for CSV output; vector fields are split per service."""
        row = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "proportions":
                row.update({f"a_{i}": x for i, x in enumerate(v)})
            elif f.name == "selection_counts":
                row.update({f"n_{i}": x for i, x in enumerate(v)})
            else:
                row[f.name] = v
        return row

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrajectoryRecord":
        d = dict(d)
        d["proportions"] = tuple(d["proportions"])
        d["selection_counts"] = tuple(d["selection_counts"])
        return cls(**d)


def displacement_series(
    source: Sequence[ModelBank] | Iterable,
    *,
    from_events: bool | None = None,
    norm: Literal["tuple", "per-model"] = "tuple",
    normalize_by_k: bool = False,
    k: int | None = None,
) -> np.ndarray:
    """Cumulative parameter movement.

    ``source`` is either consecutive :class:`ModelBank` snapshots (one per
    step, the first being the initial state) or an event log whose entries
    carry ``t``, ``chosen`` and ``step_norm``. With ``norm="tuple"`` each
    step contributes the Euclidean norm of the change of the whole
    parameter tuple; with ``"per-model"`` it contributes the sum of the
    per-service change norms. ``normalize_by_k`` divides by the number of
    services (``k``, required for event logs), which puts full-information
    runs on the same footing as runs where only one service moves per step.

    Returns the running sum; for snapshots the first entry is 0.
    """
    source = list(source)
    if not source:
        return np.zeros(0)
    if from_events is None:
        from_events = not isinstance(source[0], ModelBank)
    if from_events:
        steps: dict[int, list[float]] = {}
        for e in source:
            steps.setdefault(e.t, []).append(e.step_norm)
        incs = []
        for t in sorted(steps):
            s = np.asarray(steps[t])
            incs.append(float(np.sqrt((s**2).sum())) if norm == "tuple" else float(s.sum()))
        out = np.cumsum(incs)
        if normalize_by_k and k is None:
            raise DomainError("normalizing an event log needs the number of services")
    else:
        k = source[0].k if k is None else k
        incs = [0.0]
        for a, b in zip(source, source[1:]):
            diff = b.params - a.params
            if norm == "tuple":
                incs.append(float(np.linalg.norm(diff)))
            else:
                incs.append(float(np.linalg.norm(diff, axis=1).sum()))
        out = np.cumsum(incs)
    return out / k if normalize_by_k else out


def per_model_accuracy(bank: ModelBank, test: Population, loss: LossModel) -> np.ndarray:
    if test.kind != "binary-classification":
        raise DomainError(f"accuracy is undefined for a {test.kind} population")
    return np.array([(loss.predict(test, th) == test.labels).mean() for th in bank.params])


def accuracies(bank: ModelBank, test: Population, loss: LossModel) -> tuple[float, float]:
    """Accuracy seen by rational users and the plain average over services.

    The first number scores every test user with the service they would
    pick (lowest loss), which is the proportion-weighted mean of each
    service's accuracy on its own partition. The second is the unweighted
    mean over services of their accuracy on the entire test set.
    """
    if test.kind != "binary-classification":
        raise DomainError(f"accuracy is undefined for a {test.kind} population")
    assignment = partition(bank, test, loss).assignment
    preds = np.stack([loss.predict(test, th) for th in bank.params], axis=1)
    correct = preds == test.labels[:, None]
    subpop = float(correct[np.arange(len(test)), assignment].mean())
    wholepop = float(correct.mean(axis=0).mean())
    return subpop, wholepop


def subpop_accuracy_unweighted(bank: ModelBank, test: Population, loss: LossModel) -> float:
    """Mean over services with a nonempty partition of their accuracy on it."""
    if test.kind != "binary-classification":
        raise DomainError(f"accuracy is undefined for a {test.kind} population")
    assignment = partition(bank, test, loss).assignment
    accs = []
    for i, th in enumerate(bank.params):
        own = assignment == i
        if own.any():
            accs.append(float((loss.predict(test, th)[own] == test.labels[own]).mean()))
    return float(np.mean(accs))


# --- comparison ------------------------------------------------------------

_NUMERIC = ("f", "f_pr", "f_np", "f_policy", "residual", "displacement", "subpop_acc", "wholepop_acc", "subpop_acc_unweighted")


@dataclass
class ComparisonTable:
    rows: list[dict]
    deltas: list[dict]
    resampled: bool = False

    def to_dict(self) -> dict:
        return {"rows": self.rows, "deltas": self.deltas, "resampled": self.resampled}

    def row(self, label: str) -> dict:
        for r in self.rows:
            if r["label"] == label:
                return r
        raise KeyError(label)


def _series(traj: Sequence[TrajectoryRecord], name: str) -> np.ndarray:
    vals = [getattr(r, name) for r in traj]
    return np.array([np.nan if v is None else v for v in vals], dtype=np.float64)


def _median(vals: list[float]) -> float | None:
    arr = np.asarray(vals, dtype=np.float64)
    if arr.size == 0 or np.isnan(arr).all():
        return None
    return float(np.nanmedian(arr))


def compare(runs: Mapping[str, Sequence[Sequence[TrajectoryRecord]]] | Sequence[Sequence[TrajectoryRecord]]) -> ComparisonTable:
    """Summarise trajectories, taking medians over seeds within each label.

    ``runs`` maps a label to one trajectory per seed; a plain list is read
    as one seed per label ``run0``, ``run1``, ... When the evaluation grids
    differ, every trajectory is interpolated onto the coarsest grid over
    the common time range and a warning is issued.
    """
    if not isinstance(runs, Mapping):
        runs = {f"run{i}": [traj] for i, traj in enumerate(runs)}
    if not runs or any(not group for group in runs.values()):
        raise DomainError("need at least one trajectory per label")
    trajs = [traj for group in runs.values() for traj in group]
    grids = [np.array([r.t for r in traj], dtype=np.float64) for traj in trajs]
    aligned = all(len(g) == len(grids[0]) and np.array_equal(g, grids[0]) for g in grids)
    if aligned:
        grid = grids[0]
    else:
        warnings.warn("trajectories have different evaluation grids; resampling to a common grid", stacklevel=2)
        t_end = min(g[-1] for g in grids)
        coarsest = min(grids, key=len)
        grid = coarsest[coarsest <= t_end]
        if grid.size == 0 or grid[-1] != t_end:
            grid = np.append(grid, t_end)

    def on_grid(traj, name):
        s = _series(traj, name)
        if aligned:
            return s
        return np.interp(grid, [r.t for r in traj], s)

    rows = []
    for label, group in runs.items():
        row: dict = {"label": label, "n_seeds": len(group), "t_final": int(grid[-1])}
        for name in _NUMERIC:
            finals = [on_grid(traj, name)[-1] for traj in group]
            row[f"final_{name}"] = _median(finals)
        row["median_f"] = _median([float(np.median(on_grid(traj, "f"))) for traj in group])
        rows.append(row)
    deltas = []
    for a, b in itertools.combinations(rows, 2):
        d = {"a": a["label"], "b": b["label"]}
        for name in ("f", "f_pr", "f_np", "displacement", "subpop_acc", "wholepop_acc"):
            va, vb = a[f"final_{name}"], b[f"final_{name}"]
            d[f"delta_{name}"] = None if va is None or vb is None else va - vb
        deltas.append(d)
    return ComparisonTable(rows, deltas, resampled=not aligned)
