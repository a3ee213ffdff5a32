"""Overall loss under user choice, its pieces, and its gradient.

Expectations are empirical means over a finite :class:`Population`. For a
population of ``N`` points the overall loss is::

    f = (1/N) * sum_x sum_i ((1 - zeta) * [x picks i] + zeta / k) * loss(x, theta_i)

which splits into the perfectly rational part ``f_pr`` (everyone takes their
best service) and the no-preference part ``f_np`` (uniform choice).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import NDArray

from .loss import LossModel
from .types import DomainError, ModelBank, Population


@dataclass(frozen=True, eq=False)
class PartitionSummary:
    """Induced partition of a population.

    ``mean_loss[i]`` is NaN when service ``i`` attracts nobody; NaN here
    means "undefined", never zero.
    """

    assignment: NDArray[np.intp]
    proportions: NDArray[np.float64]
    mean_loss: NDArray[np.float64]
    counts: NDArray[np.intp]

    def to_dict(self) -> dict:
        return {
            "proportions": self.proportions.tolist(),
            "counts": self.counts.tolist(),
            "mean_loss": [None if np.isnan(v) else float(v) for v in self.mean_loss],
        }


@dataclass(frozen=True, eq=False)
class ObjectiveReport:
    f: float
    f_pr: float
    f_np: float
    zeta: float
    partition: PartitionSummary
    gradient: NDArray[np.float64] | None = None

    def to_dict(self) -> dict:
        out = {"f": self.f, "f_pr": self.f_pr, "f_np": self.f_np, "zeta": self.zeta}
        out["partition"] = self.partition.to_dict()
        out["gradient"] = None if self.gradient is None else self.gradient.tolist()
        return out


def loss_matrix(bank: ModelBank, pop: Population, loss: LossModel) -> NDArray[np.float64]:
    """``(N, k)`` matrix of every point's loss under every service."""
    return np.stack([loss.population_values(pop, th) for th in bank.params], axis=1)


def _partition_from_losses(L: NDArray[np.float64]) -> PartitionSummary:
    n, k = L.shape
    assignment = np.argmin(L, axis=1)
    counts = np.bincount(assignment, minlength=k)
    own = L[np.arange(n), assignment]
    sums = np.bincount(assignment, weights=own, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_loss = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return PartitionSummary(assignment, counts / n, mean_loss, counts)


def partition(bank: ModelBank, pop: Population, loss: LossModel) -> PartitionSummary:
    return _partition_from_losses(loss_matrix(bank, pop, loss))


def _check_zeta(zeta: float) -> None:
    if not 0.0 <= zeta <= 1.0:
        raise DomainError(f"zeta must lie in [0, 1], got {zeta}")


def evaluate(
    bank: ModelBank,
    pop: Population,
    loss: LossModel,
    zeta: float,
    *,
    with_gradient: bool = False,
) -> ObjectiveReport:
    _check_zeta(zeta)
    L = loss_matrix(bank, pop, loss)
    n, k = L.shape
    part = _partition_from_losses(L)
    f_pr = float(L.min(axis=1).mean())
    f_np = float(L.mean(axis=1).mean())
    # choice weights per point, computed directly rather than via the split
    W = np.full((n, k), zeta / k)
    W[np.arange(n), part.assignment] += 1.0 - zeta
    f = float((W * L).sum(axis=1).mean())
    grad = gradient_f(bank, pop, loss, zeta, assignment=part.assignment) if with_gradient else None
    return ObjectiveReport(f, f_pr, f_np, zeta, part, grad)


def gradient_f(
    bank: ModelBank,
    pop: Population,
    loss: LossModel,
    zeta: float,
    *,
    assignment: NDArray[np.intp] | None = None,
) -> NDArray[np.float64]:
    """Gradient of the overall loss, one row per service.

    Row ``i`` is ``(1 - zeta) / N * sum_{x in X_i} grad + zeta / k * mean_x grad``;
    a service with an empty partition gets only the second term.
    """
    _check_zeta(zeta)
    if assignment is None:
        assignment = partition(bank, pop, loss).assignment
    n, k = len(pop), bank.k
    out = np.empty_like(bank.params)
    for i, th in enumerate(bank.params):
        G = loss.population_gradients(pop, th)
        own = G[assignment == i].sum(axis=0) / n
        out[i] = (1.0 - zeta) * own + (zeta / k) * G.mean(axis=0)
    return out


def stationarity_residual(bank: ModelBank, pop: Population, loss: LossModel, zeta: float) -> float:
    return float(np.linalg.norm(gradient_f(bank, pop, loss, zeta)))


def partition_upper_bound(bank: ModelBank, reference: ModelBank, pop: Population, loss: LossModel) -> float:
    """Rational loss of ``bank`` with the partition frozen at ``reference``."""
    assignment = partition(reference, pop, loss).assignment
    L = loss_matrix(bank, pop, loss)
    return float(L[np.arange(len(pop)), assignment].mean())


def boundary_margin(bank: ModelBank, pop: Population, loss: LossModel) -> float:
    """Smallest gap between the best and second-best loss over the population.

    Zero for a single service is meaningless, so ``inf`` is returned then.
    """
    if bank.k < 2:
        return float("inf")
    L = np.sort(loss_matrix(bank, pop, loss), axis=1)
    return float((L[:, 1] - L[:, 0]).min())


@dataclass(frozen=True)
class ClosedForm1D:
    f_pr: float
    gradient: tuple[float, float]
    hessian: tuple[tuple[float, float], tuple[float, float]]
    swapped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def closed_form_1d(theta1: float, theta2: float) -> ClosedForm1D:
    """Exact rational loss of two scalar services on uniform(0, 1) data.

    Valid while the midpoint of the two parameters lies in ``[0, 1]``. When
    ``theta1 > theta2`` the pair is swapped, the formula applied, and the
    gradient and Hessian permuted back to the caller's order.
    """
    if theta1 == theta2:
        raise DomainError("the two services must differ")
    swapped = theta1 > theta2
    a, b = (theta2, theta1) if swapped else (theta1, theta2)
    f = (a + b) ** 2 * (a - b) / 4.0 + b**2 - b + 1.0 / 3.0
    ga = (a + b) * (3.0 * a - b) / 4.0
    gb = (a + b) * (a - 3.0 * b) / 4.0 + 2.0 * b - 1.0
    haa = (3.0 * a + b) / 2.0
    hab = (a - b) / 2.0
    hbb = -(a + 3.0 * b) / 2.0 + 2.0
    if swapped:
        return ClosedForm1D(f, (gb, ga), ((hbb, hab), (hab, haa)), True)
    return ClosedForm1D(f, (ga, gb), ((haa, hab), (hab, hbb)), False)


def policy_loss(bank: ModelBank, pop: Population, loss: LossModel, policy) -> float:
    """Expected loss when users choose with ``policy`` (bounded or Boltzmann)."""
    if policy.kind == "bounded-rational":
        return evaluate(bank, pop, loss, policy.zeta).f
    L = loss_matrix(bank, pop, loss)
    shifted = L - L.min(axis=1, keepdims=True)
    W = np.exp(-policy.alpha * shifted)
    W /= W.sum(axis=1, keepdims=True)
    return float((W * L).sum(axis=1).mean())
