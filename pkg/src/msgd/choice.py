"""User-side service selection.

Two behaviour models are supported. A bounded-rational user takes the service
with the lowest loss with probability ``1 - zeta`` and a uniformly random one
otherwise (the random branch may land on the best service too). A Boltzmann
user samples service ``i`` with weight ``exp(-alpha * loss_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .loss import LossModel
from .types import DataPoint, DomainError, ModelBank


@dataclass(frozen=True)
class ChoicePolicy:
    kind: Literal["bounded-rational", "boltzmann"] = "bounded-rational"
    zeta: float = 0.0
    alpha: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("bounded-rational", "boltzmann"):
            raise DomainError(f"unknown policy kind {self.kind!r}")
        if not 0.0 <= self.zeta <= 1.0:
            raise DomainError(f"zeta must lie in [0, 1], got {self.zeta}")
        if not self.alpha >= 0.0:
            raise DomainError(f"alpha must be nonnegative, got {self.alpha}")

    @classmethod
    def bounded(cls, zeta: float) -> "ChoicePolicy":
        return cls("bounded-rational", zeta=zeta)

    @classmethod
    def boltzmann(cls, alpha: float) -> "ChoicePolicy":
        return cls("boltzmann", alpha=alpha)


def best_index(losses) -> int:
    """Index of the smallest loss; ties go to the lowest index."""
    losses = np.asarray(losses, dtype=np.float64).reshape(-1)
    if losses.size == 0:
        raise DomainError("need at least one loss")
    if np.isnan(losses).any():
        raise DomainError("NaN loss")
    return int(np.argmin(losses))


def choice_probabilities(policy: ChoicePolicy, losses) -> NDArray[np.float64]:
    losses = np.asarray(losses, dtype=np.float64).reshape(-1)
    k = losses.size
    best = best_index(losses)
    if policy.kind == "bounded-rational":
        probs = np.full(k, policy.zeta / k)
        probs[best] += 1.0 - policy.zeta
        return probs
    # shift by the minimum so the largest weight is exactly 1
    w = np.exp(-policy.alpha * (losses - losses[best]))
    return w / w.sum()


def sample_index(policy: ChoicePolicy, losses, rng: np.random.Generator) -> tuple[int, bool]:
    """Draw a service index for precomputed losses.

    Returns the index and whether it came from the random part of the
    behaviour model. For Boltzmann users the flag means the draw differs
    from the best service.
    """
    losses = np.asarray(losses, dtype=np.float64).reshape(-1)
    best = best_index(losses)
    k = losses.size
    if policy.kind == "bounded-rational":
        if rng.random() < policy.zeta:
            return int(rng.integers(k)), True
        return best, False
    cum = np.cumsum(np.exp(-policy.alpha * (losses - losses[best])))
    i = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), k - 1)
    return i, i != best


def select(
    policy: ChoicePolicy,
    x: DataPoint,
    bank: ModelBank,
    loss: LossModel,
    rng: np.random.Generator,
) -> tuple[int, bool]:
    return sample_index(policy, loss.bank_values(x, bank.params), rng)
