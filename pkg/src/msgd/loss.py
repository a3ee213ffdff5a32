"""Loss families with exact gradients.

Every family works on a single :class:`DataPoint` and, vectorized, on a whole
:class:`Population` for one parameter vector. Parameters are flat; the masked
regression family views them as a row-major ``(d, d_r)`` matrix whose column
``j`` predicts rating ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .types import DataPoint, DomainError, Population

Family = Literal["squared-scalar", "squared-masked-regression", "logistic"]
FAMILIES: tuple[str, ...] = ("squared-scalar", "squared-masked-regression", "logistic")

_TASK_FOR_FAMILY = {
    "squared-scalar": "scalar-1d",
    "squared-masked-regression": "regression-masked",
    "logistic": "binary-classification",
}


def _sigmoid(s):
    # split by sign so exp never overflows
    s = np.asarray(s, dtype=np.float64)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logistic(s, y, eps):
    # cross-entropy as softplus; clipping the loss to [-log(1-eps), -log(eps)]
    # is the same as clamping the predicted probability to [eps, 1-eps]
    s = np.asarray(s, dtype=np.float64)
    raw = np.where(y == 1.0, np.logaddexp(0.0, -s), np.logaddexp(0.0, s))
    return np.clip(raw, -math.log1p(-eps), -math.log(eps))


@dataclass(frozen=True)
class LossModel:
    family: Family
    shape: tuple[int, int] = (1, 1)
    eps: float = 1e-12
    lipschitz: float | None = None
    smoothness: float | None = None

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise DomainError(f"unknown loss family {self.family!r}")
        if not 0 < self.eps < 0.5:
            raise DomainError("eps must lie in (0, 0.5)")

    @property
    def n_params(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def task(self) -> str:
        return _TASK_FOR_FAMILY[self.family]

    # single point -------------------------------------------------------

    def _check(self, x: DataPoint, theta: NDArray) -> NDArray:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.n_params:
            raise DomainError(f"expected {self.n_params} parameters, got {theta.size}")
        d = x.features.size
        if self.family == "squared-scalar":
            if d != 1:
                raise DomainError("squared-scalar needs a one-dimensional point")
        elif self.family == "logistic":
            if d != self.n_params:
                raise DomainError(f"feature dimension {d} != parameter dimension {self.n_params}")
            if x.label is None:
                raise DomainError("logistic loss needs a label")
        else:
            if x.mask is None or x.mask.size == 0:
                raise DomainError("masked regression needs a nonempty mask")
            if x.ratings is None or d != self.shape[0] or x.ratings.size != self.shape[1]:
                raise DomainError(f"point shape ({d}, {None if x.ratings is None else x.ratings.size}) != {self.shape}")
        return theta

    def value(self, x: DataPoint, theta: NDArray) -> float:
        theta = self._check(x, theta)
        if self.family == "squared-scalar":
            return float((x.features[0] - theta[0]) ** 2)
        if self.family == "logistic":
            return float(_logistic(x.features @ theta, x.label, self.eps))
        W = theta.reshape(self.shape)
        res = x.features @ W[:, x.mask] - x.ratings[x.mask]
        return float(res @ res / x.mask.size)

    def gradient(self, x: DataPoint, theta: NDArray) -> NDArray[np.float64]:
        """Exact gradient of :meth:`value`.

        For the logistic family this is the unclamped ``(sigmoid(s) - y) z``;
        it matches the clamped value wherever ``|s| < -log(eps)``.
        """
        theta = self._check(x, theta)
        if self.family == "squared-scalar":
            return np.array([-2.0 * (x.features[0] - theta[0])])
        if self.family == "logistic":
            return (float(_sigmoid(x.features @ theta)) - x.label) * x.features
        W = theta.reshape(self.shape)
        res = x.features @ W[:, x.mask] - x.ratings[x.mask]
        G = np.zeros(self.shape)
        G[:, x.mask] = np.outer(x.features, res) * (2.0 / x.mask.size)
        return G.reshape(-1)

    def bank_values(self, x: DataPoint, params: NDArray) -> NDArray[np.float64]:
        """Losses of one point under each row of a ``(k, p)`` parameter array."""
        params = np.asarray(params, dtype=np.float64)
        if params.ndim != 2 or params.shape[1] != self.n_params:
            raise DomainError(f"expected a (k, {self.n_params}) parameter array")
        self._check(x, params[0])
        if self.family == "squared-scalar":
            return (x.features[0] - params[:, 0]) ** 2
        if self.family == "logistic":
            return _logistic(params @ x.features, x.label, self.eps)
        W = params.reshape(params.shape[0], *self.shape)
        res = np.einsum("d,kdr->kr", x.features, W[:, :, x.mask]) - x.ratings[x.mask]
        return (res**2).mean(axis=1)

    # whole population ---------------------------------------------------

    def _check_pop(self, pop: Population, theta: NDArray) -> NDArray:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.n_params:
            raise DomainError(f"expected {self.n_params} parameters, got {theta.size}")
        if pop.kind != self.task:
            raise DomainError(f"{self.family} loss cannot score a {pop.kind} population")
        if self.family == "logistic" and pop.dim != self.n_params:
            raise DomainError(f"feature dimension {pop.dim} != parameter dimension {self.n_params}")
        if self.family == "squared-masked-regression" and (pop.dim, pop.n_ratings) != self.shape:
            raise DomainError(f"population shape ({pop.dim}, {pop.n_ratings}) != {self.shape}")
        return theta

    def population_values(self, pop: Population, theta: NDArray) -> NDArray[np.float64]:
        theta = self._check_pop(pop, theta)
        if self.family == "squared-scalar":
            return (pop.features[:, 0] - theta[0]) ** 2
        if self.family == "logistic":
            return _logistic(pop.features @ theta, pop.labels, self.eps)
        res = np.where(pop.mask, pop.features @ theta.reshape(self.shape) - pop.ratings, 0.0)
        return (res**2).sum(axis=1) / pop.mask.sum(axis=1)

    def population_gradients(self, pop: Population, theta: NDArray) -> NDArray[np.float64]:
        """Per-point gradients, shape ``(N, p)``."""
        theta = self._check_pop(pop, theta)
        if self.family == "squared-scalar":
            return (-2.0 * (pop.features[:, 0] - theta[0]))[:, None]
        if self.family == "logistic":
            return (_sigmoid(pop.features @ theta) - pop.labels)[:, None] * pop.features
        m = pop.mask.sum(axis=1)
        res = np.where(pop.mask, pop.features @ theta.reshape(self.shape) - pop.ratings, 0.0)
        res *= (2.0 / m)[:, None]
        return np.einsum("nd,nr->ndr", pop.features, res).reshape(len(pop), -1)

    def predict(self, pop: Population, theta: NDArray) -> NDArray[np.float64]:
        """Class predictions: 1 iff the linear score is strictly positive."""
        if self.family != "logistic":
            raise DomainError("predictions are only defined for the logistic family")
        theta = self._check_pop(pop, theta)
        return (pop.features @ theta > 0).astype(np.float64)


def loss_for_population(pop: Population, family: str | None = None, eps: float = 1e-12) -> LossModel:
    """Build the loss matching a population's task kind and dimensions."""
    if family is None:
        family = {v: k for k, v in _TASK_FOR_FAMILY.items()}[pop.kind]
    if family == "squared-scalar":
        shape = (1, 1)
    elif family == "logistic":
        shape = (pop.dim, 1)
    else:
        shape = (pop.dim, pop.n_ratings)
    return LossModel(family, shape=shape, eps=eps)


def value(loss: LossModel, x: DataPoint, theta: NDArray) -> float:
    return loss.value(x, theta)


def gradient(loss: LossModel, x: DataPoint, theta: NDArray) -> NDArray[np.float64]:
    return loss.gradient(x, theta)


def estimate_constants(
    loss: LossModel,
    pop: Population,
    bound: float,
    *,
    n_samples: int = 500,
    max_points: int = 1000,
    rng: np.random.Generator | None = None,
) -> LossModel:
    """Estimate Lipschitz and smoothness constants over a parameter ball.

    Parameters are drawn uniformly from the ball of radius ``bound`` around
    the origin. The Lipschitz estimate is the largest gradient norm seen; the
    smoothness estimate is the largest gradient difference ratio over random
    parameter pairs. Both are lower estimates of the true suprema and are
    meant for diagnostics only. Returns a copy of ``loss`` with the
    constants filled in.
    """
    if bound <= 0:
        raise DomainError("bound must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    p = loss.n_params
    if len(pop) > max_points:
        pop = pop.subset(rng.choice(len(pop), size=max_points, replace=False))

    def ball(n):
        v = rng.standard_normal((n, p))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * bound * rng.random(n)[:, None] ** (1.0 / p)

    thetas = ball(n_samples)
    lip = 0.0
    for th in thetas:
        lip = max(lip, float(np.linalg.norm(loss.population_gradients(pop, th), axis=1).max()))
    others = ball(n_samples)
    smooth = 0.0
    for a, b in zip(thetas, others):
        dist = float(np.linalg.norm(a - b))
        if dist == 0.0:
            continue
        diff = loss.population_gradients(pop, a) - loss.population_gradients(pop, b)
        smooth = max(smooth, float(np.linalg.norm(diff, axis=1).max()) / dist)
    return replace(loss, lipschitz=lip, smoothness=smooth)
