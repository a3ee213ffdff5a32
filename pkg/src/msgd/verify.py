"""Oracle checks run against a population without a full simulation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .loss import LossModel
from .objective import (
    boundary_margin,
    closed_form_1d,
    evaluate,
    gradient_f,
    loss_matrix,
    partition,
    partition_upper_bound,
)
from .types import ModelBank, Population

BOUNDARY_DELTA = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = h
        g.flat[j] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b| / max(|a|, |b|)``, zero when both vanish."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b) / scale)


def random_bank(loss: LossModel, pop: Population, k: int, rng: np.random.Generator) -> ModelBank:
    """Parameters drawn on the scale of the data."""
    if loss.family == "squared-scalar":
        lo, hi = pop.features.min(), pop.features.max()
        return ModelBank(rng.uniform(lo, hi, size=(k, 1)), loss.shape)
    scale = 1.0 if loss.family == "logistic" else 0.3
    return ModelBank(rng.normal(0.0, scale, size=(k, loss.n_params)), loss.shape)


def boundary_safe_bank(
    loss: LossModel, pop: Population, k: int, rng: np.random.Generator, delta: float = BOUNDARY_DELTA, attempts: int = 10_000
) -> ModelBank:
    for _ in range(attempts):
        bank = random_bank(loss, pop, k, rng)
        if boundary_margin(bank, pop, loss) >= delta:
            return bank
    raise RuntimeError(f"no parameter tuple with tie margin >= {delta} found in {attempts} draws")


def objective_fd_gradient(bank: ModelBank, pop: Population, loss: LossModel, zeta: float, h: float) -> np.ndarray:
    def f(flat):
        return evaluate(ModelBank(flat.reshape(bank.params.shape), bank.shape), pop, loss, zeta).f

    return central_difference(f, bank.params.ravel(), h).reshape(bank.params.shape)


def check_decomposition(loss, pop, k, rng, n_configs=100, tol=1e-12) -> list[CheckResult]:
    worst_id = worst_lo = worst_hi = 0.0
    for _ in range(n_configs):
        kk = int(rng.integers(1, k + 1))
        bank = random_bank(loss, pop, kk, rng)
        zeta = float(rng.random())
        r = evaluate(bank, pop, loss, zeta)
        worst_id = max(worst_id, abs(r.f - ((1 - zeta) * r.f_pr + zeta * r.f_np)))
        worst_lo = max(worst_lo, r.f_pr - r.f)
        worst_hi = max(worst_hi, r.f - r.f_np)
    return [
        CheckResult("decomposition", worst_id <= tol, f"max |f - mix| = {worst_id:.3e} (tol {tol:g})"),
        CheckResult("sandwich bounds", max(worst_lo, worst_hi) <= tol, f"max violation = {max(worst_lo, worst_hi, 0.0):.3e}"),
    ]


def check_rational_forms(loss, pop, k, rng, n_configs=20, tol=1e-12) -> CheckResult:
    worst = 0.0
    for _ in range(n_configs):
        bank = random_bank(loss, pop, k, rng)
        part = partition(bank, pop, loss)
        weighted = float(np.nansum(part.proportions * np.nan_to_num(part.mean_loss)))
        direct = float(loss_matrix(bank, pop, loss).min(axis=1).mean())
        worst = max(worst, abs(weighted - direct))
    return CheckResult("rational loss forms agree", worst <= tol, f"max gap = {worst:.3e}")


def check_upper_bound(loss, pop, k, rng, n_configs=20) -> CheckResult:
    worst = -np.inf
    for _ in range(n_configs):
        bank = random_bank(loss, pop, k, rng)
        ref = random_bank(loss, pop, k, rng)
        worst = max(worst, evaluate(bank, pop, loss, 0.0).f_pr - partition_upper_bound(bank, ref, pop, loss))
    return CheckResult("frozen-partition upper bound", worst <= 1e-12, f"max (f_pr - bound) = {worst:.3e}")


def check_loss_gradient(loss, pop, rng, n_points=200, h=1e-6, tol=1e-5) -> CheckResult:
    worst = 0.0
    for _ in range(n_points):
        x = pop.point(int(rng.integers(len(pop))))
        theta = random_bank(loss, pop, 1, rng).params[0]
        fd = central_difference(lambda th: loss.value(x, th), theta, h)
        worst = max(worst, relative_error(loss.gradient(x, theta), fd))
    return CheckResult("loss gradient vs finite difference", worst <= tol, f"max rel err = {worst:.3e} (tol {tol:g})")


def check_objective_gradient(loss, pop, k, rng, zetas=(0.0, 0.3, 1.0), h=1e-6, tol=1e-2) -> CheckResult:
    bank = boundary_safe_bank(loss, pop, k, rng)
    worst = 0.0
    for zeta in zetas:
        worst = max(worst, relative_error(gradient_f(bank, pop, loss, zeta), objective_fd_gradient(bank, pop, loss, zeta, h)))
    return CheckResult("objective gradient vs finite difference", worst <= tol, f"max rel err = {worst:.3e} (tol {tol:g})")


def check_closed_form(rng, n=1_000_000, tol=3e-3) -> CheckResult:
    x = rng.random(n)
    mc = float(np.minimum((x - 0.25) ** 2, (x - 0.75) ** 2).mean())
    exact = closed_form_1d(0.25, 0.75).f_pr
    return CheckResult("uniform closed form vs Monte Carlo", abs(mc - exact) <= tol, f"MC {mc:.6f} vs formula {exact:.6f}")


def run_suite(loss: LossModel, pop: Population, k: int = 2, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    if len(pop) > 1000:
        pop = pop.subset(rng.choice(len(pop), size=1000, replace=False))
    results = check_decomposition(loss, pop, max(k, 1), rng)
    results.append(check_rational_forms(loss, pop, k, rng))
    results.append(check_upper_bound(loss, pop, k, rng))
    results.append(check_loss_gradient(loss, pop, rng))
    results.append(check_objective_gradient(loss, pop, max(k, 2), rng))
    results.append(check_closed_form(rng))
    return results
