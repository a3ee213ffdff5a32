"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line; the lines are printed in the
pytest terminal summary and when this file is run directly::

    python tests/test_acceptance.py
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import integrate

from msgd.choice import ChoicePolicy, choice_probabilities, sample_index
from msgd.data import DatasetSpec, generate
from msgd.engine import InitSpec, RunConfig, run
from msgd.loss import LossModel, loss_for_population
from msgd.metrics import compare
from msgd.objective import closed_form_1d, evaluate, gradient_f
from msgd.types import Population
from msgd.verify import (
    boundary_safe_bank,
    central_difference,
    objective_fd_gradient,
    random_bank,
    relative_error,
)

RESULTS: list[str] = []


def report(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert passed, line


def _synthetic_population(kind, n=1000, seed=0):
    if kind == "scalar":
        train, _ = generate(DatasetSpec("synthetic-gaussian-mixture", n=n + n // 4, split=0.2, seed=seed))
        return train.subset(np.arange(n))
    train, _ = generate(DatasetSpec("synthetic-clusters", n=n + n // 4, split=0.2, add_bias=True, seed=seed))
    return train.subset(np.arange(n))


@pytest.fixture(scope="module")
def decomposition_configs():
    """100 random (bank, zeta, k <= 5) configurations on a 1,000-point population."""
    pop = _synthetic_population("scalar")
    loss = loss_for_population(pop)
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    reports = []
    for _ in range(100):
        k = int(rng.integers(1, 6))
        zeta = float(rng.random())
        reports.append(evaluate(random_bank(loss, pop, k, rng), pop, loss, zeta))
    return reports, time.perf_counter() - start


def test_criterion_01_decomposition(decomposition_configs):
    reports, elapsed = decomposition_configs
    worst = max(abs(r.f - ((1 - r.zeta) * r.f_pr + r.zeta * r.f_np)) for r in reports)
    report(1, "decomposition identity", worst <= 1e-12 and elapsed < 5, f"max gap {worst:.2e} (tol 1e-12), {elapsed:.2f}s")


def test_criterion_02_sandwich(decomposition_configs):
    reports, _ = decomposition_configs
    worst = max(max(r.f_pr - r.f, r.f - r.f_np) for r in reports)
    report(2, "sandwich bounds", worst <= 1e-12, f"max violation {max(worst, 0.0):.2e} (tol 1e-12)")


def test_criterion_03_closed_form():
    start = time.perf_counter()
    formula = closed_form_1d(0.25, 0.75).f_pr
    quad = integrate.quad(lambda x: (x - 0.25) ** 2, 0, 0.5)[0] + integrate.quad(lambda x: (x - 0.75) ** 2, 0.5, 1)[0]
    x = np.random.default_rng(7).random(10**6)
    mc = float(np.minimum((x - 0.25) ** 2, (x - 0.75) ** 2).mean())
    elapsed = time.perf_counter() - start
    ok = abs(mc - formula) <= 3e-3 and abs(formula - quad) <= 1e-12 and abs(formula - 0.0208333) < 1e-7 and elapsed < 10
    report(3, "closed form vs Monte Carlo", ok, f"MC {mc:.7f}, formula {formula:.7f}, quadrature {quad:.7f}, {elapsed:.2f}s")


def test_criterion_04_objective_gradient():
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = {}
    for kind in ("scalar", "logistic"):
        pop = _synthetic_population(kind, seed=4)
        loss = loss_for_population(pop)
        bank = boundary_safe_bank(loss, pop, 3, rng)
        worst[kind] = max(
            relative_error(gradient_f(bank, pop, loss, z), objective_fd_gradient(bank, pop, loss, z, 1e-6)) for z in (0.0, 0.3, 1.0)
        )
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-2 and elapsed < 30
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    report(4, "objective gradient vs finite difference", ok, f"max rel err {detail} (tol 1e-2), {elapsed:.2f}s")


def test_criterion_05_stationarity():
    start = time.perf_counter()
    n = 2001
    grid = Population((np.arange(n) + 0.5) / n, "scalar-1d")
    T = 200_000
    good, notes = 0, []
    for stream in range(5):
        cfg = RunConfig("msgd", k=2, policy=ChoicePolicy.bounded(0.0), T=T, eval_every=2000, seed=5)
        traj = run(cfg, grid, grid, stream=stream).trajectory
        tail = np.array([r.f for r in traj if r.t >= 0.9 * T])
        variation = (tail.max() - tail.min()) / tail.mean()
        residual = traj[-1].residual
        good += residual <= 1e-2 and variation <= 0.01
        notes.append(f"{residual:.1e}/{variation:.1%}")
    elapsed = time.perf_counter() - start
    report(5, "stationarity", good >= 4 and elapsed < 120, f"{good}/5 seeds (residual/tail variation {', '.join(notes)}), {elapsed:.0f}s")


def test_criterion_06_specialisation():
    start = time.perf_counter()
    spec = DatasetSpec("synthetic-gaussian-mixture", n=5000, means=(0.25, 0.75), stddevs=(0.05,), seed=3)
    train, test = generate(spec)
    variants = {
        "msgd-zeta0": RunConfig("msgd", k=3, policy=ChoicePolicy.bounded(0.0), T=20_000, eval_every=2000, seed=11),
        "msgd-zeta1": RunConfig("msgd", k=3, policy=ChoicePolicy.bounded(1.0), T=20_000, eval_every=2000, seed=11),
        "full-info": RunConfig("full-info", k=3, T=20_000, eval_every=2000, seed=11),
    }
    groups = {name: [run(cfg, train, test, stream=s).trajectory for s in range(5)] for name, cfg in variants.items()}
    table = compare(groups)
    f0, f1, ff = (table.row(n)["final_f"] for n in ("msgd-zeta0", "msgd-zeta1", "full-info"))
    elapsed = time.perf_counter() - start
    ok = f0 < ff <= f1 and elapsed < 180
    report(6, "specialisation vs full information", ok, f"median f: zeta0 {f0:.6g} < full {ff:.6g} <= zeta1 {f1:.6g}, {elapsed:.0f}s")


def _inversions(values, increasing):
    pairs = zip(values, values[1:])
    return sum((b < a) if increasing else (b > a) for a, b in pairs)


def test_criterion_07_accuracy_tradeoff():
    spec = DatasetSpec(
        "synthetic-clusters",
        n=3000,
        dim=2,
        n_clusters=6,
        cluster_spread=3.0,
        rule_spread=0.3,
        center_offset=0.0,
        add_bias=True,
        seed=1,
    )
    train, test = generate(spec)
    sub, whole = [], []
    for k in (2, 4, 6):
        cfg = RunConfig("msgd", k=k, policy=ChoicePolicy.bounded(0.0), T=2000 * k, eval_every=2000 * k, seed=0, init=InitSpec(-1.0, 1.0))
        finals = [run(cfg, train, test, stream=s).trajectory[-1] for s in range(3)]
        sub.append(float(np.median([r.subpop_acc for r in finals])))
        whole.append(float(np.median([r.wholepop_acc for r in finals])))
    inv = _inversions(sub, increasing=True) + _inversions(whole, increasing=False)
    detail = f"subpop {[round(v, 3) for v in sub]}, wholepop {[round(v, 3) for v in whole]}, inversions {inv}"
    report(7, "subpopulation/whole-population trade-off", inv <= 1, detail)


def test_criterion_08_choice_statistics():
    n = 10**5
    rng = np.random.default_rng(8)
    worst_z = 0.0
    for zeta, losses in ((0.3, [0.1, 0.2]), (0.6, [0.5, 0.2, 0.9, 0.4])):
        pol = ChoicePolicy.bounded(zeta)
        p = choice_probabilities(pol, losses)
        counts = np.bincount([sample_index(pol, losses, rng)[0] for _ in range(n)], minlength=len(losses))
        worst_z = max(worst_z, float((np.abs(counts / n - p) / np.sqrt(p * (1 - p) / n)).max()))
    uniform = np.bincount([sample_index(ChoicePolicy.boltzmann(0.0), [0.3, 0.1, 2.0, 0.5], rng)[0] for _ in range(n)], minlength=4) / n
    uniform_z = float((np.abs(uniform - 0.25) / np.sqrt(0.25 * 0.75 / n)).max())
    sharp = np.mean([sample_index(ChoicePolicy.boltzmann(50.0), [0.0, 1.0], rng)[0] == 0 for _ in range(n)])
    ok = worst_z <= 3 and uniform_z <= 3 and sharp >= 0.999
    report(8, "choice statistics", ok, f"bounded max |z| {worst_z:.2f}, alpha=0 max |z| {uniform_z:.2f}, alpha=50 argmin share {sharp:.5f}")


def test_criterion_09_determinism(tmp_path):
    cfg = {
        "seed": 3,
        "trials": 2,
        "data": {"source": "synthetic-gaussian-mixture", "n": 800},
        "runs": [
            {"name": "msgd", "k": 3, "zeta": [0.0, 0.5], "T": 3000, "eval_every": 300},
            {"name": "boltz", "policy": "boltzmann", "alpha": 20.0, "k": 2, "T": 3000, "eval_every": 300},
        ],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        proc = subprocess.run([sys.executable, "-m", "msgd", "run", str(path), "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outputs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.jsonl")) + sorted(out.glob("*__trial*.csv"))})
    same = outputs[0] == outputs[1] and len(outputs[0]) == 12
    report(9, "determinism", same, f"{len(outputs[0])} trajectory files compared byte for byte")


def test_criterion_10_loss_gradients():
    rng = np.random.default_rng(10)
    scalar = _synthetic_population("scalar", seed=2)
    logistic = _synthetic_population("logistic", seed=2)
    r = np.random.default_rng(3)
    Z = r.standard_normal((300, 4))
    mask = r.random((300, 6)) < 0.5
    mask[:, 0] = True
    masked = Population(Z, "regression-masked", ratings=Z @ r.standard_normal((4, 6)), mask=mask)
    worst = {}
    for pop in (scalar, logistic, masked):
        loss = loss_for_population(pop)
        w = 0.0
        for _ in range(200):
            x = pop.point(int(rng.integers(len(pop))))
            theta = random_bank(loss, pop, 1, rng).params[0]
            fd = central_difference(lambda th: loss.value(x, th), theta, 1e-6)
            w = max(w, relative_error(loss.gradient(x, theta), fd))
        worst[loss.family] = w
    assert set(worst) == {"squared-scalar", "logistic", "squared-masked-regression"}
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(10, "loss gradients vs finite difference", max(worst.values()) <= 1e-5, f"max rel err {detail} (tol 1e-5)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
