"""Simulation loops: MSGD, the full-information baseline and minibatch MSGD.

At loop iteration ``t`` (0-based) the update uses ``step_size(schedule, t + 1)``,
so an inverse-t schedule starts with a step of ``eta_c``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .choice import ChoicePolicy, select
from .loss import LossModel, loss_for_population
from .metrics import TrajectoryRecord, accuracies, subpop_accuracy_unweighted
from .objective import evaluate, gradient_f, policy_loss
from .types import (
    DataPoint,
    DomainError,
    ModelBank,
    Population,
    RandomSource,
    StepSchedule,
    step_size,
    validate_bank,
)

log = logging.getLogger(__name__)

Algorithm = Literal["msgd", "full-info", "msgd-minibatch"]
ALGORITHMS: tuple[str, ...] = ("msgd", "full-info", "msgd-minibatch")


class NonFiniteError(RuntimeError):
    """A parameter became NaN or infinite; carries what was computed so far."""

    def __init__(self, message: str, step: int, trajectory=None, events=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory or []
        self.events = events or []


@dataclass(frozen=True)
class EventRecord:
    """One service's use of one user's data.

    ``step_norm`` is the norm of the change this event applied to the
    service's parameters. In a minibatch the whole averaged update of a
    service is attributed to its first event and the rest carry 0.
    """

    t: int
    point_id: int
    chosen: int
    was_random: bool
    eta: float
    grad_norm: float
    step_norm: float

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "point_id": self.point_id,
            "chosen": self.chosen,
            "was_random": self.was_random,
            "eta": self.eta,
            "grad_norm": self.grad_norm,
            "step_norm": self.step_norm,
        }


@dataclass(frozen=True)
class InitSpec:
    """Initial parameters: explicit ``values`` or uniform draws in ``[low, high)``."""

    low: float = 0.0
    high: float = 1.0
    values: tuple[tuple[float, ...], ...] | None = None

    def draw(self, k: int, p: int, rng: np.random.Generator) -> np.ndarray:
        if self.values is not None:
            arr = np.array(self.values, dtype=np.float64).reshape(len(self.values), -1)
            if arr.shape != (k, p):
                raise DomainError(f"init values have shape {arr.shape}, expected {(k, p)}")
            return arr
        if not self.high > self.low:
            raise DomainError("init box needs high > low")
        return rng.uniform(self.low, self.high, size=(k, p))


@dataclass(frozen=True)
class RunConfig:
    algorithm: Algorithm = "msgd"
    k: int = 2
    policy: ChoicePolicy = field(default_factory=ChoicePolicy)
    schedule: StepSchedule = field(default_factory=StepSchedule)
    T: int = 1000
    batch_size: int = 1
    eval_every: int = 100
    seed: int = 0
    init: InitSpec = field(default_factory=InitSpec)
    loss_family: str | None = None
    name: str | None = None

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise DomainError(f"unknown algorithm {self.algorithm!r}")
        if self.k < 1:
            raise DomainError("k must be >= 1")
        if self.T < 0:
            raise DomainError("T must be >= 0")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise DomainError("eval_every must be >= 1")

    @property
    def eval_zeta(self) -> float:
        """Rationality used for the reported overall loss."""
        return self.policy.zeta if self.policy.kind == "bounded-rational" else 0.0


@dataclass
class RunResult:
    trajectory: list[TrajectoryRecord]
    events: list[EventRecord] | None
    bank: ModelBank
    metadata: dict


def _check_finite(row: np.ndarray, t: int) -> None:
    if not np.isfinite(row).all():
        raise NonFiniteError(f"non-finite parameters after step {t}", step=t)


def msgd_step(
    bank: ModelBank,
    x: DataPoint,
    t: int,
    policy: ChoicePolicy,
    loss: LossModel,
    schedule: StepSchedule,
    rng: np.random.Generator,
    *,
    point_id: int = -1,
) -> tuple[ModelBank, EventRecord]:
    """One user arrives, picks a service, and only that service takes a step."""
    if t < 0:
        raise DomainError("step index must be >= 0")
    i, was_random = select(policy, x, bank, loss, rng)
    eta = step_size(schedule, t + 1)
    g = loss.gradient(x, bank.params[i])
    old = bank.params[i]
    with np.errstate(over="ignore", invalid="ignore"):
        new = old - eta * g
    _check_finite(new, t)
    event = EventRecord(t, point_id, i, was_random, eta, float(np.linalg.norm(g)), float(np.linalg.norm(new - old)))
    return bank.replace_rows({i: new}), event


def full_info_step(
    bank: ModelBank,
    x: DataPoint,
    t: int,
    loss: LossModel,
    schedule: StepSchedule,
    *,
    point_id: int = -1,
) -> tuple[ModelBank, list[EventRecord]]:
    """Every service takes a step on the arriving user's data."""
    if t < 0:
        raise DomainError("step index must be >= 0")
    eta = step_size(schedule, t + 1)
    new = bank.params.copy()
    events = []
    for j in range(bank.k):
        g = loss.gradient(x, bank.params[j])
        new[j] = bank.params[j] - eta * g
        events.append(
            EventRecord(t, point_id, j, False, eta, float(np.linalg.norm(g)), float(np.linalg.norm(new[j] - bank.params[j])))
        )
    _check_finite(new, t)
    return ModelBank(new, bank.shape), events


def minibatch_step(
    bank: ModelBank,
    batch: list[DataPoint],
    t: int,
    policy: ChoicePolicy,
    loss: LossModel,
    schedule: StepSchedule,
    rng: np.random.Generator,
    *,
    point_ids: list[int] | None = None,
) -> tuple[ModelBank, list[EventRecord]]:
    """Several users arrive at once and choose against the same snapshot.

    Each service steps along the mean gradient of the users who picked it;
    services nobody picked stay put.
    """
    if not batch:
        raise DomainError("batch must contain at least one user")
    if t < 0:
        raise DomainError("step index must be >= 0")
    point_ids = point_ids if point_ids is not None else [-1] * len(batch)
    eta = step_size(schedule, t + 1)
    choices = [select(policy, x, bank, loss, rng) for x in batch]
    grads = [loss.gradient(x, bank.params[i]) for x, (i, _) in zip(batch, choices)]
    groups: dict[int, list[int]] = {}
    for n, (i, _) in enumerate(choices):
        groups.setdefault(i, []).append(n)
    updates = {}
    step_norms = [0.0] * len(batch)
    for i, members in groups.items():
        g = np.mean([grads[n] for n in members], axis=0)
        updates[i] = bank.params[i] - eta * g
        step_norms[members[0]] = float(np.linalg.norm(updates[i] - bank.params[i]))
    for row in updates.values():
        _check_finite(row, t)
    events = [
        EventRecord(t, pid, i, r, eta / len(groups[i]), float(np.linalg.norm(g)), sn)
        for pid, (i, r), g, sn in zip(point_ids, choices, grads, step_norms)
    ]
    return bank.replace_rows(updates), events


def snapshot(
    bank: ModelBank,
    test: Population,
    loss: LossModel,
    config: RunConfig,
    t: int,
    displacement: float,
    counts: np.ndarray,
) -> TrajectoryRecord:
    zeta = config.eval_zeta
    report = evaluate(bank, test, loss, zeta)
    residual = float(np.linalg.norm(gradient_f(bank, test, loss, zeta, assignment=report.partition.assignment)))
    f_policy = report.f if config.policy.kind == "bounded-rational" else policy_loss(bank, test, loss, config.policy)
    sub = whole = sub_plain = None
    if test.kind == "binary-classification":
        sub, whole = accuracies(bank, test, loss)
        sub_plain = subpop_accuracy_unweighted(bank, test, loss)
    return TrajectoryRecord(
        t=t,
        f=report.f,
        f_pr=report.f_pr,
        f_np=report.f_np,
        f_policy=f_policy,
        residual=residual,
        displacement=displacement,
        proportions=tuple(float(a) for a in report.partition.proportions),
        selection_counts=tuple(int(c) for c in counts),
        subpop_acc=sub,
        wholepop_acc=whole,
        subpop_acc_unweighted=sub_plain,
    )


# overflow on the way to divergence is reported by the finiteness check
@np.errstate(over="ignore", invalid="ignore")
def run(
    config: RunConfig,
    pop: Population,
    test: Population,
    *,
    stream: int = 0,
    record_events: bool = False,
    loss: LossModel | None = None,
) -> RunResult:
    """Simulate ``config.T`` steps and record metrics on ``test``.

    Users are drawn uniformly with replacement from ``pop``. Three
    independent child streams of ``RandomSource(config.seed, stream)``
    drive initialization, user sampling and user choice.
    """
    if loss is None:
        loss = loss_for_population(pop, config.loss_family)
    source = RandomSource(config.seed, stream)
    init_rng, sample_rng, choice_rng = source.spawn(3)

    bank = ModelBank(config.init.draw(config.k, loss.n_params, init_rng), loss.shape)
    warnings = validate_bank(bank)
    for w in warnings:
        log.warning("%s", w)
    metadata = {
        "seed": config.seed,
        "stream": stream,
        "initial_params": bank.params.tolist(),
        "bank_warnings": warnings,
        "square_summable": config.schedule.square_summable,
        "loss_family": loss.family,
    }

    counts = np.zeros(config.k, dtype=np.int64)
    displacement = 0.0
    trajectory = [snapshot(bank, test, loss, config, 0, displacement, counts)]
    events: list[EventRecord] = []
    n = len(pop)
    b = config.batch_size if config.algorithm == "msgd-minibatch" else 1
    chunk = 4096
    idx_buf = np.empty(0, dtype=np.int64)
    pos = 0

    try:
        for t in range(config.T):
            if pos + b > idx_buf.size:
                idx_buf = sample_rng.integers(n, size=max(chunk, b))
                pos = 0
            ids = idx_buf[pos : pos + b]
            pos += b
            if config.algorithm == "msgd":
                pid = int(ids[0])
                bank, ev = msgd_step(bank, pop.point(pid), t, config.policy, loss, config.schedule, choice_rng, point_id=pid)
                step_events = [ev]
            elif config.algorithm == "full-info":
                pid = int(ids[0])
                bank, step_events = full_info_step(bank, pop.point(pid), t, loss, config.schedule, point_id=pid)
            else:
                pids = [int(i) for i in ids]
                bank, step_events = minibatch_step(
                    bank, [pop.point(i) for i in pids], t, config.policy, loss, config.schedule, choice_rng, point_ids=pids
                )
            moved = set()
            sq = 0.0
            for e in step_events:
                sq += e.step_norm * e.step_norm
                moved.add(e.chosen)
            for i in moved:
                counts[i] += 1
            displacement += float(np.sqrt(sq))
            if record_events:
                events.extend(step_events)
            done = t + 1
            if done % config.eval_every == 0 or done == config.T:
                trajectory.append(snapshot(bank, test, loss, config, done, displacement, counts))
    except NonFiniteError as exc:
        log.error("run aborted: %s", exc)
        raise NonFiniteError(str(exc), exc.step, trajectory, events) from None

    return RunResult(trajectory, events if record_events else None, bank, metadata)
