"""Config-driven experiment runner.

Usage::

    msgd run experiment.json [--out DIR] [--jobs N] [-v]
    msgd verify experiment.json

``MSGD_OUTPUT_DIR`` sets the default output directory. The config format is
described by ``config_schema.json`` shipped with the package.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .choice import ChoicePolicy
from .data import DataError, DatasetSpec, generate
from .engine import InitSpec, NonFiniteError, RunConfig, run
from .loss import estimate_constants, loss_for_population
from .metrics import TrajectoryRecord, compare
from .types import DomainError, StepSchedule
from .verify import run_suite

log = logging.getLogger("msgd")

ENV_OUTPUT_DIR = "MSGD_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NONFINITE = 4
EXIT_CHECKS = 5


class ConfigError(ValueError):
    pass


# --- serialization ---------------------------------------------------------


def _num(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    return s if any(c in s for c in ".eEn") else s + ".0"


def dumps(obj, indent: int | None = None, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    sep = ", " if indent is None else ","
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(str(k)) + ": " + dumps(v, indent, _level + 1) for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + sep.join(pad + dumps(v, indent, _level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return _num(float(v)) if math.isfinite(v) else ""
    return str(v)


def write_trajectory(traj: list[TrajectoryRecord], stem: Path) -> list[Path]:
    jsonl = stem.parent / f"{stem.name}.jsonl"
    jsonl.write_text("".join(dumps(r.to_dict()) + "\n" for r in traj), encoding="utf-8")
    rows = [r.to_row() for r in traj]
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(v) for k, v in row.items()})
    path_csv = stem.parent / f"{stem.name}.csv"
    path_csv.write_text(buf.getvalue(), encoding="utf-8")
    return [jsonl, path_csv]


def read_trajectory(path: str | Path) -> list[TrajectoryRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [TrajectoryRecord.from_dict(json.loads(line)) for line in lines if line]


# --- config ----------------------------------------------------------------


def _schema() -> dict:
    return json.loads(resources.files("msgd").joinpath("config_schema.json").read_text(encoding="utf-8"))


def load_config(path: str | Path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            if e.context:
                # for oneOf alternatives report the closest miss
                near = [c for c in e.context if c.validator != "type"] or list(e.context)
                e = max(near, key=lambda c: len(c.absolute_path))
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"{where}: {e.message}")
        raise ConfigError("config does not match schema:\n  " + "\n  ".join(msgs))
    return cfg


def _as_list(v):
    return v if isinstance(v, list) else [v]


def dataset_spec(cfg: dict) -> DatasetSpec:
    data = dict(cfg["data"])
    for key in ("means", "stddevs", "weights", "feature_columns", "rating_columns"):
        if data.get(key) is not None:
            data[key] = tuple(data[key])
    data.setdefault("seed", cfg.get("seed", 0))
    try:
        return DatasetSpec(**data)
    except DomainError as exc:
        raise ConfigError(f"data: {exc}") from None


_RUN_KEYS = (
    "name", "algorithm", "policy", "k", "zeta", "alpha", "schedule", "T",
    "batch_size", "eval_every", "seed", "init", "loss",
)


def expand_runs(cfg: dict) -> list[dict]:
    """Expand list-valued ``k``/``zeta``/``alpha`` into one explicit run each."""
    out = []
    for n, entry in enumerate(cfg["runs"]):
        ks, zetas, alphas = (_as_list(entry.get(key, default)) for key, default in (("k", 2), ("zeta", 0.0), ("alpha", 0.0)))
        if entry.get("algorithm") == "full-info":
            # choice plays no part in the updates, so one baseline per k suffices
            zetas, alphas = zetas[:1], alphas[:1]
        multi = len(ks) * len(zetas) * len(alphas) > 1
        for k, zeta, alpha in itertools.product(ks, zetas, alphas):
            r = {key: v for key, v in entry.items() if key not in ("k", "zeta", "alpha", "T_per_service")}
            r.update(k=k, zeta=zeta, alpha=alpha)
            r.setdefault("algorithm", "msgd")
            r.setdefault("policy", "bounded-rational")
            if "T_per_service" in entry:
                r["T"] = entry["T_per_service"] * k
            r.setdefault("T", 1000)
            r.setdefault("eval_every", max(1, r["T"] // 100))
            r.setdefault("batch_size", 1)
            r.setdefault("seed", cfg.get("seed", 0))
            r.setdefault("schedule", {"kind": "inverse-t", "eta_c": 1.0})
            base = entry.get("name") or f"run{n}_{r['algorithm']}"
            r["name"] = base
            if multi or not entry.get("name"):
                pieces = [base, f"k{k}"]
                if r["algorithm"] != "full-info":
                    pieces.append(f"alpha{alpha:g}" if r["policy"] == "boltzmann" else f"zeta{zeta:g}")
                r["name"] = "_".join(pieces)
            out.append({key: r[key] for key in _RUN_KEYS if key in r})
    names = [r["name"] for r in out]
    dup = {x for x in names if names.count(x) > 1}
    if dup:
        raise ConfigError(f"runs: duplicate run names {sorted(dup)}")
    return out


def run_config(r: dict) -> RunConfig:
    sched = r["schedule"]
    init = r.get("init", {})
    try:
        policy = ChoicePolicy.boltzmann(r["alpha"]) if r["policy"] == "boltzmann" else ChoicePolicy.bounded(r["zeta"])
        return RunConfig(
            algorithm=r["algorithm"],
            k=r["k"],
            policy=policy,
            schedule=StepSchedule(sched.get("kind", "inverse-t"), sched.get("eta_c", 1.0), tuple(sched.get("table", ()))),
            T=r["T"],
            batch_size=r["batch_size"],
            eval_every=r["eval_every"],
            seed=r["seed"],
            init=InitSpec(
                init.get("low", 0.0),
                init.get("high", 1.0),
                None if init.get("values") is None else tuple(tuple(v) for v in init["values"]),
            ),
            loss_family=r.get("loss"),
            name=r["name"],
        )
    except DomainError as exc:
        raise ConfigError(f"runs/{r['name']}: {exc}") from None


def _resolved(cfg: dict, spec: DatasetSpec, runs: list[dict]) -> dict:
    data = {}
    for f in fields(spec):
        v = getattr(spec, f.name)
        data[f.name] = list(v) if isinstance(v, tuple) else v
    out = {
        "seed": cfg.get("seed", 0),
        "trials": cfg.get("trials", 1),
        "emit_events": cfg.get("emit_events", False),
        "data": data,
        "runs": runs,
    }
    if "constants" in cfg:
        out["constants"] = cfg["constants"]
    return out


# --- commands --------------------------------------------------------------


def _one_trial(args):
    rc, trial, train, test, emit = args
    try:
        res = run(rc, train, test, stream=trial, record_events=emit)
        return rc.name, trial, res.trajectory, res.events, None
    except NonFiniteError as exc:
        return rc.name, trial, exc.trajectory, exc.events, f"{exc} (step {exc.step})"


def run_experiment(config_path: str | Path, out: str | Path | None = None, jobs: int = 1) -> int:
    try:
        cfg = load_config(config_path)
        spec = dataset_spec(cfg)
        runs = expand_runs(cfg)
        configs = [run_config(r) for r in runs]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        train, test = generate(spec)
    except (DataError, DomainError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA

    out_dir = Path(out or cfg.get("output_dir") or os.environ.get(ENV_OUTPUT_DIR, "msgd_out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    trials = cfg.get("trials", 1)
    emit = cfg.get("emit_events", False)

    resolved = _resolved(cfg, spec, runs)
    diagnostics: dict = {"square_summable": {rc.name: rc.schedule.square_summable for rc in configs}}
    loss = loss_for_population(train, configs[0].loss_family)
    const = cfg.get("constants", {})
    bound = const.get("bound", max(1.0, 2.0 * train.radius if loss.family == "squared-scalar" else 1.0))
    est = estimate_constants(loss, train, bound, n_samples=const.get("samples", 200), rng=np.random.default_rng(spec.seed))
    diagnostics["constants"] = {"family": loss.family, "bound": bound, "lipschitz": est.lipschitz, "smoothness": est.smoothness}
    diagnostics["population"] = {"n_train": len(train), "n_test": len(test), "radius": train.radius, "kind": train.kind}
    for rc in configs:
        if rc.schedule.square_summable is False:
            log.warning("run %s: step sizes are not square-summable; the convergence guarantee does not apply", rc.name)
    resolved["diagnostics"] = diagnostics
    (out_dir / "resolved_config.json").write_text(dumps(resolved, indent=2) + "\n", encoding="utf-8")

    tasks = [(rc, trial, train, test, emit) for rc in configs for trial in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_trial, tasks))
    else:
        results = [_one_trial(t) for t in tasks]

    status = EXIT_OK
    groups: dict[str, list] = {}
    for name, trial, traj, events, error in results:
        run_id = f"{name}__trial{trial}"
        write_trajectory(traj, out_dir / run_id)
        if emit and events is not None:
            (out_dir / f"{run_id}.events.jsonl").write_text(
                "".join(dumps(e.to_dict()) + "\n" for e in events), encoding="utf-8"
            )
        if error:
            print(f"error: run {run_id}: {error}", file=sys.stderr)
            status = EXIT_NONFINITE
            continue
        groups.setdefault(name, []).append(traj)
        log.info("run %s finished: f=%.6g", run_id, traj[-1].f)

    if groups:
        # rows use each label's own horizon; only cross-label deltas need a shared grid
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            table = compare(groups)
        if table.resampled:
            log.warning("runs have different evaluation grids; deltas use a common resampled grid")
        table.rows = [compare({name: group}).rows[0] for name, group in groups.items()]
        (out_dir / "summary.json").write_text(dumps(table.to_dict(), indent=2) + "\n", encoding="utf-8")
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(table.rows[0]), lineterminator="\n")
        w.writeheader()
        for row in table.rows:
            w.writerow({k: _cell(v) for k, v in row.items()})
        (out_dir / "summary.csv").write_text(buf.getvalue(), encoding="utf-8")
    return status


def verify(config_path: str | Path) -> int:
    try:
        cfg = load_config(config_path)
        spec = dataset_spec(cfg)
        runs = expand_runs(cfg)
        configs = [run_config(r) for r in runs]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        train, _ = generate(spec)
    except (DataError, DomainError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    for rc in configs:
        if rc.schedule.square_summable is False:
            print(f"warning: run {rc.name}: constant step sizes are not square-summable; convergence is not guaranteed")
    loss = loss_for_population(train, configs[0].loss_family)
    k = max(rc.k for rc in configs)
    results = run_suite(loss, train, k=k, seed=spec.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECKS


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="msgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run every configured simulation")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help=f"output directory (default: config, ${ENV_OUTPUT_DIR}, ./msgd_out)")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel trials")
    p_run.add_argument("-v", "--verbose", action="count", default=0)
    p_ver = sub.add_parser("verify", help="run the oracle checks on the configured data")
    p_ver.add_argument("config")
    p_ver.add_argument("-v", "--verbose", action="count", default=0)
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "run":
        return run_experiment(args.config, args.out, args.jobs)
    return verify(args.config)


if __name__ == "__main__":
    sys.exit(main())
