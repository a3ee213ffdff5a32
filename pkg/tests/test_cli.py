import json
import math
import subprocess
import sys

import pytest

from msgd import cli

MINIMAL = {
    "seed": 0,
    "trials": 1,
    "data": {"source": "synthetic-uniform-1d", "n": 500},
    "runs": [{"name": "base", "algorithm": "msgd", "k": 2, "zeta": 0.0, "T": 10000, "eval_every": 1000}],
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def read_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


class TestRun:
    def test_minimal(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["run", str(write_config(tmp_path, MINIMAL)), "--out", str(out)]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["base__trial0.csv", "base__trial0.jsonl", "resolved_config.json", "summary.csv", "summary.json"]
        lines = (out / "base__trial0.jsonl").read_text().splitlines()
        assert len(lines) == 11
        last = json.loads(lines[-1])
        assert last["t"] == 10000 and last["subpop_acc"] is None
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["seed"] == 0
        consts = resolved["diagnostics"]["constants"]
        assert consts["lipschitz"] > 0 and consts["smoothness"] == pytest.approx(2.0)

    def test_zeta_out_of_range(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(MINIMAL))
        cfg["runs"][0]["zeta"] = 1.5
        code = cli.main(["run", str(write_config(tmp_path, cfg)), "--out", str(tmp_path / "o")])
        err = capsys.readouterr().err
        assert code != 0
        assert "runs/0/zeta" in err and "maximum" in err
        assert not (tmp_path / "o").exists()

    def test_unknown_key(self, tmp_path, capsys):
        cfg = dict(MINIMAL, extra=1)
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) != 0
        assert "extra" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{", encoding="utf-8")
        assert cli.main(["run", str(path)]) == cli.EXIT_CONFIG
        assert "invalid JSON" in capsys.readouterr().err

    def test_sweep(self, tmp_path):
        cfg = {
            "seed": 1,
            "data": {"source": "synthetic-gaussian-mixture", "n": 600, "means": [0.25, 0.75], "stddevs": [0.05]},
            "runs": [
                {"name": "msgd", "k": 2, "zeta": [0, 0.2, 0.5, 0.8, 1], "T": 2000, "eval_every": 500},
                {"name": "full", "algorithm": "full-info", "k": 2, "zeta": [0, 0.2, 0.5, 0.8, 1], "T": 2000, "eval_every": 500},
            ],
        }
        out = tmp_path / "sweep"
        assert cli.run_experiment(write_config(tmp_path, cfg), out) == 0
        assert len(list(out.glob("*.jsonl"))) == 6
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["rows"]) == 6
        assert len(summary["deltas"]) == 15
        labels = {r["label"] for r in summary["rows"]}
        assert "msgd_k2_zeta0.5" in labels and "full" in labels

    def test_rerun_from_resolved_is_identical(self, tmp_path):
        cfg = json.loads(json.dumps(MINIMAL))
        cfg["trials"] = 2
        cfg["runs"][0]["zeta"] = 0.3
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.run_experiment(write_config(tmp_path, cfg), a) == 0
        assert cli.run_experiment(a / "resolved_config.json", b) == 0
        assert read_bytes(a) == read_bytes(b)

    def test_parallel_matches_serial(self, tmp_path):
        cfg = json.loads(json.dumps(MINIMAL))
        cfg["trials"] = 3
        cfg["runs"][0]["T"] = 2000
        path = write_config(tmp_path, cfg)
        assert cli.main(["run", str(path), "--out", str(tmp_path / "s")]) == 0
        assert cli.main(["run", str(path), "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
        assert read_bytes(tmp_path / "s") == read_bytes(tmp_path / "p")

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.ENV_OUTPUT_DIR, str(tmp_path / "env_out"))
        cfg = json.loads(json.dumps(MINIMAL))
        cfg["runs"][0]["T"] = 100
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) == 0
        assert (tmp_path / "env_out" / "summary.json").exists()

    def test_events_and_per_service_horizon(self, tmp_path):
        cfg = {
            "emit_events": True,
            "data": {"source": "synthetic-clusters", "n": 300, "add_bias": True},
            "runs": [{"name": "c", "k": [2, 3], "T_per_service": 50, "eval_every": 25, "init": {"low": -1, "high": 1}}],
        }
        out = tmp_path / "ev"
        assert cli.run_experiment(write_config(tmp_path, cfg), out) == 0
        ev3 = (out / "c_k3_zeta0__trial0.events.jsonl").read_text().splitlines()
        assert len(ev3) == 150
        last = json.loads((out / "c_k3_zeta0__trial0.jsonl").read_text().splitlines()[-1])
        assert last["t"] == 150 and 0 <= last["subpop_acc"] <= 1
        summary = json.loads((out / "summary.json").read_text())
        assert [r["t_final"] for r in summary["rows"]] == [100, 150]
        assert summary["resampled"] is True

    def test_divergence_reports_run(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(MINIMAL))
        cfg["runs"][0]["schedule"] = {"kind": "constant", "eta_c": 5.0}
        code = cli.run_experiment(write_config(tmp_path, cfg), tmp_path / "d")
        assert code == cli.EXIT_NONFINITE
        assert "base__trial0" in capsys.readouterr().err
        assert (tmp_path / "d" / "base__trial0.jsonl").exists()

    def test_missing_csv(self, tmp_path, capsys):
        cfg = {"data": {"source": "csv-classification", "path": str(tmp_path / "none.csv")}, "runs": [{}]}
        assert cli.run_experiment(write_config(tmp_path, cfg), tmp_path / "o") == cli.EXIT_DATA
        assert "not found" in capsys.readouterr().err


class TestVerify:
    def test_default_uniform_passes(self, tmp_path, capsys):
        assert cli.main(["verify", str(write_config(tmp_path, MINIMAL))]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 7 and all(line.startswith("[PASS]") for line in lines)

    def test_constant_step_warns(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(MINIMAL))
        cfg["runs"][0]["schedule"] = {"kind": "constant", "eta_c": 0.01}
        assert cli.verify(write_config(tmp_path, cfg)) == 0
        out = capsys.readouterr().out
        assert "square-summable" in out.splitlines()[0]
        assert out.count("[PASS]") == 7

    def test_logistic_population(self, tmp_path, capsys):
        cfg = {"data": {"source": "synthetic-clusters", "n": 600, "add_bias": True}, "runs": [{"k": 3}]}
        assert cli.verify(write_config(tmp_path, cfg)) == 0
        assert "[FAIL]" not in capsys.readouterr().out

    def test_corrupted_csv(self, tmp_path, capsys):
        data = tmp_path / "bad.csv"
        data.write_text("a,y\n0.5,1\nnot-a-number,0\n", encoding="utf-8")
        cfg = {"data": {"source": "csv-classification", "path": str(data)}, "runs": [{}]}
        assert cli.verify(write_config(tmp_path, cfg)) != 0
        captured = capsys.readouterr()
        assert "line 3" in captured.err
        assert "PASS" not in captured.out and "FAIL" not in captured.out


class TestSerialisation:
    def test_seventeen_digits_roundtrip(self):
        for x in (0.1, 1 / 3, 2.0**-40, 1e300, -0.0):
            s = cli.dumps(x)
            assert float(s) == x
        assert cli.dumps(0.1) == "0.10000000000000001"

    def test_non_finite_is_null(self):
        assert json.loads(cli.dumps({"a": math.nan, "b": [math.inf]})) == {"a": None, "b": [None]}

    def test_integers_and_nesting(self):
        obj = {"k": 3, "flag": True, "xs": [1.5, None], "s": "x"}
        assert json.loads(cli.dumps(obj, indent=2)) == obj


def test_module_entry_point(tmp_path):
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["runs"][0]["T"] = 100
    path = write_config(tmp_path, cfg)
    proc = subprocess.run(
        [sys.executable, "-m", "msgd", "run", str(path), "--out", str(tmp_path / "m")], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "base__trial0.jsonl").exists()


@pytest.mark.parametrize("name", ["uniform_1d.json", "zeta_sweep.json", "clusters_k_sweep.json"])
def test_shipped_configs_validate(name):
    from pathlib import Path

    cfg = cli.load_config(Path(__file__).parent.parent / "configs" / name)
    assert [cli.run_config(r) for r in cli.expand_runs(cfg)]
