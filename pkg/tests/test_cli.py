import json

import numpy as np
import pytest

from saabo.cli import main
from saabo.gp import Dataset, FitConfig, fit_mle


def _write_data_csv(path, seed=0, n=10):
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    lines = ["x1,x2,y,noise_var"]
    for _ in range(n):
        x = rng.random(2)
        y = float(np.sin(3 * x[0]) + np.cos(4 * x[1]) + 0.1 * rng.standard_normal())
        lines.append(f"{float(x[0])!r},{float(x[1])!r},{y!r},0.01")
    path.write_text("\n".join(lines) + "\n")


def test_missing_config_exits_2(capsys):
    assert main(["bench", "run", "--config", "/nonexistent.json"]) == 2
    assert "config error" in capsys.readouterr().err


def test_bad_config_field_exits_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"algorithm": "simulated_annealing"}))
    assert main(["bench", "run", "--config", str(cfg)]) == 2


def test_non_object_config_exits_2(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2, 3]")
    assert main(["bench", "run", "--config", str(cfg)]) == 2


def test_bench_run_writes_deterministic_csv(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "function": "branin", "algorithm": "sobol_random", "q": 2,
        "iterations": 3, "trials": 2, "seed": 0,
    }))
    out1, out2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
    assert main(["bench", "run", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["bench", "run", "--config", str(cfg), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert out1.read_text().startswith("trial,iteration,algorithm")


def test_bench_convergence_writes_deterministic_csv(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "sizes": [16, 32], "modes": ["rqmc"], "replications": 2, "seed": 0,
    }))
    out1, out2 = tmp_path / "c1.csv", tmp_path / "c2.csv"
    assert main(["bench", "convergence", "--config", str(cfg),
                 "--out", str(out1)]) == 0
    assert main(["bench", "convergence", "--config", str(cfg),
                 "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_fit_and_suggest_roundtrip(tmp_path):
    data = tmp_path / "data.csv"
    _write_data_csv(data)
    model_path = tmp_path / "model.json"
    assert main(["fit", "--data", str(data), "--out", str(model_path),
                 "--restarts", "3"]) == 0
    doc = json.loads(model_path.read_text())
    assert doc["schema"] == 1

    for acqf in ("analytic_ei", "qei", "qucb"):
        assert main(["suggest", "--model", str(model_path), "--acqf", acqf,
                     "--bounds", "0:1,0:1"]) == 0


def test_suggest_deterministic_output(tmp_path, capsys):
    data = tmp_path / "data.csv"
    _write_data_csv(data, seed=1)
    model_path = tmp_path / "model.json"
    main(["fit", "--data", str(data), "--out", str(model_path), "--restarts", "2"])
    capsys.readouterr()
    main(["suggest", "--model", str(model_path), "--acqf", "qei",
          "--q", "2", "--bounds", "0:1,0:1", "--seed", "3"])
    first = capsys.readouterr().out
    main(["suggest", "--model", str(model_path), "--acqf", "qei",
          "--q", "2", "--bounds", "0:1,0:1", "--seed", "3"])
    assert capsys.readouterr().out == first
    rows = [line.split(",") for line in first.strip().splitlines()]
    assert len(rows) == 2
    for row in rows:
        for v in row:
            assert 0.0 <= float(v) <= 1.0


def test_suggest_errors(tmp_path):
    data = tmp_path / "data.csv"
    _write_data_csv(data, seed=2)
    model_path = tmp_path / "model.json"
    main(["fit", "--data", str(data), "--out", str(model_path), "--restarts", "2"])
    assert main(["suggest", "--model", str(model_path), "--acqf", "qhvkg"]) == 2
    assert main(["suggest", "--model", str(model_path), "--acqf", "analytic_ei",
                 "--q", "2"]) == 2
    assert main(["suggest", "--model", str(model_path), "--acqf", "qei",
                 "--bounds", "0:1"]) == 2
    assert main(["suggest", "--model", str(tmp_path / "nope.json"),
                 "--acqf", "qei"]) == 2


def test_fit_bad_data_exits_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["fit", "--data", str(bad), "--out", str(tmp_path / "m.json")]) == 2
