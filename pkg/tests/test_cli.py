import csv
import json
import math

import pytest

import oracles
from hybridvqe.cli import main, point_seed


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_model_z2(capsys):
    code, out, _ = _run(capsys, "model", "z2", "--lambda", "2")
    data = json.loads(out)
    assert code == 0
    assert data["E0"] == pytest.approx(-2.8284271, abs=1e-7)
    assert data["n_qubits"] == 4


def test_model_pc_code_point(capsys):
    code, out, _ = _run(capsys, "model", "pc", "--m", "2", "--n", "1", "--xi", "0")
    assert code == 0 and json.loads(out)["E0"] == pytest.approx(-8.0)


def test_model_lih_lists_all_terms(capsys):
    code, out, _ = _run(capsys, "model", "lih")
    assert code == 0 and len(json.loads(out)["terms"]) == 100


def test_unknown_model(capsys):
    code, _, err = _run(capsys, "model", "ising")
    assert code == 2 and "unknown model" in err


def test_pattern_gadget(capsys):
    code, out, _ = _run(capsys, "pattern", "gadget", "--n", "3", "--axis", "ZZZ")
    assert code == 0
    assert out.splitlines()[0] == "# 4 qubits -> 4 qubits"
    assert "CZ" in out


def test_pattern_gadget_verify(capsys):
    code, out, _ = _run(capsys, "pattern", "gadget", "--n", "1", "--axis", "Z", "--verify")
    assert code == 0 and "verify: PASS" in out


def test_pattern_reduce_builtin(capsys):
    code, out, _ = _run(capsys, "pattern", "reduce", "zzz15", "--verify")
    assert code == 0
    assert out.splitlines()[0] == "# 15 qubits -> 4 qubits"
    assert "verify: PASS" in out


def test_pattern_missing_file(capsys):
    code, _, err = _run(capsys, "pattern", "reduce", "nope.pat")
    assert code == 2 and "no such pattern" in err


def test_pattern_malformed_file(tmp_path, capsys):
    bad = tmp_path / "bad.pat"
    bad.write_text("QUBITS\n1 input\nMEASURE\n1 W\n")
    code, _, _ = _run(capsys, "pattern", "reduce", str(bad))
    assert code == 2


def test_vqe_writes_record_and_csv(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": "z2", "optimizer": {"max_iters": 30}, "seed": 4}))
    out = tmp_path / "out"
    code, _, _ = _run(capsys, "vqe", str(cfg), "--value", "2.0", "-o", str(out))
    assert code == 0
    rec = json.loads((out / "point_000.json").read_text())
    assert rec["config"]["model"] == "z2" and rec["config"]["param"] == 2.0
    (row,) = _rows(out / "summary.csv")
    assert list(row) == ["param", "E_vqe", "sigma", "E0", "E1", "E2", "rel_err", "fidelity", "iters", "seed"]
    assert float(row["E0"]) == pytest.approx(-math.sqrt(8))


def test_vqe_shot_mode_with_noise(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": "z2", "value": 1.0, "shots": 400, "optimizer": {"max_iters": 5},
                               "noise": {"depolarizing": 0.01, "readout": [0.02, 0.02]},
                               "mitigation": {"readout": True, "calibration_shots": 500}}))
    code, _, _ = _run(capsys, "vqe", str(cfg), "-o", str(tmp_path / "o"))
    (row,) = _rows(tmp_path / "o" / "summary.csv")
    assert code == 0 and float(row["sigma"]) > 0


def test_sweep_is_reproducible(tmp_path, capsys):
    argv = ["sweep", "--model", "z2", "--grid", "0.5,2.0", "--seed", "3"]
    for name in ("a", "b"):
        assert _run(capsys, *argv, "-o", str(tmp_path / name))[0] == 0
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    rows = _rows(tmp_path / "a" / "summary.csv")
    assert [int(r["seed"]) for r in rows] == [point_seed(3, 0), point_seed(3, 1)]
    for r in rows:
        gap = float(r["E1"]) - float(r["E0"])
        assert float(r["rel_err"]) == pytest.approx(abs(float(r["E_vqe"]) - float(r["E0"])) / gap)


def test_sweep_with_workers_matches_serial(tmp_path, capsys):
    argv = ["sweep", "--model", "z2", "--grid", "0.5,1.0,2.0", "--seed", "1"]
    assert _run(capsys, *argv, "-o", str(tmp_path / "s"))[0] == 0
    assert _run(capsys, *argv, "--workers", "2", "-o", str(tmp_path / "p"))[0] == 0
    assert (tmp_path / "s" / "summary.csv").read_text() == (tmp_path / "p" / "summary.csv").read_text()


def test_empty_grid_is_a_config_error(tmp_path, capsys):
    cfg = tmp_path / "empty.json"
    cfg.write_text(json.dumps({"model": "z2", "grid": []}))
    code, _, err = _run(capsys, "sweep", str(cfg), "-o", str(tmp_path / "o"))
    assert code == 2 and "grid" in err


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "broken.json"
    cfg.write_text("{not json")
    assert _run(capsys, "vqe", str(cfg), "-o", str(tmp_path))[0] == 2
    cfg.write_text(json.dumps({"model": "z2", "gap": "E3-E0"}))
    assert _run(capsys, "vqe", str(cfg), "-o", str(tmp_path))[0] == 2


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HYBRIDVQE_SEED", "17")
    assert _run(capsys, "vqe", "--model", "z2", "-o", str(tmp_path))[0] == 0
    (row,) = _rows(tmp_path / "summary.csv")
    assert int(row["seed"]) == point_seed(17, 0)


def test_selftest(capsys):
    code, out, _ = _run(capsys, "selftest")
    assert code == 0
    assert out.count("PASS") == 5 and "FAIL" not in out


def test_z2_sweep_shows_crossover(tmp_path, capsys):
    grid = ",".join(str(v) for v in oracles.Z2_LAMBDA)
    assert _run(capsys, "sweep", "--model", "z2", f"--grid={grid}", "--workers", "4", "-o", str(tmp_path))[0] == 0
    obs = [json.loads((tmp_path / f"point_{i:03d}.json").read_text())["observables"] for i in range(10)]
    plaquette_wins = [abs(o["plaquette"]) > abs(o["field"]) for o in obs]
    first = plaquette_wins.index(True)
    assert all(plaquette_wins[first:]) and not any(plaquette_wins[:first])
    assert 1.5 <= oracles.Z2_LAMBDA[first] <= 2.5


def test_su3_sweep_number_transition(tmp_path, capsys):
    grid = ",".join(str(v) for v in oracles.SU3_MASS)
    assert _run(capsys, "sweep", "--model", "su3", f"--grid={grid}", "--workers", "4", "-o", str(tmp_path))[0] == 0
    n = [json.loads((tmp_path / f"point_{i:03d}.json").read_text())["observables"]["N"] for i in range(10)]
    assert n[0] == pytest.approx(6, abs=0.3) and n[-1] == pytest.approx(0, abs=0.3)
    assert all(a >= b for a, b in zip(n, n[1:]))
    half = [m for m, v in zip(oracles.SU3_MASS, n) if v < 3][0]
    assert -0.2 <= half <= 0.2
