import csv
import json
import math
import os

import numpy as np
import pytest

from randstop.cli import main
from randstop.construct import unconstrained_threshold_bm

from conftest import Z_TILDE_HALF_SQ


def run(tmp_path, *args):
    out = tmp_path / "out"
    code = main(list(args) + ["--out", str(out)])
    return code, out


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_construct_free_boundary(tmp_path):
    code, out = run(tmp_path, "construct", "--r", "0.01", "--T", "10")
    doc = json.loads((out / "construction.json").read_text())
    res = doc["result"]
    assert code == 0 and doc["schemaVersion"] == 1 and res["case"] == "FreeBoundary"
    b, a = res["boundaryData"]["b_star"], res["boundaryData"]["a_star"]
    assert b > math.sqrt(10) and abs(a - (b - math.sqrt(10))) <= 1e-8
    head, e = read_csv(out / "e.csv")
    assert head == ["x", "e"] and e.shape[1] == 2
    assert read_csv(out / "J.csv")[0] == ["x", "J", "g"]


def test_construct_unconstrained(tmp_path):
    code, out = run(tmp_path, "construct", "--r", "0.01", "--T", "100")
    assert code == 0
    assert json.loads((out / "construction.json").read_text())["result"]["case"] == "Unconstrained"


def test_verify_square_payoff_pure_interval(tmp_path, capsys):
    code, out = run(tmp_path, "verify", "--problem", "bm-square", "--r", "0", "--intervals", "(-1, 0.5)")
    doc = json.loads((out / "verification.json").read_text())
    assert code == 2
    failing = [c["name"] for c in doc["sufficient"]["conditions"] if not c["passed"]]
    assert "(iii)" in failing
    assert doc["regularity"]["passed"]


def test_fields_for_given_strategy(tmp_path):
    code, out = run(tmp_path, "fields", "--r", "0.5", "--T", "2", "--intervals", "(-1, 1)", "--n-grid", "256")
    head, e = read_csv(out / "e.csv")
    inside = np.abs(e[:, 0]) < 1
    assert code == 0 and np.allclose(e[inside, 1], 1 - e[inside, 0] ** 2, atol=1e-10)
    assert (out / "fields.json").exists()


def test_csv_is_crlf(tmp_path):
    code, out = run(tmp_path, "fields", "--r", "0.5", "--intervals", "(-1, 1)", "--n-grid", "64")
    raw = (out / "e.csv").read_bytes()
    assert raw.startswith(b"x,e\r\n") and b"\n" not in raw.replace(b"\r\n", b"")


def test_simulate_and_occupation(tmp_path):
    code, out = run(tmp_path, "simulate", "--r", "0", "--paths", "2000", "--x0", "0, 0.5", "--format", "csv")
    doc = json.loads((out / "simulation.json").read_text())
    assert code == 0 and [r["x0"] for r in doc["estimates"]] == [0.0, 0.5]
    assert read_csv(out / "simulation.csv")[1].shape == (2, 8)
    code, out = run(tmp_path, "occupation", "--paths", "1000", "--h", "0.05")
    assert code == 0 and json.loads((out / "occupation.json").read_text())["estimates"][0]["n"] == 1000


def test_figure_data_r0(tmp_path):
    code, out = run(tmp_path, "figure-data", "--r", "0", "--T-list", "1, 4, 9")
    assert code == 0
    for T in (1, 4, 9):
        _, data = read_csv(out / f"figure_T{T}.csv")
        zero = data[np.argmin(np.abs(data[:, 0]))]
        assert zero[0] == 0.0 and zero[2] == pytest.approx(math.sqrt(T / 2), rel=1e-3)


def test_figure_data_increasing_in_horizon(tmp_path):
    Ts = [5, 10, 20, 35, 50]
    code, out = run(tmp_path, "figure-data", "--r", "0.01", "--T-list", ", ".join(map(str, Ts)))
    curves = [read_csv(out / f"figure_T{T}.csv")[1][:, 2] for T in Ts]
    assert code == 0
    for lo, hi in zip(curves, curves[1:]):
        assert np.all(hi >= lo - 1e-9)


def test_figure_data_unconstrained_matches_cosh(tmp_path):
    r, T = 0.5, 2.0
    assert r * T >= Z_TILDE_HALF_SQ
    code, out = run(tmp_path, "figure-data", "--r", str(r), "--T-list", str(T))
    _, data = read_csv(out / f"figure_T{T:g}.csv")
    xt = unconstrained_threshold_bm(r)
    x = data[:, 0]
    k = math.sqrt(2 * r)
    exact = np.where(np.abs(x) < xt, xt * np.cosh(k * x) / math.cosh(k * xt), np.abs(x))
    assert np.max(np.abs(data[:, 2] - exact)) < 1e-5


def test_identical_runs_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main(["simulate", "--r", "0.5", "--paths", "3000", "--seed", "7", "--out", str(out)]) == 0
        assert main(["construct", "--r", "0.5", "--T", "1", "--out", str(out)]) == 0
        outs.append({p: (out / p).read_bytes() for p in sorted(os.listdir(out))})
    assert outs[0] == outs[1]


def test_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[problem]\nname = two-well\nr = 0.72\nT = 1\n[run]\nn_grid = 1024\n")
    assert main(["construct", "--config", str(cfg), "--set", "run.n_grid=512", "--print-config"]) == 0
    text = capsys.readouterr().out
    assert "name = two-well" in text and "n_grid = 512" in text and "mode = construct" in text


def test_errors_exit_one(tmp_path, capsys):
    assert main(["construct", "--problem", "nope", "--out", str(tmp_path)]) == 1
    assert "not in" in capsys.readouterr().err
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nspeed = 3\n")
    assert main(["construct", "--config", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["construct", "--set", "nodot=1"]) == 1
    assert main(["construct", "--problem", "custom", "--payoff", "1/(1+x*x)", "--r", "0.5",
                 "--out", str(tmp_path)]) == 1


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RANDSTOP_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["fields", "--r", "0.5", "--intervals", "(-1, 1)", "--n-grid", "64"]) == 0
    assert (tmp_path / "env" / "e.csv").exists()
