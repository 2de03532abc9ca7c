from __future__ import annotations

import csv
import json
import math
import subprocess
import sys

import mpmath
import pytest

from qloz.asymptotics import hexagon, save_profile
from qloz.cli import main
from qloz.lattice import read_jsonl, validate_interlacing


@pytest.fixture
def hexfile(tmp_path):
    path = tmp_path / "hexagon.json"
    save_profile(hexagon(), path)
    return path


def test_sample_hexagon_and_determinism(tmp_path, hexfile):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        argv = ["sample", "--profile", str(hexfile), "--gamma", "1", "--N", "50", "--M", "100",
                "--seed", "7", "--out", str(out)]
        assert main(argv) == 0
        outs.append((out / "samples.jsonl").read_bytes())
    assert outs[0] == outs[1]
    lines = outs[0].decode().splitlines()
    assert len(lines) == 100
    arrs = read_jsonl(tmp_path / "a" / "samples.jsonl")
    assert all(validate_interlacing(a)[0] and a.depth == 50 for a in arrs)
    man = json.loads((tmp_path / "a" / "sample.manifest.json").read_text())
    assert man["config"]["seed"] == 7 and man["count"] == 100


def test_sample_threads_do_not_change_output(tmp_path):
    res = []
    for t in (1, 2):
        out = tmp_path / f"t{t}"
        assert main(["sample", "--nu", "3,1,0,0", "--gamma", "1", "--M", "2100", "--seed", "3",
                     "--threads", str(t), "--out", str(out)]) == 0
        res.append((out / "samples.jsonl").read_bytes())
    assert res[0] == res[1]


def test_manifest_reproduces_run(tmp_path, hexfile):
    a = tmp_path / "a"
    assert main(["sample", "--profile", str(hexfile), "--gamma", "0.5", "--N", "12", "--M", "20",
                 "--seed", "4", "--method", "glauber", "--burn-in", "500", "--thinning", "20",
                 "--out", str(a)]) == 0
    b = tmp_path / "b"
    assert main(["sample", "--config", str(a / "sample.manifest.json"), "--out", str(b)]) == 0
    assert (a / "samples.jsonl").read_bytes() == (b / "samples.jsonl").read_bytes()


def test_config_precedence(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"gamma": 1.0, "nu": "2,1,0", "M": 7, "seed": 2}))
    out = tmp_path / "o"
    assert main(["sample", "--config", str(conf), "--M", "3", "--out", str(out)]) == 0
    assert len((out / "samples.jsonl").read_text().splitlines()) == 3
    man = json.loads((out / "sample.manifest.json").read_text())
    assert man["config"]["seed"] == 2 and man["config"]["gamma"] == 1.0


def test_sample_missing_profile(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = main(["sample", "--profile", str(missing), "--gamma", "1", "--N", "10",
                 "--out", str(tmp_path)])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_sample_infeasible_method(tmp_path):
    code = main(["sample", "--nu", "30,20,10,0,0,0", "--gamma", "1", "--method", "enumeration",
                 "--M", "1", "--out", str(tmp_path)])
    assert code == 2


def test_sample_marginal_method(tmp_path):
    assert main(["sample", "--nu", "3,3,1,0,0,-1", "--gamma", "1", "--method", "marginal", "--K",
                 "2", "--M", "50", "--out", str(tmp_path)]) == 0
    rows = [json.loads(s) for s in (tmp_path / "samples.jsonl").read_text().splitlines()]
    assert len(rows) == 50 and rows[0]["K"] == 2 and [len(r) for r in rows[0]["rows"]] == [1, 2]


def test_marginal_two_row_csv(tmp_path, capsys):
    assert main(["marginal", "--nu", "1,0", "--gamma", "1", "--K", "1", "--out", str(tmp_path)]) == 0
    assert "mass deficit" in capsys.readouterr().out
    rows = list(csv.reader(open(tmp_path / "marginal_K1.csv")))
    assert len(rows) == 3
    with mpmath.workprec(128):
        q = mpmath.exp(mpmath.mpf(-1) / 2)
        got = {r[0]: mpmath.mpf(r[1]) for r in rows[1:]}
        assert abs(got["0"] - 1 / (1 + q)) < 1e-30
        assert abs(got["1"] - q / (1 + q)) < 1e-30
        assert abs(sum(got.values()) - 1) < 1e-30


def test_marginal_k_too_large(tmp_path, capsys):
    assert main(["marginal", "--nu", "2,1,0", "--gamma", "1", "--K", "3", "--out", str(tmp_path)]) == 2
    assert "K" in capsys.readouterr().err


def test_asymptotics_descent_example(tmp_path):
    prof = tmp_path / "p.json"
    prof.write_text(json.dumps({"kind": "piecewise", "s": [0, 0.75, 1], "alpha": [1, 0]}))
    assert main(["asymptotics", "--profile", str(prof), "--gamma", "1.5", "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "asymptotics.json").read_text())
    assert 0.223 < res["contour_crossing"] < 1
    rows = list(csv.reader(open(tmp_path / "contour.csv")))
    assert rows[0] == ["re_w", "im_w", "re_S", "im_S"]
    last = rows[-1]
    assert float(last[1]) == 0 and math.exp(-1.5) < float(last[0]) < 1
    assert res["critical_points"] == []


def test_asymptotics_tiny_gamma(tmp_path, hexfile):
    assert main(["asymptotics", "--profile", str(hexfile), "--gamma", "1e-3", "--no-contour",
                 "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "asymptotics.json").read_text())
    assert abs(res["u"] - 0.5) < 1e-3


def test_asymptotics_increasing_profile(tmp_path):
    prof = tmp_path / "bad.json"
    prof.write_text(json.dumps({"kind": "piecewise", "s": [0, 0.5, 1], "alpha": [0, 1]}))
    assert main(["asymptotics", "--profile", str(prof), "--gamma", "1", "--out", str(tmp_path)]) == 2


def test_q_is_rejected(tmp_path, capsys):
    assert main(["asymptotics", "--q", "0.9", "--gamma", "1", "--out", str(tmp_path)]) == 2
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"q": 0.9}))
    assert main(["asymptotics", "--config", str(conf), "--out", str(tmp_path)]) == 2
    assert "gamma" in capsys.readouterr().err


def test_render_outputs(tmp_path, hexfile):
    assert main(["render", "tiling", "--input", "example", "--out", str(tmp_path)]) == 0
    svg = (tmp_path / "tiling.svg").read_text()
    assert svg.count('fill="#d95f02"') == 21
    first = (tmp_path / "tiling.svg").read_bytes()
    assert main(["render", "tiling", "--input", "example", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "tiling.svg").read_bytes() == first
    assert main(["render", "tiling", "--nu", "2,2,2", "--out", str(tmp_path)]) == 0
    assert main(["render", "contour", "--profile", str(hexfile), "--gamma", "1", "--grid", "30",
                 "--out", str(tmp_path)]) == 0
    assert "<polyline" in (tmp_path / "contour.svg").read_text()
    assert main(["sample", "--profile", str(hexfile), "--gamma", "1", "--N", "20", "--M", "200",
                 "--out", str(tmp_path)]) == 0
    assert main(["render", "histogram", "--profile", str(hexfile), "--gamma", "1",
                 "--input", str(tmp_path / "samples.jsonl"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "histogram.svg").exists()
    assert main(["render", "tiling", "--input", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) == 1


def test_no_stray_temp_files(tmp_path):
    assert main(["marginal", "--nu", "2,1,0", "--gamma", "1", "--K", "2", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["marginal.manifest.json", "marginal_K2.csv"]


def test_verify_exact_suite(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qloz.cli", "verify", "--suite", "exact",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    report = json.loads((tmp_path / "verify_exact.json").read_text())
    assert report["passed"] and len(report["checks"]) >= 8
    assert all(line.startswith("PASS") for line in proc.stdout.splitlines())
