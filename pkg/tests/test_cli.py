import json

import numpy as np
import pytest

from airwaycpd.cli import main
from airwaycpd.series_prep import AreaSeries, write_area_csv


def _profile(n, seed=0):
    x = np.arange(n, dtype=float)
    return 20 + 3 * np.sin(x / 4 + seed) + 2 * np.cos(x / 7) + np.sin(x / 2)


def _write_csv(path, area):
    with open(path, "w", encoding="utf-8") as fh:
        write_area_csv(AreaSeries(np.arange(len(area), dtype=float), area), fh)
    return str(path)


def _write_json(path, rec):
    path.write_text(json.dumps(rec))
    return str(path)


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def step_json(tmp_path):
    y = np.r_[np.zeros(60), np.ones(60)] + 0.05 * np.random.default_rng(0).standard_normal(120)
    return _write_json(tmp_path / "step.json", {"n": 120, "x0": 0.0, "y": y.tolist()})


def test_align_identical(tmp_path, capsys):
    a = _profile(80)
    code, out, _ = _run(capsys, "align", _write_csv(tmp_path / "b.csv", a),
                        _write_csv(tmp_path / "f.csv", a))
    rec = json.loads(out)
    assert code == 0 and rec["shift_a"] == 0 and rec["n"] == 80
    assert rec["y"] == [0.0] * 80


def test_align_recovers_shift(tmp_path, capsys):
    full = _profile(100)
    b = _write_csv(tmp_path / "b.csv", full[5:95])
    f = _write_csv(tmp_path / "f.csv", full[8:98])
    code, out, _ = _run(capsys, "align", b, f)
    assert code == 0 and json.loads(out)["shift_a"] == 3


def test_malformed_csv_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("arc_length_mm,area_mm2\n0,1\n1,oops\n")
    good = _write_csv(tmp_path / "g.csv", _profile(80))
    code, out, err = _run(capsys, "align", bad, good)
    assert code == 2 and out == ""
    msg = json.loads(err)
    assert msg["error"] == "ParseError" and "line 3" in msg["message"]


def test_missing_file_exit_2(tmp_path, capsys):
    code, _, err = _run(capsys, "detect", tmp_path / "nope.json")
    assert code == 2 and json.loads(err)["error"] == "FileNotFoundError"


def test_zero_iterations_is_usage_error(step_json, capsys):
    code, out, _ = _run(capsys, "detect", step_json, "--iterations", "0")
    assert code == 2 and out == ""


def test_detect_rjmh_deterministic(step_json, tmp_path, capsys):
    args = ("detect", step_json, "--iterations", "20000", "--seed", "7")
    _, first, _ = _run(capsys, *args)
    _, second, _ = _run(capsys, *args)
    assert first == second
    rec = json.loads(first)
    assert rec["status"] == "call" and abs(rec["point_mm"] - 60) <= 2
    assert rec["diagnostics"]["config"]["seed"] == 7


def test_detect_trace_and_manifest(step_json, tmp_path, capsys):
    trace, manifest = tmp_path / "t.jsonl", tmp_path / "m.json"
    code, _, _ = _run(capsys, "detect", step_json, "--iterations", "1000",
                      "--trace", trace, "--manifest", manifest)
    assert code == 0
    lines = trace.read_text().splitlines()
    assert len(lines) == (1000 - 250) // 5
    assert {"iter", "m", "tau", "segments"} <= set(json.loads(lines[0]))
    m = json.loads(manifest.read_text())
    assert m["command"] == "detect" and m["seed"] == 0 and "finished" in m


def test_detect_lavielle_distal_changepoint(tmp_path, capsys):
    y = np.r_[np.zeros(40), 2 * np.ones(40), np.zeros(40)]
    path = _write_json(tmp_path / "y.json", {"y": y.tolist()})
    code, out, _ = _run(capsys, "detect", path, "--method", "lavielle")
    rec = json.loads(out)
    assert code == 0 and rec["method"] == "penalized_cost"
    assert rec["point_mm"] == 80 and rec["changepoints"] == [40, 80]


def test_detect_threshold_no_call(tmp_path, capsys):
    path = _write_json(tmp_path / "flat.json", {"y": [0.1] * 50})
    code, out, _ = _run(capsys, "detect", path, "--method", "threshold")
    rec = json.loads(out)
    assert code == 0 and rec["status"] == "no_call" and rec["point_mm"] is None


def test_detect_offsets_by_origin(tmp_path, capsys):
    y = np.r_[np.zeros(40), 2 * np.ones(40), np.zeros(40)]
    path = _write_json(tmp_path / "y.json", {"y": y.tolist(), "x0": 5.0})
    _, out, _ = _run(capsys, "detect", path, "--method", "lavielle")
    assert json.loads(out)["point_mm"] == 85


def test_simulate_one_cell(tmp_path, capsys):
    code, out, _ = _run(capsys, "simulate", "--airways", 1, "--alphas", 20, "--magnitudes", 2.0,
                        "--detectors", "threshold")
    lines = out.splitlines()
    assert code == 0 and len(lines) == 2
    assert lines[1].startswith("20,2.00,threshold,")


def test_simulate_rerun_identical(capsys):
    args = ("simulate", "--airways", 2, "--alphas", "15,25", "--magnitudes", "1.5",
            "--detectors", "rjmh,lavielle", "--iterations", 3000, "--seed", 4)
    _, a, _ = _run(capsys, *args)
    _, b, _ = _run(capsys, *args)
    assert a == b and len(a.splitlines()) == 1 + 2 * 2


def test_simulate_full_grid_row_count(capsys):
    # cheap detectors only; the rjmh rows follow the same grid arithmetic
    code, out, _ = _run(capsys, "simulate", "--airways", 14,
                        "--detectors", "threshold,penalized_cost")
    assert code == 0 and len(out.splitlines()) == 1 + 7 * 11 * 2


def test_simulate_bad_alpha(capsys):
    code, _, _ = _run(capsys, "simulate", "--airways", 1, "--length", 30, "--alphas", 40)
    assert code == 2


def test_evaluate_directory(tmp_path, capsys):
    d = tmp_path / "airways"
    d.mkdir()
    rng = np.random.default_rng(1)
    for i in range(2):
        _write_json(d / f"a{i}.json", {"y": (0.1 * rng.standard_normal(100)).tolist()})
    raw = tmp_path / "raw.json"
    code, out, _ = _run(capsys, "evaluate", d, "--alphas", 20, "--magnitudes", "2.0",
                        "--detectors", "penalized_cost", "--raw", raw)
    assert code == 0 and len(out.splitlines()) == 2
    rec = json.loads(raw.read_text())
    assert rec["airways"] == ["a0", "a1"]
    assert len(rec["cells"][0]["displacements_mm"]) == 2


def test_evaluate_empty_dir(tmp_path, capsys):
    code, _, _ = _run(capsys, "evaluate", tmp_path)
    assert code == 2


@pytest.fixture
def pair_json(tmp_path, capsys):
    a = _profile(80)
    b = _write_csv(tmp_path / "b.csv", a)
    f = _write_csv(tmp_path / "f.csv", a)
    out = tmp_path / "pair.json"
    assert main(["align", b, f, "-o", str(out)]) == 0
    capsys.readouterr()
    return str(out)


def test_volume_identical_pair(pair_json, capsys):
    code, out, _ = _run(capsys, "volume", pair_json, "--t", 40, "--name", "x")
    assert code == 0
    assert out.splitlines() == ["airway,pvc_total,pvc_post,pvc_pre", "x,0.0,0.0,0.0"]


def test_volume_dilated_tail(tmp_path, capsys):
    b = [10.0] * 101
    f = [10.0] * 71 + [20.0] * 30
    path = _write_json(tmp_path / "tail.json",
                       {"n": 101, "x0": 0.0, "baseline_area": b, "followup_area": f})
    code, out, _ = _run(capsys, "volume", path, "--t", 70)
    assert code == 0 and out.splitlines()[1] == "tail,29.5,98.3,0.0"


@pytest.mark.parametrize("t", [79, 120, 0])
def test_volume_t_outside_exit_2(pair_json, capsys, t):
    code, _, _ = _run(capsys, "volume", pair_json, "--t", t)
    assert code == 2
