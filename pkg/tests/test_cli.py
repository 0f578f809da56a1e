import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from gen import LAM_D, LAM_R, MU_E, speed_profile
from phevplan import io as pio
from phevplan.calibrate import TRACE_COLUMNS, synthetic_trace
from phevplan.cli import emit_sweep, main
from phevplan.model import FuelCurve
from phevplan.online import run_online
from phevplan.samples import diamond_network, sample_instance


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def instance_file(tmp_path):
    path = tmp_path / "trip.json"
    path.write_text(pio.dumps(pio.instance_to_dict(sample_instance())))
    return path


@pytest.fixture
def diamond_file(tmp_path):
    path = tmp_path / "diamond.json"
    path.write_text(pio.dumps(pio.network_to_dict(diamond_network())))
    return path


def test_sample_round_trips(capsys):
    code, out, _ = _run(capsys, "sample", "instance")
    assert code == 0
    assert pio.instance_from_dict(json.loads(out)).horizon == 12


def test_optimize_reports_fuel_and_benchmark(capsys, instance_file):
    code, out, err = _run(capsys, "optimize", str(instance_file), "--grid", "201")
    res = json.loads(out)
    assert code == 0 and "total fuel" in err
    assert res["total_fuel"] <= res["cs_benchmark"] + 1e-12
    assert set(res["mode_ratios"]) == {"EV", "CE", "CS", "AP"}


def test_csv_output(capsys, instance_file):
    code, out, _ = _run(capsys, "simulate", str(instance_file), "--modes", "CE", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 12 and {r["mode"] for r in rows} == {"CE"}


def test_approx_is_no_better_than_optimum(capsys, instance_file):
    _, out, _ = _run(capsys, "optimize", str(instance_file), "--grid", "401")
    opt = json.loads(out)["total_fuel"]
    code, out, _ = _run(capsys, "approx", str(instance_file))
    res = json.loads(out)
    assert code == 0 and res["lower_bound"] <= opt + 1e-6


def test_exit_codes(capsys, tmp_path, instance_file):
    bad = tmp_path / "bad.json"
    bad.write_text('{"P_plus": [1], "B_hi": 5, "B0": 1}')
    code, _, err = _run(capsys, "optimize", str(bad))
    assert code == 1 and "fuel_curve" in err
    code, _, err = _run(capsys, "optimize", str(tmp_path / "missing.json"))
    assert code == 1
    code, _, err = _run(capsys, "optimize", str(instance_file), "--terminal-soc", "10", "--grid", "11")
    assert code in (0, 2)
    stuck = tmp_path / "stuck.json"
    stuck.write_text(json.dumps({"P_plus": [50, 50], "fuel_curve": [0, 1, 0], "B_hi": 5,
                                 "B0": 0, "G0": 1}))
    code, _, err = _run(capsys, "optimize", str(stuck))
    assert code == 2 and err.startswith("INFEASIBLE")


def test_plan_exact_then_approx(capsys, diamond_file):
    code, out, _ = _run(capsys, "plan-exact", str(diamond_file))
    exact = json.loads(out)
    assert code == 0
    code, out, err = _run(capsys, "plan-approx", str(diamond_file))
    approx = json.loads(out)
    assert code == 0 and "route" in err
    assert approx["cost"] >= exact["cost"] - 1e-9
    assert approx["lower_bound"] <= exact["cost"] + 1e-6


def test_plan_on_sample_network(capsys, tmp_path):
    path = tmp_path / "net.json"
    assert _run(capsys, "sample", "network", "--out", str(path))[0] == 0
    code, out, _ = _run(capsys, "plan", str(path), "--grid", "11")
    assert code == 0 and json.loads(out)["route"] == ["S", "H", "D"]


def test_online_stream_matches_batch(capsys, tmp_path):
    inst = sample_instance()
    head = pio.instance_to_dict(inst)
    for key in ("P_plus", "P_minus", "T", "eta_r", "eta_d", "eta_e", "C", "beta"):
        head.pop(key, None)
    lines = [json.dumps(head)]
    for t in range(inst.horizon):
        c = inst.coeffs(t)
        lines.append(json.dumps({"P_plus": float(inst.p_plus[t]), "P_minus": float(inst.p_minus[t]),
                                 "eta_r": c.eta_r, "eta_d": c.eta_d, "eta_e": c.eta_e,
                                 "C": c.engine_charge_cap_w, "beta": c.ap_split}))
    path = tmp_path / "stream.jsonl"
    path.write_text("\n".join(lines) + "\n")
    code, out, _ = _run(capsys, "online", str(path))
    got = [json.loads(line) for line in out.splitlines()]
    want = run_online(inst).transitions
    assert code == 0 and len(got) == inst.horizon
    assert [g["mode"] for g in got] == [tr.mode.value for tr in want]
    assert [g["fuel"] for g in got] == [tr.fuel_used for tr in want]


def test_online_accepts_whole_instance(capsys, instance_file):
    code, out, _ = _run(capsys, "online", str(instance_file))
    assert code == 0 and len(out.splitlines()) == 12


def test_online_bad_line(capsys, tmp_path):
    path = tmp_path / "s.jsonl"
    path.write_text('{"B_hi": 10, "B0": 1, "fuel_curve": [0, 1, 0]}\n{"P_plus": 1}\nnot json\n')
    code, _, err = _run(capsys, "online", str(path))
    assert code == 1 and "line 3" in err


def test_calibrate_command(capsys, tmp_path):
    tr = synthetic_trace(speed_profile(np.random.default_rng(1)), LAM_D, LAM_R, MU_E,
                         FuelCurve(0.01, 0.1, 0.05), charge_power=2000.0)
    path = tmp_path / "trace.csv"
    cols = np.column_stack([getattr(tr, c) for c in TRACE_COLUMNS])
    path.write_text(",".join(TRACE_COLUMNS) + "\n"
                    + "\n".join(",".join(repr(float(v)) for v in row) for row in cols) + "\n")
    code, out, _ = _run(capsys, "calibrate", str(path))
    res = json.loads(out)
    assert code == 0
    assert res["efficiency"]["discharge"]["coeffs"]["bias"] == pytest.approx(LAM_D[-1], rel=1e-6)
    assert res["fuel_curve"]["gamma2"] == pytest.approx(0.01, rel=1e-6)


def test_sweep_rows_and_order(capsys, instance_file):
    code, out, _ = _run(capsys, "sweep", str(instance_file), "--b0", "0,5,10", "--grid", "101")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 6
    assert [(r["B0"], r["solver"]) for r in rows] == [
        (b, s) for b in ("0.0", "5.0", "10.0") for s in ("opt", "cs")]
    for opt, cs in zip(rows[::2], rows[1::2]):
        assert float(opt["fuel"]) <= float(cs["fuel"]) + 1e-12


def test_sweep_threads_do_not_change_output():
    inst = sample_instance()
    one = emit_sweep(inst, [0.0, 4.0, 8.0], ("opt", "cs", "online"), 51, threads=1)
    many = emit_sweep(inst, [0.0, 4.0, 8.0], ("opt", "cs", "online"), 51, threads=4)
    assert one == many


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "phevplan", "sample", "diamond"],
                         capture_output=True, text=True, check=True)
    assert pio.network_from_dict(json.loads(res.stdout)).stop_budget == 2
