import argparse
import csv
import io
import subprocess
import sys

import pytest

from opamp_lab import cli, netlist as nl, opsolver

from conftest import FIXTURES

NETS = ["two_stage_180.sp", "two_stage_90.sp", "two_stage_45.sp"]


def read_csv(path):
    return list(csv.reader(io.StringIO(path.read_text())))


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_op_command(tmp_path):
    out = tmp_path / "op.csv"
    assert run("op", "--netlist", "circuits/two_stage_180.sp", "--out", out) == 0
    rows = read_csv(out)
    assert rows[0] == ["quantity", "object", "value", "unit"]
    power = [r for r in rows if r[0] == "power"][0]
    assert float(power[2]) == pytest.approx(107.88e-9, rel=5e-3) and power[3] == "W"


def test_op_to_stdout(capsys):
    assert run("op", "--netlist", "two_stage_45.sp") == 0
    assert capsys.readouterr().out.startswith("quantity,object,value,unit\n")


def test_ac_command(tmp_path):
    out = tmp_path / "bode.csv"
    assert run("ac", "--netlist", "two_stage_180.sp", "--out", out) == 0
    rows = read_csv(out)
    assert rows[0] == ["freq_hz", "mag_db", "phase_deg"]
    assert len(rows) == 1 + 1001
    metrics = {r[0]: float(r[1]) for r in read_csv(tmp_path / "bode_metrics.csv")[1:]}
    assert metrics["dc_gain"] > 50 and 45 < metrics["phase_margin"] < 90
    assert 10e3 < metrics["ugb"] < 100e3


def test_ac_sweep_override(tmp_path):
    out = tmp_path / "b.csv"
    assert run("ac", "--netlist", "two_stage_90.sp", "--sweep", "dec 10 1m 10meg", "--out", out) == 0
    assert len(read_csv(out)) == 1 + 101


def test_noise_command(tmp_path):
    out = tmp_path / "noise.csv"
    assert run("noise", "--netlist", "two_stage_180.sp", "--out", out, "--breakdown-at", "10,1000") == 0
    assert read_csv(out)[0] == ["freq_hz", "v_in_nv_per_rthz", "v_out_nv_per_rthz"]
    metrics = {r[0]: r[1] for r in read_csv(tmp_path / "noise_metrics.csv")[1:]}
    assert float(metrics["kf"]) == pytest.approx(FIXTURES["kf_1khz"]["180"], rel=1e-6)
    assert float(metrics["flicker_corner"]) == pytest.approx(1e3, rel=0.15)
    bd = read_csv(tmp_path / "noise_breakdown.csv")
    assert bd[0] == ["freq_hz", "element", "v_out_nv_per_rthz", "v_in_nv_per_rthz"]
    assert len(bd) == 1 + 2 * 9  # seven devices and two resistors per frequency


def test_noise_without_flicker_reports_na(tmp_path):
    out = tmp_path / "n.csv"
    assert run("noise", "--netlist", "two_stage_45.sp", "--kf", "0", "--out", out) == 0
    metrics = dict((r[0], r[1]) for r in read_csv(tmp_path / "n_metrics.csv")[1:])
    assert metrics["flicker_corner"] == "n/a"


def test_tran_bench(tmp_path):
    out = tmp_path / "tran.csv"
    assert run("tran", "--netlist", "two_stage_180.sp", "--bench", "--stop", "40e-6",
               "--dt", "20e-9", "--nodes", "out,inp", "--out", out) == 0
    rows = read_csv(out)
    assert rows[0] == ["t_s", "v(out)", "v(inp)"] and len(rows) == 1 + 2001
    slew = float(read_csv(tmp_path / "tran_metrics.csv")[1][1])
    assert 10e3 < slew < 20e3


def test_tran_card(tmp_path):
    net = tmp_path / "rc.sp"
    net.write_text("VIN in 0 DC 1\nR1 in out 1k\nC1 out 0 1n\n.tran 10n 1u\n.end\n")
    out = tmp_path / "w.csv"
    assert run("tran", "--netlist", net, "--out", out) == 0
    assert len(read_csv(out)) == 1 + 101
    assert not (tmp_path / "w_metrics.csv").exists()


@pytest.mark.filterwarnings("ignore:budget dissipates")
def test_design_and_scale(tmp_path):
    d = tmp_path / "d"
    assert run("design", "--goals", "goals_180.cfg", "--tech", "tech180.params", "-o", d) == 0
    rows = read_csv(d / "design.csv")
    values = {(r[0], r[1]): r[2] for r in rows[1:]}
    assert float(values[("capacitance", "CC")]) == pytest.approx(0.9516e-12, rel=1e-3)
    net = nl.parse((d / "design.sp").read_text())
    op = opsolver.solve_op(net)
    assert abs(op.drain_current("M6")) == pytest.approx(200.9e-9, rel=5e-3)
    s = tmp_path / "s"
    assert run("scale", "--design", d / "design.csv", "--factor", "2", "--tech", "tech90.params", "-o", s) == 0
    scaled = {(r[0], r[1]): r[2] for r in read_csv(s / "scaled.csv")[1:]}
    assert float(scaled[("width", "M1")]) == pytest.approx(float(values[("width", "M1")]) / 2)
    assert ("voltage", "VREF1") in scaled
    assert nl.parse((s / "scaled.sp").read_text())


@pytest.mark.filterwarnings("ignore:budget dissipates")
def test_scale_below_min_length_exit_code(tmp_path):
    d = tmp_path / "d"
    assert run("design", "--goals", "goals_180.cfg", "--tech", "tech180.params", "-o", d,
               "--no-calibrate") == 0
    assert run("scale", "--design", d / "design.csv", "--factor", "10", "--tech", "tech45.params",
               "-o", tmp_path / "s") == 5


def test_compare_report(tmp_path, monkeypatch):
    out = tmp_path / "r.csv"
    assert run("compare", "--netlists", *NETS, "--no-slew", "--out", out) == 0
    rows = read_csv(out)
    assert rows[0] == ["node", "dc_gain_db", "pm_deg", "ugb_hz", "power_nw", "slew_mv_per_us",
                       "noise_uv_rthz@10", "vdd_v", "cl_pf"]
    assert [r[0] for r in rows[1:]] == ["180nm", "90nm", "45nm"]
    for row, expected in zip(rows[1:], (107.9, 131.9, 140.4)):
        assert float(row[4]) == pytest.approx(expected, rel=5e-3)
        assert row[5] == "n/a"
        assert float(row[7]) == 0.5 and float(row[8]) == pytest.approx(10.0)
    # byte-identical on rerun, also when run serially
    monkeypatch.setenv("OPAMP_LAB_THREADS", "1")
    again = tmp_path / "r2.csv"
    assert run("compare", "--netlists", *NETS, "--no-slew", "--out", again) == 0
    assert again.read_bytes() == out.read_bytes()


def test_compare_with_slew(tmp_path):
    out = tmp_path / "r.csv"
    assert run("compare", "--netlists", "two_stage_180.sp", "--noise-freq", "100", "--out", out) == 0
    rows = read_csv(out)
    assert rows[0][6] == "noise_uv_rthz@100"
    assert 10 < float(rows[1][5]) < 20


def test_emit_report_na_and_order():
    text = cli.emit_report([{"node": "x", "power_nw": 1.5}, {"node": "y", "ugb_hz": 2e4}])
    lines = text.splitlines()
    assert lines[1] == "x,n/a,n/a,n/a,1.5,n/a,n/a,n/a,n/a"
    assert lines[2] == "y,n/a,n/a,20000.0,n/a,n/a,n/a,n/a,n/a"
    with pytest.raises(ValueError):
        cli.emit_report([])
    assert cli.fmt(-0.0) == "0.0"


def test_exit_codes(tmp_path, capsys):
    assert run("op", "--netlist", tmp_path / "missing.sp") == 2
    bad = tmp_path / "bad.sp"
    bad.write_text("R1 a 0 -5\n.end\n")
    assert run("op", "--netlist", bad) == 3
    err = capsys.readouterr().err
    assert f"\n{bad}:1:8: error: InvalidValue" in err
    floating = tmp_path / "float.sp"
    floating.write_text("V1 c 0 DC 1\nR0 c 0 1k\nR1 a b 1k\nC1 a 0 1p\nC2 b 0 1p\n.end\n")
    assert run("op", "--netlist", floating) == 4
    lowpass = tmp_path / "lp.sp"
    lowpass.write_text("VIN in 0 DC 0 AC 1\nR1 in out 1k\nC1 out 0 1n\n.end\n")
    assert run("ac", "--netlist", lowpass) == 5
    err = capsys.readouterr().err
    assert err.startswith("error:")


def test_unknown_flag_fails_loudly():
    with pytest.raises(SystemExit) as exc:
        run("op", "--netlist", "two_stage_180.sp", "--bogus")
    assert exc.value.code == 2


def test_help_documents_every_flag():
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    assert set(sub.choices) == {"op", "ac", "noise", "tran", "design", "scale", "compare"}
    for name, sp in sub.choices.items():
        text = sp.format_help()
        for action in sp._actions:
            for opt in action.option_strings:
                assert opt in text
            if action.option_strings and action.dest != "help":
                assert action.help, f"{name} {action.option_strings} lacks help"


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "opamp_lab.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("design", "op", "ac", "noise", "tran", "scale", "compare"):
        assert cmd in proc.stdout
