import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from opamp_lab import acengine, netlist as nl
from opamp_lab.acengine import SmallSignalBuilder, ac_sweep, bode_metrics, linearize, phase_unwrap
from opamp_lab.designer import macromodel
from opamp_lab.errors import AnalysisError, NoCrossing
from opamp_lab.netlist import AcDec

from conftest import bundled_op, load_bundled
from oracles import symbolic_macromodel


def rc_lowpass(r=1e3, c=1e-9):
    return nl.parse(f"VIN in 0 DC 0 AC 1\nR1 in out {r}\nC1 out 0 {c}\n.end")


def test_rc_lowpass_corner():
    net = rc_lowpass()
    from opamp_lab.opsolver import solve_op

    lin = linearize(net, solve_op(net))
    fc = 1 / (2 * math.pi * 1e3 * 1e-9)
    r = ac_sweep(lin, np.array([fc]))
    assert r.magnitude_db[0] == pytest.approx(-3.0103, abs=0.01)
    assert r.phase_deg[0] == pytest.approx(-45.0, abs=0.05)
    far = ac_sweep(lin, AcDec(10, fc, fc * 1e6))
    assert far.phase_deg[-1] == pytest.approx(-90.0, abs=1e-3)
    assert np.all(np.diff(far.phase_deg) < 0)


def test_resistor_stamp_rows_sum_to_zero():
    net = nl.parse("VIN a 0 DC 0 AC 1\nR1 a b 2k\nR2 b 0 2k\n.end")
    from opamp_lab.opsolver import solve_op

    lin = linearize(net, solve_op(net))
    a, b = lin.index("a"), lin.index("b")
    assert lin.G[a, a] == pytest.approx(1 / 2e3)
    assert lin.G[a, b] == pytest.approx(-1 / 2e3)
    assert lin.G[b, b] == pytest.approx(2 / 2e3)


def test_conductance_rows_sum_to_zero_on_bundled(node):
    op = bundled_op(node)
    lin = linearize(load_bundled(node), op)
    n = lin.n_nodes
    G = lin.G_full
    for r in range(n):
        row = np.concatenate([G[r, :n], G[r, -1:]])
        assert abs(row.sum()) <= 1e-12 * max(1.0, np.abs(row).sum())


def test_mosfet_gm_stamp_matches_device_model():
    op = bundled_op("180")
    lin = linearize(load_bundled("180"), op)
    ss = op.device_states["M1"].small_signal
    assert lin.G[lin.index("n1"), lin.index("inn")] == pytest.approx(ss.gm, rel=1e-12)
    ss2 = op.device_states["M2"].small_signal
    assert lin.G[lin.index("o1"), lin.index("inp")] == pytest.approx(ss2.gm, rel=1e-12)


def test_capacitor_only_imaginary_and_linear_in_f():
    lin = linearize(load_bundled("180"), bundled_op("180"))
    Y = lin.matrices([1.0, 10.0])
    assert np.array_equal(Y[0].real, lin.G) and np.array_equal(Y[1].real, lin.G)
    assert np.allclose(Y[1].imag, 10 * Y[0].imag, rtol=1e-14, atol=0)
    assert np.allclose(Y[0].imag, 2 * np.pi * lin.C, rtol=1e-14, atol=0)


def test_macromodel_matches_symbolic_transfer_function():
    h = symbolic_macromodel()
    params = dict(gm1=237.9e-9, gm7=6.439e-6, g1=4e-11, g2=1.5e-9, c1=1e-12, cc=0.95e-12,
                  rc=1.6e6, cl=10e-12)
    lin = macromodel(**params)
    r = ac_sweep(lin, AcDec(100, 1e-2, 1e8))
    ref = h(2j * np.pi * r.freqs, *params.values())
    rel = np.abs(np.abs(r.gain) / np.abs(ref) - 1)
    assert rel.max() < 5e-3
    assert np.max(np.abs(np.angle(r.gain / ref))) < 1e-6


def test_single_pole_metrics():
    a0, p = 1000.0, 100.0
    b = SmallSignalBuilder().vsource("in", "0", 1.0)
    b.vccs("0", "out", "in", "0", a0 * 1e-6).conductance("out", "0", 1e-6)
    b.capacitor("out", "0", 1e-6 / (2 * np.pi * p))
    m = bode_metrics(ac_sweep(b.build(), AcDec(100, 1, 1e7)))
    assert m.dc_gain_db == pytest.approx(60.0, abs=1e-3)
    assert m.ugb_hz == pytest.approx(math.sqrt(a0 ** 2 - 1) * p, rel=1e-3)
    assert m.phase_margin_deg == pytest.approx(90.0, abs=0.1)
    assert m.gain_margin_db is None


def _cascade(gains, poles):
    b = SmallSignalBuilder().vsource("n0", "0", 1.0)
    for k, (a, p) in enumerate(zip(gains, poles)):
        src, dst = f"n{k}", ("out" if k == len(gains) - 1 else f"n{k + 1}")
        b.vccs("0", dst, src, "0", a * 1e-6).conductance(dst, "0", 1e-6)
        b.capacitor(dst, "0", 1e-6 / (2 * np.pi * p))
    return b.build()


def test_two_pole_phase_margin_vs_hand_formula():
    a0, p1, p2 = 1e4, 10.0, 50e3
    lin = _cascade([100.0, 100.0], [p1, p2])
    m = bode_metrics(ac_sweep(lin, AcDec(100, 1, 1e7)))
    mag = lambda f: a0 / math.sqrt((1 + (f / p1) ** 2) * (1 + (f / p2) ** 2))
    fu = brentq(lambda f: mag(f) - 1, 1, 1e7, xtol=1e-9)
    pm = 180 - math.degrees(math.atan(fu / p1) + math.atan(fu / p2))
    assert m.ugb_hz == pytest.approx(fu, rel=1e-3)
    assert m.phase_margin_deg == pytest.approx(pm, abs=0.5)


def test_three_pole_gain_margin():
    # equal poles: -180 deg at f = sqrt(3) p where |H| = A0 / 8
    lin = _cascade([4 ** (1 / 3)] * 3, [1e3] * 3)
    m = bode_metrics(ac_sweep(lin, AcDec(200, 1, 1e6)))
    assert m.gain_margin_db == pytest.approx(20 * math.log10(8 / 4), abs=0.02)


def test_no_crossing():
    lin = _cascade([0.5], [100.0])
    with pytest.raises(NoCrossing):
        bode_metrics(ac_sweep(lin, AcDec(10, 1, 1e6)))


def test_full_netlist_dc_gain_vs_gm_gds_product(node):
    op = bundled_op(node)
    ss = {k: st.small_signal for k, st in op.device_states.items()}
    a1 = ss["M1"].gm / (ss["M2"].gds + ss["M4"].gds)
    a2 = ss["M7"].gm / (ss["M6"].gds + ss["M7"].gds)
    oracle = 20 * math.log10(a1 * a2)
    m = bode_metrics(acengine.ac_analysis(load_bundled(node), op))
    assert m.dc_gain_db == pytest.approx(oracle, rel=0.02)


def test_bundled_metrics_regime(node):
    m = bode_metrics(acengine.ac_analysis(load_bundled(node), bundled_op(node)))
    assert m.dc_gain_db > 50
    assert 45 < m.phase_margin_deg < 90
    assert 10e3 < m.ugb_hz < 100e3


def test_linearity_and_metric_invariance():
    net = load_bundled("180")
    op = bundled_op("180")
    lin = linearize(net, op)
    card = AcDec(50, 1e-3, 1e7)
    x1, _ = lin.solve(acengine.sweep_frequencies(card))
    x2, _ = lin.solve(acengine.sweep_frequencies(card), 2 * lin.excitation)
    assert np.allclose(x2, 2 * x1, rtol=1e-12, atol=0)
    doubled = linearize(net.replace_element("VIN", ac_mag=2.0), op)
    r1, r2 = ac_sweep(lin, card), ac_sweep(doubled, card)
    assert np.allclose(r1.gain, r2.gain, rtol=1e-12, atol=0)
    assert bode_metrics(r1) == bode_metrics(r2)


def test_low_frequency_limit_matches_resistive_solve():
    lin = linearize(load_bundled("180"), bundled_op("180"))
    dc = np.linalg.solve(lin.G, lin.excitation.real)
    x, ok = lin.solve([1e-30])
    assert ok[0]
    assert np.allclose(x[0].real, dc, rtol=1e-9, atol=1e-15)


def test_sweep_density_robustness(node):
    lin = linearize(load_bundled(node), bundled_op(node))
    m1 = bode_metrics(ac_sweep(lin, AcDec(100, 1e-3, 1e7)))
    m2 = bode_metrics(ac_sweep(lin, AcDec(200, 1e-3, 1e7)))
    assert m2.ugb_hz == pytest.approx(m1.ugb_hz, rel=1e-3)
    assert m2.phase_margin_deg == pytest.approx(m1.phase_margin_deg, rel=1e-3)


def test_singular_point_is_flagged():
    b = SmallSignalBuilder().vsource("in", "0", 1.0).resistor("in", "out", 1e3)
    b.capacitor("out", "0", 1e-9)
    # a floating node whose conductance cancels at DC
    b.conductance("m", "0", 1e-3).vccs("m", "0", "0", "m", 1e-3).capacitor("m", "0", 1e-9)
    r = ac_sweep(b.build(), np.array([0.0, 1e3, 1e4]))
    assert list(r.ok) == [False, True, True]
    assert np.isnan(r.gain[0]) and np.all(np.isfinite(r.gain[1:]))


def test_source_count_and_ground_output_errors():
    net = nl.parse("VIN in 0 DC 0\nR1 in out 1k\nC1 out 0 1n\n.end")
    from opamp_lab.opsolver import solve_op

    with pytest.raises(AnalysisError, match="exactly one"):
        ac_sweep(linearize(net, solve_op(net)))
    net = rc_lowpass()
    with pytest.raises(AnalysisError, match="ground"):
        ac_sweep(linearize(net, solve_op(net)), output_node="0")


def test_sweep_grid():
    f = acengine.sweep_frequencies(AcDec(100, 1, 1e7))
    assert len(f) == 701 and f[0] == 1 and f[-1] == pytest.approx(1e7, rel=1e-12)
    assert np.all(np.diff(f) > 0)


def test_phase_unwrap():
    assert np.array_equal(phase_unwrap([30.0] * 5), [30.0] * 5)
    raw = np.degrees(np.angle(np.exp(-1j * np.radians(np.linspace(0, 400, 50)))))
    out = phase_unwrap(raw)
    assert np.max(np.abs(np.diff(out))) < 180
    assert out[-1] == pytest.approx(-400.0)


def test_full_sweep_under_one_second():
    net, op = load_bundled("180"), bundled_op("180")
    t0 = time.perf_counter()
    r = ac_sweep(linearize(net, op), AcDec(100, 1, 1e7))
    assert time.perf_counter() - t0 < 1.0
    assert r.ok.all() and len(r.freqs) == 701
