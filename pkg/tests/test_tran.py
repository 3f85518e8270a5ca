import numpy as np
import pytest
from scipy.optimize import curve_fit

from opamp_lab import netlist as nl, tranengine
from opamp_lab.acengine import ac_analysis
from opamp_lab.errors import NoTransition, StepNonConvergence
from opamp_lab.netlist import AcDec, TranCard
from opamp_lab.opsolver import newton as real_newton, solve_op
from opamp_lab.tranengine import Step, Waveform, buffer_bench, measure_slew, tran

from conftest import CURRENTS, load_bundled
from oracles import rc_ramp_response

TAU = 1e-6
RC = nl.parse("VIN in 0 DC 0\nR1 in out 1k\nC1 out 0 1n\n.end")

def rc_error(h):
    w = tran(RC, TranCard(h, 5 * TAU), Step("VIN", 0.0, 1.0, delay=0.0, rise=TAU))
    return np.max(np.abs(w.v("out") - rc_ramp_response(w.times, TAU, TAU)))

def test_rc_step_accuracy_and_order():
    e1 = rc_error(TAU / 100)
    e2 = rc_error(TAU / 200)
    assert e1 < 1e-3
    assert 3.5 < e1 / e2 < 4.5

def test_waveform_starts_at_operating_point():
    net = nl.parse("VIN in 0 DC 0.3\nR1 in out 1k\nC1 out 0 1n\n.end")
    w = tran(net, TranCard(1e-8, 1e-6))
    assert w.v("out")[0] == pytest.approx(solve_op(net).v("out"), abs=1e-12)
    assert np.allclose(w.v("out"), 0.3, atol=1e-12)
    assert np.all(np.diff(w.times) > 0) and len(w.times) == 101
    assert np.array_equal(w.v("0"), np.zeros(101))

def _integrator(i=1e-6, c=1e-9, h=1e-8, stop=2e-6):
    # the huge resistor only gives the DC solve a reference; its leak is ~1e-21 relative
    net = nl.parse(f"I1 0 n DC 0\nC1 n 0 {c}\nR1 n 0 1e30\n.end")
    return tran(net, TranCard(h, stop), Step("I1", 0.0, i, delay=0.0, rise=0.0))

def test_constant_current_gives_exact_ramp():
    w = _integrator()
    dv = np.diff(w.v("n"))[1:]
    assert np.allclose(dv, 1e-6 * 1e-8 / 1e-9, rtol=1e-12, atol=0)

def test_slew_of_integrator():
    w = _integrator()
    assert measure_slew(w, "n") == pytest.approx(1e-6 / 1e-9, rel=0.01)

def test_slew_of_pure_ramp():
    t = np.linspace(0, 1e-3, 1001)
    v = 2.5e3 * t
    w = Waveform(t, ("out",), v[:, None], t[1], t[-1])
    assert measure_slew(w) == pytest.approx(2.5e3, rel=1e-9)
    falling = Waveform(t, ("out",), -v[:, None], t[1], t[-1])
    assert measure_slew(falling) == pytest.approx(2.5e3, rel=1e-9)

def test_no_transition():
    t = np.linspace(0, 1, 11)
    with pytest.raises(NoTransition):
        measure_slew(Waveform(t, ("out",), np.full((11, 1), 0.2), t[1], 1.0))

def test_charge_conservation_on_floating_capacitor_node():
    net = nl.parse("VIN in 0 DC 0\nR1 in a 1k\nC1 a b 1n\nC2 b 0 2n\nR2 b 0 1e30\n.end")
    w = tran(net, TranCard(1e-8, 20e-6), Step("VIN", 0.0, 1.0, delay=1e-7, rise=1e-7))
    va, vb = w.v("a"), w.v("b")
    charge = 1e-9 * (vb - va) + 2e-9 * vb
    assert np.max(np.abs(charge - charge[0])) < 1e-6 * 1e-9 * 1.0
    assert vb[-1] == pytest.approx(1.0 / 3.0, rel=1e-6)

def test_determinism():
    bench = buffer_bench(load_bundled("180"), (0.1, 0.4), stop=5e-6, dt=2e-8)
    a, b = tran(*bench), tran(*bench)
    assert np.array_equal(a.voltages, b.voltages)

def test_step_nonconvergence_reports_time(monkeypatch):
    calls = []

    def failing_newton(circuit, x, b, options, gmin=0.0, extra=None):
        calls.append(1)
        if len(calls) == 5:
            return x, False, options.max_iterations, 1.0
        return real_newton(circuit, x, b, options, gmin=gmin, extra=extra)

    monkeypatch.setattr(tranengine, "newton", failing_newton)
    with pytest.raises(StepNonConvergence) as exc:
        tran(RC, TranCard(1e-8, 1e-6), Step("VIN", 0.0, 1.0))
    assert exc.value.time == pytest.approx(5e-8)

def test_missing_card():
    with pytest.raises(ValueError):
        tran(RC)

def test_buffer_bench_topology():
    net, card, stim = buffer_bench(load_bundled("180"), (0.1, 0.4))
    names = {el.name for el in net.elements}
    assert "RFB" not in names and "CFB" not in names
    assert "inn" not in net.nodes
    assert card == TranCard(2e-8, 2e-4)
    assert stim.delay == pytest.approx(2e-7) and stim.rise == 1e-6
    assert net.element("VIN").dc == 0.1

def test_slew_180_within_quarter_of_tail_oracle():
    net = load_bundled("180")
    oracle = 2 * CURRENTS["180"][0] / net.element("CC").value
    assert oracle == pytest.approx(14.846e3, rel=1e-3)
    w = tran(*buffer_bench(net, (0.1, 0.4), stop=100e-6, dt=10e-9))
    slew = measure_slew(w)
    assert abs(slew / oracle - 1) < 0.25
    swing = w.v("out")[-1] - w.v("out")[0]
    assert 0.9 * 0.3 < swing < 1.01 * 0.3

def _closed_loop_poles(node):
    net, _, _ = buffer_bench(load_bundled(node), (0.25, 0.25))
    net = net.replace_element("VIN", ac_mag=1.0)
    r = ac_analysis(net, solve_op(net), AcDec(50, 10, 3e5))
    # Levy linear least squares for H = (b0 + b1 s) / (1 + a1 s + a2 s^2)
    s, h = 2j * np.pi * r.freqs, r.gain
    rows = np.column_stack([np.ones_like(s), s, -h * s, -h * s ** 2])
    A = np.vstack([rows.real, rows.imag])
    rhs = np.concatenate([h.real, h.imag])
    _, _, a1, a2 = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return np.roots([a2, a1, 1.0])

@pytest.mark.parametrize("node", ["180", "90", "45"])
def test_small_signal_step_matches_closed_loop_poles(node):
    poles = _closed_loop_poles(node)
    p = poles[np.argmax(poles.imag)]
    sigma_ac, omega_ac = -p.real, p.imag
    assert sigma_ac > 0 and omega_ac > 0

    bench = buffer_bench(load_bundled(node), (0.25, 0.251), stop=40e-6, dt=4e-9)
    w = tran(*bench)
    stim = bench[2]
    t0 = stim.delay + stim.rise + 2e-6
    keep = w.times >= t0
    t, v = w.times[keep] - t0, w.v("out")[keep]

    def ringing(t, a, sigma, omega, phi, c):
        return a * np.exp(-sigma * t) * np.cos(omega * t + phi) + c

    guess = (v[0] - v[-1], 3e5, 1e5, 0.0, v[-1])
    (a, sigma, omega, phi, c), _ = curve_fit(ringing, t, v, p0=guess, maxfev=20000)
    assert sigma == pytest.approx(sigma_ac, rel=0.05)
    assert abs(omega) == pytest.approx(omega_ac, rel=0.05)
