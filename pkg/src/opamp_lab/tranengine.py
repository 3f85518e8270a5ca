"""Fixed-step trapezoidal transient analysis and slew-rate measurement."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NoTransition, StepNonConvergence
from .mna import Circuit
from .devmodel import DEFAULT_CONSTANTS
from .netlist import TranCard
from .opsolver import SolverOptions, newton, solve_circuit


@dataclass(frozen=True)
class Step:
    """Voltage step on ``source``: ``v0`` until ``delay``, linear ramp over ``rise``, then ``v1``."""

    source: str
    v0: float
    v1: float
    delay: float = 0.0
    rise: float = 1e-6

    def value(self, t):
        if t <= self.delay:
            return self.v0
        if self.rise <= 0 or t >= self.delay + self.rise:
            return self.v1
        return self.v0 + (self.v1 - self.v0) * (t - self.delay) / self.rise


@dataclass
class Waveform:
    times: np.ndarray
    node_names: tuple
    voltages: np.ndarray  # shape (n_times, n_nodes)
    step: float
    stop: float
    branch_currents: dict = field(default_factory=dict, repr=False)

    def v(self, node):
        node = node.lower()
        if node == "0":
            return np.zeros(len(self.times))
        return self.voltages[:, self.node_names.index(node)]


def tran(netlist, card=None, stimulus=None, options=None, constants=DEFAULT_CONSTANTS):
    """Transient simulation from the DC operating point of the ``t = 0`` network.

    Capacitors use the trapezoidal companion model
    ``i_{k+1} = (2C/h)(v_{k+1} - v_k) - i_k`` with zero capacitor current at
    the DC start. Each time point is solved with the DC Newton iteration and
    the same tolerances. ``stimulus`` is an optional :class:`Step`.
    """
    card = card or netlist.analysis(TranCard)
    if card is None:
        raise ValueError("no .tran card and no card given")
    options = options or SolverOptions()
    circuit = Circuit(netlist, constants)
    h = card.step
    n_steps = int(round(card.stop / h))

    def rhs_at(t):
        if stimulus is None:
            return circuit.rhs()
        return circuit.rhs({stimulus.source: stimulus.value(t)})

    op = solve_circuit(circuit, options, overrides=None if stimulus is None
                       else {stimulus.source: stimulus.value(0.0)})
    x = op.x.copy()
    C = circuit.C
    A = (2.0 / h) * C
    i_cap = np.zeros(circuit.size)  # C dv/dt contribution to each KCL row
    n = circuit.n_nodes
    times = np.arange(n_steps + 1) * h
    volts = np.empty((n_steps + 1, n))
    branches = np.empty((n_steps + 1, len(circuit.vsources)))
    volts[0] = x[:n]
    branches[0] = x[n:]
    for k in range(1, n_steps + 1):
        t = times[k]
        history = A @ x + i_cap
        x_new, ok, _, res = newton(circuit, x, rhs_at(t), options, extra=(A, history))
        if not ok:
            raise StepNonConvergence(f"Newton failed at t={t:.6g} s (residual {res:.3g} A)", t)
        i_cap = A @ (x_new - x) - i_cap
        x = x_new
        volts[k] = x[:n]
        branches[k] = x[n:]
    currents = {src.name: branches[:, j] for j, src in enumerate(circuit.vsources)}
    return Waveform(times, circuit.node_names, volts, h, card.stop, currents)


def measure_slew(waveform, output_node="out", thresholds=(0.1, 0.9), window=5):
    """Slew rate (V/s, magnitude) of the output transition.

    The transition window runs from the first crossing of the lower threshold
    to the first crossing of the upper one (fractions of the total swing from
    the initial to the final value). Inside it, dV/dt is averaged over
    ``window``-sample spans and the largest magnitude is returned.
    """
    t = waveform.times
    v = waveform.v(output_node)
    v0, v1 = v[0], v[-1]
    swing = v1 - v0
    if abs(swing) <= 1e-9 or len(t) < window + 1:
        raise NoTransition("output does not move")
    frac = (v - v0) / swing
    lo, hi = thresholds
    past_lo = np.flatnonzero(frac >= lo)
    past_hi = np.flatnonzero(frac >= hi)
    if len(past_lo) == 0 or len(past_hi) == 0:
        raise NoTransition("output never crosses the thresholds")
    i0, i1 = past_lo[0], past_hi[0]
    i0 = max(0, min(i0, len(t) - 1 - window))
    i1 = max(i1, i0 + window)
    starts = np.arange(i0, min(i1, len(t) - 1 - window) + 1)
    rates = (v[starts + window] - v[starts]) / (t[starts + window] - t[starts])
    return float(np.max(np.abs(rates)))


def buffer_bench(netlist, step, stop=None, dt=None, input_source="VIN",
                 feedback=("RFB", "CFB"), output_node="out", inverting_node="inn"):
    """Turn an open-loop bench into a unity-gain follower and attach a step.

    The feedback helpers are removed and the inverting input is tied to the
    output. Returns ``(netlist, card, stimulus)`` ready for :func:`tran`.
    """
    v0, v1 = step
    follower = netlist.without(*feedback).merge_nodes(output_node, inverting_node)
    follower = follower.replace_element(input_source, dc=float(v0), ac_mag=0.0)
    stop = stop or 200e-6
    dt = dt or stop / 1e4
    card = TranCard(dt, stop)
    stimulus = Step(input_source.upper(), v0, v1, delay=10 * dt, rise=1e-6)
    return follower, card, stimulus
