"""DC operating point: damped Newton on the MNA equations with gmin stepping."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .devmodel import DEFAULT_CONSTANTS, BiasPoint, SmallSignalParams
from .errors import NonConvergence, SingularMatrix, TargetUnreachable
from .mna import Circuit
from .netlist import ISource, Mosfet, Resistor, VSource

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    abstol: float = 1e-12
    reltol: float = 1e-6
    vntol: float = 1e-6
    max_iterations: int = 200
    max_step_vt: float = 2.0  # Newton voltage step limit, in thermal voltages
    gmin_start: float = 1e-3
    gmin_stop: float = 1e-12


@dataclass(frozen=True)
class DeviceState:
    bias: BiasPoint
    small_signal: SmallSignalParams
    reversed: bool = False


@dataclass
class OperatingPoint:
    node_voltages: dict
    device_states: dict
    supply_currents: dict
    converged: bool
    iterations: int
    residual: float
    x: np.ndarray = field(repr=False)
    circuit: Circuit = field(repr=False, compare=False)

    def v(self, node):
        node = node.lower()
        return 0.0 if node == "0" else self.node_voltages[node]

    def drain_current(self, name):
        return self.device_states[name.upper()].small_signal.id

    @property
    def supply_power(self):
        """Total power delivered by all independent sources."""
        net = self.circuit.netlist
        total = sum(src.dc * self.supply_currents[src.name] for src in net.of_type(VSource))
        for src in net.of_type(ISource):
            total += src.dc * (self.v(src.nneg) - self.v(src.npos))
        return total

    def dissipated_power(self):
        """Power absorbed by each resistor and MOSFET."""
        net = self.circuit.netlist
        out = {}
        for el in net.elements:
            if isinstance(el, Resistor):
                out[el.name] = (self.v(el.n1) - self.v(el.n2)) ** 2 / el.value
            elif isinstance(el, Mosfet):
                out[el.name] = self.drain_current(el.name) * (self.v(el.drain) - self.v(el.source))
        return out


def newton(circuit, x0, b, options, gmin=0.0, extra=None):
    """Damped Newton iteration.

    ``extra`` is an optional ``(A, r)`` pair adding ``A @ x - r`` to the
    residual (used by the transient engine for capacitor companions).
    Returns ``(x, converged, iterations, residual)``.
    """
    n = circuit.n_nodes
    max_step = options.max_step_vt * circuit.constants.thermal_voltage
    x = np.array(x0, dtype=float)
    residual = np.inf
    for it in range(1, options.max_iterations + 1):
        F, J = circuit.residual_jacobian(x, b, gmin)
        if extra is not None:
            A, r = extra
            F = F + A @ x - r
            J = J + A
        residual = float(np.max(np.abs(F[:n]))) if n else 0.0
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise SingularMatrix("singular MNA matrix during Newton iteration") from None
        if not np.all(np.isfinite(dx)):
            raise SingularMatrix("non-finite Newton update (ill-conditioned MNA matrix)")
        dv = dx[:n]
        biggest = float(np.max(np.abs(dv))) if n else 0.0
        if biggest > max_step:
            dx *= max_step / biggest
        x += dx
        vmax = float(np.max(np.abs(x[:n]))) if n else 0.0
        if residual < options.abstol and biggest <= options.vntol + options.reltol * vmax:
            F, _ = circuit.residual_jacobian(x, b, gmin)
            if extra is not None:
                F = F + extra[0] @ x - extra[1]
            residual = float(np.max(np.abs(F[:n]))) if n else 0.0
            return x, True, it, residual
    return x, False, options.max_iterations, residual


def initial_guess(circuit):
    """All nodes at half the largest source voltage; source-pinned nodes at their value."""
    dcs = [abs(src.dc) for src in circuit.vsources]
    mid = 0.5 * max(dcs) if dcs else 0.25
    x = np.zeros(circuit.size)
    x[: circuit.n_nodes] = mid
    for src in circuit.vsources:
        if src.nneg == "0" and src.npos in circuit.node_index:
            x[circuit.node_index[src.npos]] = src.dc
    return x


def _package(circuit, x, converged, iterations, residual):
    st = circuit.device_state(x)
    signed = np.where(st["reversed"], -1.0, 1.0) * circuit.mos_sign * st["ids"]
    states = {}
    for k, name in enumerate(circuit.mos_names):
        s = circuit.mos_sign[k]
        # report the bias in real terminal signs, referenced to the conducting source
        bias = BiasPoint(vgs=float(s * st["vgs"][k]), vds=float(s * st["vds"][k]),
                         vbs=float(s * st["vbs"][k]))
        ss = SmallSignalParams(gm=float(st["gm"][k]), gds=float(st["gds"][k]),
                               gmb=float(st["gmb"][k]), id=float(signed[k]))
        states[name] = DeviceState(bias, ss, bool(st["reversed"][k]))
    supplies = {src.name: float(-x[circuit.source_index[src.name]]) for src in circuit.vsources}
    voltages = {name: float(x[i]) for i, name in enumerate(circuit.node_names)}
    return OperatingPoint(voltages, states, supplies, converged, iterations, residual,
                          x.copy(), circuit)


def solve_circuit(circuit, options=None, x0=None, overrides=None):
    """Solve a compiled :class:`Circuit`; see :func:`solve_op`."""
    options = options or SolverOptions()
    circuit.check_dc_paths()
    b = circuit.rhs(overrides)
    x0 = initial_guess(circuit) if x0 is None else np.asarray(x0, dtype=float)
    x, ok, its, res = newton(circuit, x0, b, options)
    total = its
    if not ok:
        log.debug("plain Newton failed (residual %.3g A); gmin stepping", res)
        gmin = options.gmin_start
        x = x0.copy()
        while gmin >= options.gmin_stop * 0.999:
            x, ok, its, res = newton(circuit, x, b, options, gmin=gmin)
            total += its
            if not ok:
                raise NonConvergence(f"gmin stepping failed at gmin={gmin:g} S", res, total)
            gmin /= 10.0
        x, ok, its, res = newton(circuit, x, b, options)
        total += its
        if not ok:
            raise NonConvergence("Newton failed after gmin stepping", res, total)
    return _package(circuit, x, ok, total, res)


def solve_op(netlist, options=None, constants=DEFAULT_CONSTANTS, initial=None):
    """Nonlinear DC operating point of ``netlist``.

    ``initial`` may be a previous :class:`OperatingPoint` (warm start).
    Raises :class:`NonConvergence` or :class:`SingularMatrix`.
    """
    circuit = Circuit(netlist, constants)
    x0 = None
    if initial is not None and initial.x.shape == (circuit.size,):
        x0 = initial.x
    return solve_circuit(circuit, options, x0)


def _bisect_source(circuit, source, device, target, bounds, options, x0, rtol):
    if device.upper() not in circuit.mos_names:
        raise KeyError(device)
    state = {"x": x0}

    def current(v):
        op = solve_circuit(circuit, options, state["x"], overrides={source: v})
        state["x"] = op.x
        return abs(op.drain_current(device)), op

    lo, hi = bounds
    i_lo, _ = current(lo)
    i_hi, _ = current(hi)
    f_lo, f_hi = i_lo - target, i_hi - target
    if not target > 0 or f_lo * f_hi > 0:
        raise TargetUnreachable(
            f"{device} current {target:g} A not bracketed by {source} in [{lo:g}, {hi:g}] V "
            f"(currents {i_lo:.4g} .. {i_hi:.4g} A)")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        i_mid, _ = current(mid)
        f_mid = i_mid - target
        if abs(f_mid) <= rtol * target or hi - lo < 1e-12:
            return mid, state["x"]
        if f_mid * f_lo > 0:
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi), state["x"]


def calibrate_vref(netlist, targets, bounds=(0.0, 0.5), options=None,
                   constants=DEFAULT_CONSTANTS, rtol=1e-5):
    """Set reference sources so chosen devices carry target currents.

    ``targets`` maps a voltage-source name to ``(device, current)`` and is
    processed in order (tail reference first, then the second stage). Each
    source is found by bisection over ``bounds``; the current is monotone in
    the gate drive so a sign change across the bracket is required, otherwise
    :class:`TargetUnreachable` is raised.

    Returns ``{source: voltage}`` in the same order.
    """
    result = {}
    current = netlist
    x = None
    for source, (device, target) in targets.items():
        circuit = Circuit(current, constants)
        value, x = _bisect_source(circuit, source.upper(), device, target, bounds,
                                  options or SolverOptions(), x, rtol)
        result[source.upper()] = value
        current = current.with_source(source, value)
    return result


def apply_sources(netlist, values):
    for name, value in values.items():
        netlist = netlist.with_source(name, value)
    return netlist
