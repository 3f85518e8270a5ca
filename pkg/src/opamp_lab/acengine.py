"""Small-signal AC analysis and Bode metrics."""

from dataclasses import dataclass, field

import numpy as np

from .errors import AnalysisError, NoCrossing
from .mna import Circuit
from .netlist import GROUND, AcDec

DEFAULT_SWEEP = AcDec(100, 1.0, 1e7)


@dataclass
class LinearCircuit:
    """A linear MNA system ``(G + j*2*pi*f*C) x = excitation``."""

    node_names: tuple
    G: np.ndarray
    C: np.ndarray
    excitation: np.ndarray
    drive: complex = 1.0
    input_source: str = ""
    n_nodes: int = 0
    G_full: np.ndarray = field(default=None, repr=False)
    branches: dict = field(default_factory=dict)  # voltage source name -> branch row

    def index(self, node):
        """Row of a non-ground node; ``None`` for ground."""
        if node == GROUND:
            return None
        try:
            return self.node_names.index(node.lower())
        except ValueError:
            raise AnalysisError(f"unknown node {node!r}") from None

    @property
    def size(self):
        return self.G.shape[0]

    def branch(self, source):
        try:
            return self.branches[source.upper()]
        except KeyError:
            raise AnalysisError(f"unknown voltage source {source!r}") from None

    def unit_drive(self, source):
        """Excitation vector with a 1 V AC drive on ``source`` and nothing else."""
        b = np.zeros(self.size, dtype=complex)
        b[self.branch(source)] = 1.0
        return b

    def matrices(self, freqs):
        """Stack of complex system matrices, one per frequency."""
        w = 2j * np.pi * np.asarray(freqs, dtype=float)
        return self.G[None, :, :] + w[:, None, None] * self.C[None, :, :]

    def solve(self, freqs, rhs=None):
        """Solve at every frequency.

        ``rhs`` defaults to the AC excitation; a 2-D ``(size, k)`` array
        solves ``k`` right-hand sides at once. Returns ``(x, ok)`` where
        ``x`` has shape ``(nf, size[, k])`` and ``ok`` flags frequencies whose
        matrix was not singular (failed points are NaN).
        """
        freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
        rhs = self.excitation if rhs is None else np.asarray(rhs, dtype=complex)
        vector = rhs.ndim == 1
        B = rhs[:, None] if vector else rhs
        Y = self.matrices(freqs)
        Bs = np.broadcast_to(B, (len(freqs),) + B.shape)
        try:
            X = np.linalg.solve(Y, Bs)
            ok = np.all(np.isfinite(X), axis=(1, 2))
        except np.linalg.LinAlgError:
            X = np.full((len(freqs),) + B.shape, np.nan, dtype=complex)
            ok = np.zeros(len(freqs), dtype=bool)
            for i in range(len(freqs)):
                try:
                    X[i] = np.linalg.solve(Y[i], B)
                    ok[i] = np.all(np.isfinite(X[i]))
                except np.linalg.LinAlgError:
                    pass
        X[~ok] = np.nan
        return (X[..., 0] if vector else X), ok


class SmallSignalBuilder:
    """Hand-built linear circuits (macromodels) for the AC engine.

    Node ``"0"`` is ground. Example::

        b = SmallSignalBuilder()
        b.vsource("in", "0", ac=1.0, name="VIN")
        b.vccs("o1", "0", "in", "0", gm1)   # current gm1*v(in) flows o1 -> 0 inside
        b.conductance("o1", "0", 1 / ro1)
        lin = b.build()
    """

    def __init__(self):
        self._nodes = []
        self._g, self._c, self._vccs, self._src = [], [], [], []

    def _node(self, name):
        name = str(name).lower()
        if name != GROUND and name not in self._nodes:
            self._nodes.append(name)
        return name

    def conductance(self, a, b, g):
        self._g.append((self._node(a), self._node(b), float(g)))
        return self

    def resistor(self, a, b, r):
        return self.conductance(a, b, 1.0 / r)

    def capacitor(self, a, b, c):
        self._c.append((self._node(a), self._node(b), float(c)))
        return self

    def vccs(self, out_p, out_n, ctrl_p, ctrl_n, gm):
        """Current ``gm*(v(ctrl_p)-v(ctrl_n))`` leaves ``out_p`` and enters ``out_n``."""
        self._vccs.append(tuple(self._node(n) for n in (out_p, out_n, ctrl_p, ctrl_n)) + (float(gm),))
        return self

    def vsource(self, p, n, ac=1.0, name="VIN"):
        self._src.append((self._node(p), self._node(n), complex(ac), name.upper()))
        return self

    def build(self):
        nodes = tuple(self._nodes)
        nn = len(nodes)
        size = nn + len(self._src)
        gnd = size

        def ix(name):
            return gnd if name == GROUND else nodes.index(name)

        G = np.zeros((size + 1, size + 1))
        C = np.zeros((size + 1, size + 1))
        for target, items in ((G, self._g), (C, self._c)):
            for a, b, y in items:
                i, j = ix(a), ix(b)
                target[i, i] += y
                target[j, j] += y
                target[i, j] -= y
                target[j, i] -= y
        for op, on, cp, cn, gm in self._vccs:
            for row, sgn in ((ix(op), 1.0), (ix(on), -1.0)):
                G[row, ix(cp)] += sgn * gm
                G[row, ix(cn)] -= sgn * gm
        exc = np.zeros(size, dtype=complex)
        drive, name = 1.0, ""
        branches = {}
        for k, (p, n, ac, src_name) in enumerate(self._src):
            r = nn + k
            branches[src_name] = r
            G[ix(p), r] += 1.0
            G[ix(n), r] -= 1.0
            G[r, ix(p)] += 1.0
            G[r, ix(n)] -= 1.0
            exc[r] = ac
            if ac:
                drive, name = ac, src_name
        return LinearCircuit(nodes, G[:size, :size].copy(), C[:size, :size].copy(), exc,
                             drive, name, nn, G, branches)


def linearize(netlist, op):
    """Small-signal MNA system of ``netlist`` around operating point ``op``.

    MOSFETs contribute gm (gate-source controlled), gmb (bulk-source
    controlled) and gds; R, C and sources contribute their usual stamps. The
    AC drive comes from the voltage sources' ``AC`` fields.
    """
    circuit = op.circuit if op.circuit.netlist is netlist else Circuit(netlist, op.circuit.constants)
    G = circuit.small_signal_matrix(op.x)
    G_full = circuit.small_signal_matrix_full(op.x)
    exc, driven = circuit.ac_excitation()
    drive, name = (driven[0][1], driven[0][0]) if len(driven) == 1 else (1.0, "")
    return LinearCircuit(circuit.node_names, G, circuit.C.copy(), exc, drive, name,
                         circuit.n_nodes, G_full, dict(circuit.source_index))


def sweep_frequencies(card):
    """Log-spaced grid with ``points_per_decade`` points per decade, both ends included."""
    decades = np.log10(card.f_stop / card.f_start)
    n = int(round(decades * card.points_per_decade)) + 1
    return card.f_start * 10.0 ** (np.arange(n) / card.points_per_decade)


@dataclass
class FrequencyResponse:
    freqs: np.ndarray
    gain: np.ndarray
    input_source: str
    output_node: str
    ok: np.ndarray = None

    def __post_init__(self):
        if self.ok is None:
            self.ok = np.isfinite(self.gain)

    @property
    def magnitude_db(self):
        return 20.0 * np.log10(np.abs(self.gain))

    @property
    def phase_deg(self):
        return phase_unwrap(np.degrees(np.angle(self.gain)))


def ac_sweep(lin, card=DEFAULT_SWEEP, output_node="out"):
    """Sweep ``lin`` over ``card`` and return ``V(output_node) / AC drive``.

    Exactly one source must carry an AC magnitude. Frequencies where the
    matrix is singular come back flagged (``ok == False``) with NaN gain.
    """
    driven = np.flatnonzero(lin.excitation)
    if len(driven) != 1:
        raise AnalysisError(f"AC analysis needs exactly one AC source, found {len(driven)}")
    freqs = card if isinstance(card, np.ndarray) else sweep_frequencies(card)
    out = lin.index(output_node)
    if out is None:
        raise AnalysisError("AC output node cannot be ground")
    x, ok = lin.solve(freqs)
    gain = x[:, out] / lin.drive
    return FrequencyResponse(freqs, gain, lin.input_source, output_node.lower(), ok)


def phase_unwrap(phase_deg):
    """Remove 360 degree jumps so adjacent points differ by at most 180 degrees."""
    phase = np.asarray(phase_deg, dtype=float)
    good = np.isfinite(phase)
    out = phase.copy()
    # shift by whole turns only, so unwrapped values are exact
    jumps = np.degrees(np.unwrap(np.radians(phase[good]))) - phase[good]
    out[good] = phase[good] + 360.0 * np.round(jumps / 360.0)
    return out


@dataclass(frozen=True)
class BodeMetrics:
    dc_gain_db: float
    ugb_hz: float
    phase_margin_deg: float
    gain_margin_db: float = None


def _crossing(x, y, level):
    """First downward crossing of ``y`` through ``level``; linear interpolation in x."""
    above = y >= level
    hits = np.flatnonzero(above[:-1] & ~above[1:])
    if len(hits) == 0:
        return None
    i = hits[0]
    t = (level - y[i]) / (y[i + 1] - y[i])
    return i, t, x[i] + t * (x[i + 1] - x[i])


def bode_metrics(resp):
    """DC gain, unity-gain frequency, phase and gain margins.

    DC gain is read at the lowest swept frequency. The unity-gain crossing is
    interpolated in log-frequency / dB; the phase there uses the unwrapped
    phase. Raises :class:`NoCrossing` when |H| never falls through 0 dB.
    """
    ok = resp.ok
    f = resp.freqs[ok]
    mag = resp.magnitude_db[ok]
    phase = phase_unwrap(np.degrees(np.angle(resp.gain[ok])))
    if len(f) < 2:
        raise NoCrossing("not enough valid points")
    lf = np.log10(f)
    hit = _crossing(lf, mag, 0.0)
    if hit is None:
        raise NoCrossing("gain never crosses 0 dB inside the swept band")
    i, t, lu = hit
    ugb = 10.0 ** lu
    phase_u = phase[i] + t * (phase[i + 1] - phase[i])
    pm = 180.0 + phase_u
    gm_db = None
    # phase crossover: total lag reaches 180 degrees below the DC phase (0 or 180)
    rel = phase - 180.0 * np.round(phase[0] / 180.0)
    hit = _crossing(lf, rel, -180.0)
    if hit is not None:
        j, s, _ = hit
        gm_db = -(mag[j] + s * (mag[j + 1] - mag[j]))
    return BodeMetrics(float(mag[0]), float(ugb), float(pm), gm_db if gm_db is None else float(gm_db))


def ac_analysis(netlist, op, card=None, output_node="out"):
    """Convenience wrapper: linearize, sweep with the netlist's ``.ac`` card, and return the response."""
    card = card or netlist.analysis(AcDec) or DEFAULT_SWEEP
    return ac_sweep(linearize(netlist, op), card, output_node)
