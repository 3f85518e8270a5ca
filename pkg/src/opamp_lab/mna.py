"""Modified nodal analysis bookkeeping shared by the DC, AC, noise and transient engines.

Unknown vector layout: ``[v_1 .. v_n, i_1 .. i_m]`` with one voltage per
non-ground node and one branch current per voltage source. A branch current is
the current entering the source's ``+`` terminal from the circuit, so a
supply that delivers power has a negative branch current.

The residual ``F(x)`` is the net current *leaving* each node (KCL rows) and
``v+ - v- - V`` on the source rows.
"""

from collections import defaultdict

import numpy as np

from . import devmodel
from .devmodel import DEFAULT_CONSTANTS
from .errors import AnalysisError, SingularMatrix
from .netlist import GROUND, Capacitor, ISource, Mosfet, Resistor, VSource


class Circuit:
    """A netlist compiled into dense MNA matrices and vectorised device arrays."""

    def __init__(self, netlist, constants=DEFAULT_CONSTANTS):
        self.netlist = netlist
        self.constants = constants
        self.node_names = tuple(n for n in netlist.nodes if n != GROUND)
        self.node_index = {name: i for i, name in enumerate(self.node_names)}
        self.n_nodes = len(self.node_names)
        self.vsources = netlist.of_type(VSource)
        self.source_index = {src.name: self.n_nodes + k for k, src in enumerate(self.vsources)}
        self.size = self.n_nodes + len(self.vsources)
        g = self.size  # ground slot in the padded matrices

        def idx(node):
            return self.node_index.get(node, g)

        self._idx = idx
        G = np.zeros((g + 1, g + 1))
        C = np.zeros((g + 1, g + 1))
        b = np.zeros(g + 1)
        for el in netlist.elements:
            if isinstance(el, (Resistor, Capacitor)):
                a, c = idx(el.n1), idx(el.n2)
                target = G if isinstance(el, Resistor) else C
                y = 1.0 / el.value if isinstance(el, Resistor) else el.value
                target[a, a] += y
                target[c, c] += y
                target[a, c] -= y
                target[c, a] -= y
            elif isinstance(el, ISource):
                b[idx(el.npos)] -= el.dc
                b[idx(el.nneg)] += el.dc
        self.isources = {el.name: (idx(el.npos), idx(el.nneg), el.dc)
                         for el in netlist.of_type(ISource)}
        for src in self.vsources:
            r = self.source_index[src.name]
            p, q = idx(src.npos), idx(src.nneg)
            G[p, r] += 1.0
            G[q, r] -= 1.0
            G[r, p] += 1.0
            G[r, q] -= 1.0
            b[r] = src.dc
        self.G_full = G[: g + 1, : g + 1]
        self.G = G[:g, :g].copy()
        self.C = C[:g, :g].copy()
        self.b_dc = b[:g].copy()

        mos = netlist.of_type(Mosfet)
        self.mosfets = mos
        self.mos_names = tuple(m.name for m in mos)
        params = [netlist.models[m.model] for m in mos]
        self.mos_sign = np.array([p.polarity.sign for p in params])
        self.mos_k = np.array([m.geometry.aspect_ratio * p.i0 for m, p in zip(mos, params)])
        self.mos_vth0 = np.array([p.vth0 for p in params])
        self.mos_m = np.array([p.m for p in params])
        self.mos_ld = np.array([p.lambda_d for p in params])
        self.mos_lb = np.array([p.lambda_b for p in params])
        self.mos_area = np.array([m.geometry.width * m.geometry.length for m in mos])
        self.mos_d = np.array([idx(m.drain) for m in mos], dtype=int)
        self.mos_g = np.array([idx(m.gate) for m in mos], dtype=int)
        self.mos_s = np.array([idx(m.source) for m in mos], dtype=int)
        self.mos_b = np.array([idx(m.bulk) for m in mos], dtype=int)

    # -- helpers -----------------------------------------------------------

    def index(self, node):
        node = node.lower()
        if node == GROUND:
            return None
        try:
            return self.node_index[node]
        except KeyError:
            raise AnalysisError(f"unknown node {node!r}") from None

    def branch(self, source):
        try:
            return self.source_index[source.upper()]
        except KeyError:
            raise AnalysisError(f"unknown voltage source {source!r}") from None

    def rhs(self, overrides=None):
        """DC right-hand side, optionally with some source values replaced.

        ``overrides`` maps voltage or current source names to new DC values.
        """
        b = np.zeros(self.size + 1)
        b[: self.size] = self.b_dc
        for name, value in (overrides or {}).items():
            if name.upper() in self.isources:
                p, q, dc = self.isources[name.upper()]
                b[p] -= value - dc
                b[q] += value - dc
            else:
                b[self.branch(name)] = value
        return b[: self.size]

    def padded(self, x):
        """Node voltages with a trailing zero for ground."""
        v = np.zeros(self.size + 1)
        v[: self.n_nodes] = x[: self.n_nodes]
        return v

    # -- devices -----------------------------------------------------------

    def device_state(self, x):
        """Evaluate every MOSFET at solution ``x``.

        Returns a dict of arrays in the conducting frame: ``ids`` (>= 0),
        ``gm``, ``gds``, ``gmb``, the effective drain/source indices, and the
        polarity-normalised ``vgs``, ``vds``, ``vbs``.
        """
        v = self.padded(x)
        s = self.mos_sign
        vd, vg, vs, vb = v[self.mos_d], v[self.mos_g], v[self.mos_s], v[self.mos_b]
        vds = s * (vd - vs)
        rev = vds < 0
        d_eff = np.where(rev, self.mos_s, self.mos_d)
        s_eff = np.where(rev, self.mos_d, self.mos_s)
        vsrc = np.where(rev, vd, vs)
        vgs_n = s * (vg - vsrc)
        vds_n = np.abs(vds)
        vbs_n = s * (vb - vsrc)
        ids, gm, gds, gmb = devmodel.evaluate(
            self.mos_k, self.mos_vth0, self.mos_m, self.mos_ld, self.mos_lb,
            self.constants.thermal_voltage, vgs_n, vds_n, vbs_n)
        return {
            "ids": ids, "gm": gm, "gds": gds, "gmb": gmb,
            "d": d_eff, "s": s_eff, "reversed": rev,
            "vgs": vgs_n, "vds": vds_n, "vbs": vbs_n,
        }

    def drain_currents(self, x):
        """Signed current into each MOSFET's drain terminal (netlist order)."""
        st = self.device_state(x)
        return np.where(st["reversed"], -1.0, 1.0) * self.mos_sign * st["ids"]

    def device_jacobian(self, st):
        """Padded Jacobian contribution of the MOSFETs for a device state."""
        n = self.size + 1
        J = np.zeros((n, n))
        d, s, g, b = st["d"], st["s"], self.mos_g, self.mos_b
        gm, gds, gmb = st["gm"], st["gds"], st["gmb"]
        gsum = gm + gds + gmb
        for row, sign in ((d, 1.0), (s, -1.0)):
            np.add.at(J, (row, g), sign * gm)
            np.add.at(J, (row, d), sign * gds)
            np.add.at(J, (row, b), sign * gmb)
            np.add.at(J, (row, s), -sign * gsum)
        return J

    def residual_jacobian(self, x, b, gmin=0.0):
        st = self.device_state(x)
        n = self.size + 1
        current = self.mos_sign * st["ids"]
        f_dev = np.zeros(n)
        np.add.at(f_dev, st["d"], current)
        np.add.at(f_dev, st["s"], -current)
        J = self.G + self.device_jacobian(st)[: self.size, : self.size]
        F = self.G @ x + f_dev[: self.size] - b
        if gmin:
            idx = np.arange(self.n_nodes)
            J[idx, idx] += gmin
            F[: self.n_nodes] += gmin * x[: self.n_nodes]
        return F, J

    def small_signal_matrix(self, x):
        """Real part of the small-signal MNA matrix at operating point ``x``."""
        st = self.device_state(x)
        return self.G + self.device_jacobian(st)[: self.size, : self.size]

    def small_signal_matrix_full(self, x):
        """Same as :meth:`small_signal_matrix` but keeping the ground row/column."""
        st = self.device_state(x)
        return self.G_full + self.device_jacobian(st)

    def ac_excitation(self):
        """Complex RHS from the sources' AC specs, and the driving phasor."""
        b = np.zeros(self.size, dtype=complex)
        driven = []
        for src in self.vsources:
            if src.ac_mag:
                phasor = src.ac_mag * np.exp(1j * np.deg2rad(src.ac_phase))
                b[self.source_index[src.name]] = phasor
                driven.append((src.name, phasor))
        return b, driven

    # -- structure -----------------------------------------------------------

    def check_dc_paths(self):
        """Raise :class:`SingularMatrix` if some node has no DC path to ground."""
        adj = defaultdict(set)

        def link(a, c):
            adj[a].add(c)
            adj[c].add(a)

        for el in self.netlist.elements:
            if isinstance(el, (Resistor, VSource)):
                link(*el.terminals)
            elif isinstance(el, Mosfet):
                link(el.drain, el.source)
        seen, stack = {GROUND}, [GROUND]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        floating = [n for n in self.node_names if n not in seen]
        if floating:
            raise SingularMatrix(f"no DC path to ground from node(s): {', '.join(floating)}")
