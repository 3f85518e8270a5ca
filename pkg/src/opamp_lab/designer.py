"""Design synthesis for the two-stage Miller amplifier.

Goals -> branch currents -> device sizes (inverse subthreshold law) ->
compensation network (Cc from the unity-gain bandwidth, Rc from the phase
margin) -> calibrated netlist. Also constant-voltage technology scaling.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

from . import devmodel
from .acengine import SmallSignalBuilder
from .devmodel import BiasPoint, Geometry, Polarity
from .errors import AspectRatioOutOfRange, BelowMinLength, DesignError
from .netlist import AcDec, Capacitor, Mosfet, Netlist, NoiseCard, OpCard, Resistor, VSource
from .units import parse_value

ASPECT_RANGE = (0.1, 1e4)
MIN_LENGTH = {"180nm": 0.18e-6, "90nm": 0.09e-6, "45nm": 0.045e-6}

# Device roles: polarity and which budget current flows through each.
DEVICES = {
    "M1": (Polarity.NMOS, "id1"),
    "M2": (Polarity.NMOS, "id1"),
    "M3": (Polarity.PMOS, "id1"),
    "M4": (Polarity.PMOS, "id1"),
    "M5": (Polarity.NMOS, "tail"),
    "M6": (Polarity.PMOS, "id2"),
    "M7": (Polarity.NMOS, "id2"),
}


@dataclass(frozen=True)
class DesignGoals:
    open_loop_gain_db: float = 70.0
    ugb_hz: float = 40e3
    max_power_w: float = 100e-9
    phase_margin_deg: float = 70.0
    slew_v_per_s: float = 25e3
    vdd: float = 0.5
    cl: float = 10e-12

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive")
        if not self.phase_margin_deg < 90:
            raise ValueError("phase_margin_deg must lie in (0, 90)")
        if self.vdd > 0.5:
            warnings.warn(f"vdd={self.vdd} V is above the 0.5 V subthreshold regime", stacklevel=2)


@dataclass(frozen=True)
class CurrentBudget:
    """Per-branch first-stage current and second-stage current."""

    id_stage1: float
    id_stage2: float

    def __post_init__(self):
        if self.id_stage1 < 0 or self.id_stage2 < 0:
            raise ValueError("currents must be non-negative")

    @property
    def tail(self):
        return 2.0 * self.id_stage1

    def current(self, role):
        return {"id1": self.id_stage1, "id2": self.id_stage2, "tail": self.tail}[role]

    def check(self, goals):
        power = power_estimate(goals.vdd, self)
        if power > goals.max_power_w:
            warnings.warn(f"budget dissipates {power * 1e9:.2f} nW, above the "
                          f"{goals.max_power_w * 1e9:.2f} nW goal", stacklevel=2)
        return power


# Reference allocation per node (branch currents of the published design).
REFERENCE_BUDGETS = {
    "180nm": CurrentBudget(7.423e-9, 200.9e-9),
    "90nm": CurrentBudget(11.512e-9, 240.87e-9),
    "45nm": CurrentBudget(14.228e-9, 252.29e-9),
}

# Channel lengths of the published design, metres.
REFERENCE_LENGTHS = {
    "180nm": dict(M1=2e-6, M2=2e-6, M3=0.4e-6, M4=0.4e-6, M5=1e-6, M6=10.3e-6, M7=1e-6),
    "90nm": dict(M1=1e-6, M2=1e-6, M3=0.2e-6, M4=0.2e-6, M5=0.5e-6, M6=5.15e-6, M7=0.5e-6),
    "45nm": dict(M1=0.5e-6, M2=0.5e-6, M3=0.1e-6, M4=0.1e-6, M5=0.25e-6, M6=2.575e-6, M7=0.25e-6),
}

# Gate-source magnitudes (V) at which the inverse law returns the published
# aspect ratios, with |VDS| = VDD/2 (rounded to 0.1 mV).
REFERENCE_VGS = {
    "180nm": dict(M1=0.1171, M2=0.1171, M3=0.1152, M4=0.1152, M5=0.1465, M6=0.3473, M7=0.3045),
    "90nm": dict(M1=0.1361, M2=0.1361, M3=0.2689, M4=0.2689, M5=0.1601, M6=0.3697, M7=0.3601),
    "45nm": dict(M1=0.1363, M2=0.1363, M3=0.1397, M4=0.1397, M5=0.1724, M6=0.3535, M7=0.3081),
}


@dataclass(frozen=True)
class CompensationInputs:
    gm1: float
    gm7: float
    c1: float
    cl: float
    phi_m: float  # degrees

    def __post_init__(self):
        for name in ("gm1", "gm7", "c1", "cl"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.phi_m < 90:
            raise ValueError("phi_m must lie in (0, 90) degrees")


@dataclass(frozen=True)
class DesignResult:
    node: str
    geometries: dict
    cc: float
    rc: float
    c1: float
    budget: CurrentBudget
    vdd: float
    cl: float
    power_w: float
    vref1: float = None
    vref2: float = None
    gm1: float = None
    gm7: float = None
    phase_margin_deg: float = 70.0
    ugb_hz: float = 40e3
    notes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        expected = power_estimate(self.vdd, self.budget)
        if not math.isclose(self.power_w, expected, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError("power_w must equal vdd*(2*id1 + id2)")

    @property
    def id1(self):
        return self.budget.id_stage1

    @property
    def id2(self):
        return self.budget.id_stage2


# --- individual design equations -------------------------------------------------


def transconductance(current, tech, polarity=Polarity.NMOS):
    """Weak-inversion gm = ID / (m VT)."""
    p = tech.params(polarity)
    return current / (p.m * tech.constants.thermal_voltage)


def compensation_cap(gm1, ugb_hz):
    """Miller capacitor setting the unity-gain bandwidth: Cc = gm1 / (2 pi UGB)."""
    if not (gm1 > 0 and ugb_hz > 0):
        raise ValueError("gm1 and ugb_hz must be positive")
    return gm1 / (2.0 * math.pi * ugb_hz)


def compensation_res(ci):
    """Nulling resistor for the requested phase margin.

    Rc = (1 + sqrt(1 + 4 gm7 CL / (gm1 C1 tan(phi)))) / (2 gm7)
    """
    tan_phi = math.tan(math.radians(ci.phi_m))
    root = math.sqrt(1.0 + 4.0 * ci.gm7 * ci.cl / (ci.gm1 * ci.c1 * tan_phi))
    return (1.0 + root) / (2.0 * ci.gm7)


def implied_c1(gm1, gm7, cl, phi_m, rc):
    """Stage-1 capacitance at which :func:`compensation_res` returns ``rc``."""
    u = 2.0 * gm7 * rc - 1.0
    if not u > 1.0:
        raise DesignError(f"Rc={rc:g} ohm is not above 1/gm7={1 / gm7:g} ohm")
    return 4.0 * gm7 * cl / (gm1 * math.tan(math.radians(phi_m)) * (u * u - 1.0))


def consistent_c1(gm1, gm7, cc, cl, phi_m):
    """Stage-1 capacitance for which the Rc formula also cancels the output pole.

    The Rc formula assumes the left-half-plane zero of the RC-CC branch sits on
    the non-dominant pole, i.e. Rc = (1 + CL/Cc)/gm7. Picking C1 to satisfy
    both makes the synthesized network meet its own phase-margin target.
    """
    return implied_c1(gm1, gm7, cl, phi_m, (1.0 + cl / cc) / gm7)


def power_estimate(vdd, budget):
    """Static power: vdd * (2 id1 + id2)."""
    return vdd * (2.0 * budget.id_stage1 + budget.id_stage2)


def size_devices(goals, budget, vgs_targets, tech, lengths, vds=None):
    """Aspect ratio from the inverse subthreshold law at each device's target VGS.

    ``vgs_targets`` and ``lengths`` map device names to |VGS| (V) and L (m);
    |VDS| defaults to vdd/2 for every device. Returns ``{name: Geometry}``.
    """
    vds = goals.vdd / 2.0 if vds is None else vds
    out = {}
    for name, (polarity, role) in DEVICES.items():
        vgs = vgs_targets[name]
        if not 0 < vgs < goals.vdd:
            raise DesignError(f"{name}: target |VGS|={vgs} V outside (0, vdd)")
        p = tech.params(polarity)
        s = polarity.sign
        bias = BiasPoint(vgs=s * vgs, vds=s * vds, vbs=0.0)
        ratio = devmodel.required_aspect_ratio(p, budget.current(role), bias, tech.constants)
        lo, hi = ASPECT_RANGE
        if not lo <= ratio <= hi:
            raise AspectRatioOutOfRange(f"{name}: W/L={ratio:.4g} outside [{lo:g}, {hi:g}]")
        length = lengths[name]
        out[name] = Geometry(width=ratio * length, length=length)
    return out


def node_name(tech):
    return tech.name or "180nm"


def min_length(tech):
    return tech.min_length or MIN_LENGTH.get(tech.name, 0.0)


def design(goals, tech, budget=None, vgs_targets=None, lengths=None, c1=None,
           calibrate=True):
    """Run the whole synthesis for one technology node.

    Defaults come from the published reference design of the same node
    (``tech.name``). ``c1`` defaults to :func:`consistent_c1`.
    """
    node = node_name(tech)
    budget = budget or REFERENCE_BUDGETS[node]
    vgs_targets = vgs_targets or REFERENCE_VGS[node]
    lengths = lengths or REFERENCE_LENGTHS[node]
    budget.check(goals)
    geoms = size_devices(goals, budget, vgs_targets, tech, lengths)
    gm1 = transconductance(budget.id_stage1, tech)
    gm7 = transconductance(budget.id_stage2, tech)
    cc = compensation_cap(gm1, goals.ugb_hz)
    notes = []
    if c1 is None:
        c1 = consistent_c1(gm1, gm7, cc, goals.cl, goals.phase_margin_deg)
        notes.append("c1 chosen so the nulling zero cancels the output pole")
    rc = compensation_res(CompensationInputs(gm1, gm7, c1, goals.cl, goals.phase_margin_deg))
    result = DesignResult(node, geoms, cc, rc, c1, budget, goals.vdd, goals.cl,
                          power_estimate(goals.vdd, budget), gm1=gm1, gm7=gm7,
                          phase_margin_deg=goals.phase_margin_deg, ugb_hz=goals.ugb_hz,
                          notes=tuple(notes))
    if calibrate:
        result = calibrate_design(result, tech)
    return result


def calibrate_design(result, tech, bounds=(0.0, None)):
    """Fill in VREF1/VREF2 by DC bisection on the generated netlist."""
    from .opsolver import calibrate_vref

    net = build_netlist(result, tech)
    hi = bounds[1] if bounds[1] is not None else result.vdd
    refs = calibrate_vref(net, {"VREF1": ("M5", result.budget.tail),
                                "VREF2": ("M6", result.id2)},
                          bounds=(bounds[0], hi), constants=tech.constants)
    return replace(result, vref1=refs["VREF1"], vref2=refs["VREF2"])


def scale_design(d, s, tech_target, budget=None, ugb_hz=None, phase_margin_deg=None):
    """Constant-voltage scaling: every W and L divided by ``s``.

    Voltages stay put; Cc and Rc are re-derived from the target node's
    currents (``budget``, defaulting to the reference allocation of
    ``tech_target.name`` or else the source design's) and device parameters.
    VREFs are cleared since they need recalibration.
    """
    if not s > 0:
        raise ValueError("scaling factor must be positive")
    floor = min_length(tech_target)
    geoms = {}
    for name, g in d.geometries.items():
        length = g.length / s
        if length < floor * (1 - 1e-12):
            raise BelowMinLength(f"{name}: L={length:.4g} m below the {floor:.4g} m minimum")
        geoms[name] = Geometry(g.width / s, length)
    node = tech_target.name or d.node
    budget = budget or REFERENCE_BUDGETS.get(node, d.budget)
    ugb = ugb_hz or d.ugb_hz
    phi = phase_margin_deg or d.phase_margin_deg
    gm1 = transconductance(budget.id_stage1, tech_target)
    gm7 = transconductance(budget.id_stage2, tech_target)
    cc = compensation_cap(gm1, ugb)
    c1 = consistent_c1(gm1, gm7, cc, d.cl, phi)
    rc = compensation_res(CompensationInputs(gm1, gm7, c1, d.cl, phi))
    return DesignResult(node, geoms, cc, rc, c1, budget, d.vdd, d.cl,
                        power_estimate(d.vdd, budget), gm1=gm1, gm7=gm7,
                        phase_margin_deg=phi, ugb_hz=ugb)


# --- generated artefacts -----------------------------------------------------------


def build_netlist(result, tech, vin_dc=None, title=None):
    """Open-loop bench netlist for a design (same topology as the bundled circuits)."""
    vin_dc = result.vdd / 2.0 if vin_dc is None else vin_dc
    g = result.geometries
    vref1 = result.vref1 if result.vref1 is not None else 0.15
    vref2 = result.vref2 if result.vref2 is not None else 0.15
    elements = (
        VSource("VDD", "vdd", "0", result.vdd),
        VSource("VREF1", "vref1", "0", vref1),
        VSource("VREF2", "vref2", "0", vref2),
        VSource("VIN", "inp", "0", vin_dc, 1.0, 0.0),
        Mosfet("M1", "n1", "inn", "tail", "tail", "nch", g["M1"]),
        Mosfet("M2", "o1", "inp", "tail", "tail", "nch", g["M2"]),
        Mosfet("M3", "n1", "n1", "vdd", "vdd", "pch", g["M3"]),
        Mosfet("M4", "o1", "n1", "vdd", "vdd", "pch", g["M4"]),
        Mosfet("M5", "tail", "vref1", "0", "0", "nch", g["M5"]),
        Mosfet("M6", "out", "vref2", "vdd", "vdd", "pch", g["M6"]),
        Mosfet("M7", "out", "o1", "0", "0", "nch", g["M7"]),
        Resistor("RC", "o1", "x", result.rc),
        Capacitor("CC", "x", "out", result.cc),
        Capacitor("CL", "out", "0", result.cl),
        Resistor("RFB", "out", "inn", 1e12),
        Capacitor("CFB", "inn", "0", 1.0),
    )
    analyses = (OpCard(), AcDec(100, 1e-3, 1e7), NoiseCard("out", "VIN", 20, 1.0, 1e5))
    return Netlist(title or f"two-stage Miller OTA, {result.node} (generated)", elements,
                   {"nch": tech.nmos, "pch": tech.pmos}, analyses)


def macromodel(gm1, gm7, g1, g2, c1, cc, rc, cl):
    """Two-stage small-signal macromodel driven by a 1 V AC source at ``in``.

    Each stage is an inverting transconductor loaded by a conductance and a
    capacitance (g1, c1 at ``o1``; g2, CL at ``out``), so the overall DC gain
    is positive. Series RC-CC between ``o1`` and ``out`` via internal node ``x``.
    """
    b = SmallSignalBuilder()
    b.vsource("in", "0", ac=1.0, name="VIN")
    b.vccs("o1", "0", "in", "0", gm1)
    b.conductance("o1", "0", g1)
    b.capacitor("o1", "0", c1)
    b.vccs("out", "0", "o1", "0", gm7)
    b.conductance("out", "0", g2)
    b.capacitor("out", "0", cl)
    b.resistor("o1", "x", rc)
    b.capacitor("x", "out", cc)
    return b.build()


def output_conductances(result, tech):
    """(g1, g2): stage output conductances from the model at |VDS| = vdd/2."""
    half = result.vdd / 2.0

    def gds(name, polarity, current):
        p = tech.params(polarity)
        geo = result.geometries[name]
        # bias that carries the branch current at |VDS| = vdd/2
        vth = p.vth0 - p.lambda_d * half
        mvt = p.m * tech.constants.thermal_voltage
        vgs = vth - mvt * math.log(geo.aspect_ratio * p.i0 / current)
        s = polarity.sign
        return devmodel.small_signal(p, geo, BiasPoint(s * vgs, s * half), tech.constants).gds

    g1 = gds("M2", Polarity.NMOS, result.id1) + gds("M4", Polarity.PMOS, result.id1)
    g2 = gds("M6", Polarity.PMOS, result.id2) + gds("M7", Polarity.NMOS, result.id2)
    return g1, g2


def design_macromodel(result, tech):
    g1, g2 = output_conductances(result, tech)
    return macromodel(result.gm1, result.gm7, g1, g2, result.c1, result.cc, result.rc, result.cl)


# --- file formats -------------------------------------------------------------------

_GOAL_KEYS = {f for f in DesignGoals.__dataclass_fields__}


def parse_goals(text):
    """Parse a ``key=value`` goals file into ``(DesignGoals, CurrentBudget|None, c1|None)``."""
    goals, extra = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        try:
            number = parse_value(value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if key in _GOAL_KEYS:
            goals[key] = number
        elif key in ("id1", "id2", "c1"):
            extra[key] = number
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    budget = None
    if "id1" in extra or "id2" in extra:
        if not ("id1" in extra and "id2" in extra):
            raise ValueError("id1 and id2 must be given together")
        budget = CurrentBudget(extra["id1"], extra["id2"])
    return DesignGoals(**goals), budget, extra.get("c1")


def load_goals(path):
    with open(path, encoding="utf-8") as fh:
        return parse_goals(fh.read())


def result_rows(result):
    """``(quantity, object, value, unit)`` rows describing a design."""
    rows = [("node", "design", result.node, "")]
    for name, g in result.geometries.items():
        rows.append(("width", name, g.width, "m"))
        rows.append(("length", name, g.length, "m"))
        rows.append(("aspect_ratio", name, g.aspect_ratio, ""))
    rows += [
        ("current", "id1", result.id1, "A"),
        ("current", "id2", result.id2, "A"),
        ("capacitance", "CC", result.cc, "F"),
        ("resistance", "RC", result.rc, "ohm"),
        ("capacitance", "C1", result.c1, "F"),
        ("capacitance", "CL", result.cl, "F"),
        ("voltage", "VDD", result.vdd, "V"),
    ]
    if result.vref1 is not None:
        rows.append(("voltage", "VREF1", result.vref1, "V"))
    if result.vref2 is not None:
        rows.append(("voltage", "VREF2", result.vref2, "V"))
    rows.append(("power", "total", result.power_w, "W"))
    return rows


def parse_result_rows(rows):
    """Inverse of :func:`result_rows` (rows as string tuples)."""
    widths, lengths, scalars = {}, {}, {}
    node = ""
    for quantity, obj, value, _unit in rows:
        if quantity == "node":
            node = value
        elif quantity == "width":
            widths[obj] = float(value)
        elif quantity == "length":
            lengths[obj] = float(value)
        elif quantity != "aspect_ratio":
            scalars[obj] = float(value)
    geoms = {name: Geometry(widths[name], lengths[name]) for name in widths}
    budget = CurrentBudget(scalars["id1"], scalars["id2"])
    vdd = scalars["VDD"]
    return DesignResult(node, geoms, scalars["CC"], scalars["RC"], scalars["C1"], budget,
                        vdd, scalars["CL"], power_estimate(vdd, budget),
                        scalars.get("VREF1"), scalars.get("VREF2"))


def closure_metrics(result, tech, sweep=AcDec(100, 1e-2, 1e8)):
    """Bode metrics of the design's own macromodel."""
    from .acengine import ac_sweep, bode_metrics

    return bode_metrics(ac_sweep(design_macromodel(result, tech), sweep, "out"))

