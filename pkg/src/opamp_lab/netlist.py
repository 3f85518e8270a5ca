"""A small SPICE dialect: parse, validate and serialise.

Grammar (case-insensitive, ``*`` starts a comment line, node ``0`` is ground)::

    M<name> <nd> <ng> <ns> <nb> <model> W=<val> L=<val>
    R<name> <n1> <n2> <val>
    C<name> <n1> <n2> <val>
    V<name> <n+> <n-> DC <val> [AC <mag> [<phase_deg>]]
    I<name> <n+> <n-> DC <val>
    .model <name> NMOS|PMOS (VTH0=<val> I0=<val> M=<val> LAMBDA_D=<val> [LAMBDA_B=<val>])
    .op | .ac dec <pts> <fstart> <fstop>
    .noise <node> <vsource> dec <pts> <fstart> <fstop> | .tran <step> <stop>
    .end

A ``*`` comment on the very first line is kept as the netlist title. Lines
starting with ``+`` continue the previous card. Element names are stored
upper-case, node and model names lower-case.
"""

import re
from collections import Counter
from dataclasses import dataclass, field, replace

from .devmodel import DeviceParams, Geometry, Polarity
from .errors import OpampLabError
from .units import format_value, parse_value

GROUND = "0"


# --- diagnostics -------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    line: int = 0
    column: int = 0
    severity: str = "error"

    def __str__(self):
        where = f"{self.line}:{self.column}: " if self.line else ""
        return f"{where}{self.severity}: {self.code}: {self.message}"


class NetlistError(OpampLabError):
    """Raised by :func:`parse`; carries every diagnostic found."""

    code = "NetlistError"

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0] if self.diagnostics else None
        super().__init__(str(first) if first else self.code)

    @property
    def line(self):
        return self.diagnostics[0].line if self.diagnostics else 0


class LexError(NetlistError):
    code = "LexError"


class UndefinedModel(NetlistError):
    code = "UndefinedModel"


class DuplicateName(NetlistError):
    code = "DuplicateName"


class DanglingNode(NetlistError):
    code = "DanglingNode"


class MissingEnd(NetlistError):
    code = "MissingEnd"


class InvalidValue(NetlistError):
    code = "InvalidValue"


class MissingGround(NetlistError):
    code = "MissingGround"


class UnknownReference(NetlistError):
    code = "UnknownReference"


_ERROR_CLASSES = {
    cls.code: cls
    for cls in (LexError, UndefinedModel, DuplicateName, DanglingNode, MissingEnd,
                InvalidValue, MissingGround, UnknownReference)
}


# --- circuit graph -------------------------------------------------------------


@dataclass(frozen=True)
class Mosfet:
    name: str
    drain: str
    gate: str
    source: str
    bulk: str
    model: str
    geometry: Geometry

    @property
    def terminals(self):
        return (self.drain, self.gate, self.source, self.bulk)


@dataclass(frozen=True)
class Resistor:
    name: str
    n1: str
    n2: str
    value: float

    @property
    def terminals(self):
        return (self.n1, self.n2)


@dataclass(frozen=True)
class Capacitor:
    name: str
    n1: str
    n2: str
    value: float

    @property
    def terminals(self):
        return (self.n1, self.n2)


@dataclass(frozen=True)
class VSource:
    name: str
    npos: str
    nneg: str
    dc: float
    ac_mag: float = 0.0
    ac_phase: float = 0.0

    @property
    def terminals(self):
        return (self.npos, self.nneg)


@dataclass(frozen=True)
class ISource:
    """Current ``dc`` flows from ``npos`` through the source into ``nneg``."""

    name: str
    npos: str
    nneg: str
    dc: float

    @property
    def terminals(self):
        return (self.npos, self.nneg)


@dataclass(frozen=True)
class OpCard:
    pass


@dataclass(frozen=True)
class AcDec:
    points_per_decade: int
    f_start: float
    f_stop: float


@dataclass(frozen=True)
class NoiseCard:
    output_node: str
    input_source: str
    points_per_decade: int
    f_start: float
    f_stop: float

    @property
    def sweep(self):
        return AcDec(self.points_per_decade, self.f_start, self.f_stop)


@dataclass(frozen=True)
class TranCard:
    step: float
    stop: float


@dataclass(frozen=True)
class Netlist:
    title: str = ""
    elements: tuple = ()
    models: dict = field(default_factory=dict)
    analyses: tuple = ()

    @property
    def nodes(self):
        """Node names in order of first appearance, ground first."""
        seen = {GROUND: None}
        for el in self.elements:
            for node in el.terminals:
                seen.setdefault(node, None)
        return tuple(seen)

    def element(self, name):
        key = name.upper()
        for el in self.elements:
            if el.name == key:
                return el
        raise KeyError(name)

    def of_type(self, kind):
        return tuple(el for el in self.elements if isinstance(el, kind))

    def analysis(self, kind):
        for card in self.analyses:
            if isinstance(card, kind):
                return card
        return None

    def replace_element(self, name, **changes):
        key = name.upper()
        if not any(el.name == key for el in self.elements):
            raise KeyError(name)
        elements = tuple(replace(el, **changes) if el.name == key else el
                         for el in self.elements)
        return replace(self, elements=elements)

    def with_source(self, name, dc):
        return self.replace_element(name, dc=float(dc))

    def without(self, *names):
        drop = {n.upper() for n in names}
        return replace(self, elements=tuple(el for el in self.elements if el.name not in drop))

    def with_models(self, tech):
        """Swap every model's parameters for the technology's set of the same polarity."""
        models = {name: tech.params(p.polarity) for name, p in self.models.items()}
        return replace(self, models=models)

    def merge_nodes(self, keep, drop):
        """Rename node ``drop`` to ``keep`` on every terminal."""
        keep, drop = keep.lower(), drop.lower()

        def rename(el):
            changes = {}
            for attr in ("drain", "gate", "source", "bulk", "n1", "n2", "npos", "nneg"):
                if getattr(el, attr, None) == drop:
                    changes[attr] = keep
            return replace(el, **changes) if changes else el

        return replace(self, elements=tuple(rename(el) for el in self.elements))


# --- lexer / parser --------------------------------------------------------------

_TOKEN_RE = re.compile(r"[^\s()=,]+|=")
_MODEL_KEYS = {"vth0": "vth0", "i0": "i0", "m": "m", "lambda_d": "lambda_d", "lambda_b": "lambda_b"}
_NODE_RE = re.compile(r"^[A-Za-z0-9_.:#\[\]<>!+-]+$")


class _Collector:
    def __init__(self):
        self.items = []

    def add(self, code, message, line=0, column=0, severity="error"):
        self.items.append(Diagnostic(code, message, line, column, severity))

    @property
    def errors(self):
        return [d for d in self.items if d.severity == "error"]


def _tokens(text):
    """Return ``[(token, column)]`` with 1-based columns."""
    return [(m.group(0), m.start() + 1) for m in _TOKEN_RE.finditer(text)]


def _logical_lines(text):
    """Join ``+`` continuation lines onto their card; returns ``[(lineno, text)]``."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if stripped.startswith("+") and out:
            prev_no, prev_text = out[-1]
            out[-1] = (prev_no, prev_text + " " + stripped[1:])
        else:
            out.append((lineno, raw))
    return out


class _Line:
    def __init__(self, lineno, text, diags):
        self.lineno = lineno
        self.toks = _tokens(text)
        self.diags = diags

    def fail(self, code, message, column=1):
        self.diags.add(code, message, self.lineno, column)
        return None

    def value(self, index, what):
        if index >= len(self.toks):
            return self.fail("LexError", f"missing {what}", self.toks[-1][1] if self.toks else 1)
        tok, col = self.toks[index]
        try:
            return parse_value(tok)
        except ValueError:
            return self.fail("LexError", f"bad value {tok!r} for {what}", col)

    def node(self, index, what):
        if index >= len(self.toks):
            return self.fail("LexError", f"missing {what}", self.toks[-1][1] if self.toks else 1)
        tok, col = self.toks[index]
        if tok == "=" or not _NODE_RE.match(tok):
            return self.fail("LexError", f"bad node name {tok!r}", col)
        return tok.lower()

    def keyvalues(self, start):
        """Parse ``KEY = VAL`` pairs from token ``start`` on."""
        pairs = {}
        toks = self.toks[start:]
        i = 0
        while i < len(toks):
            key, col = toks[i]
            if key == "=" or i + 1 >= len(toks) or toks[i + 1][0] != "=":
                return self.fail("LexError", f"expected KEY=VALUE at {key!r}", col)
            if i + 2 >= len(toks) or toks[i + 2][0] == "=":
                return self.fail("LexError", f"missing value for {key!r}", col)
            vtok, vcol = toks[i + 2]
            try:
                pairs[key.lower()] = (parse_value(vtok), vcol, col)
            except ValueError:
                return self.fail("LexError", f"bad value {vtok!r} for {key}", vcol)
            i += 3
        return pairs


def _positive(line, value, what, column):
    if value is None:
        return None
    if not value > 0:
        return line.fail("InvalidValue", f"{what} must be positive, got {value!r}", column)
    return value


def _parse_element(line):
    name, col = line.toks[0]
    if "=" in name or not re.match(r"^[A-Za-z][A-Za-z0-9_.]*$", name):
        return line.fail("LexError", f"bad element name {name!r}", col)
    name = name.upper()
    kind = name[0]
    n = len(line.toks)
    if kind in "RC":
        if n != 4:
            return line.fail("LexError", f"{name}: expected 2 nodes and a value", col)
        n1, n2 = line.node(1, "node"), line.node(2, "node")
        value = _positive(line, line.value(3, "value"), name, line.toks[3][1])
        if None in (n1, n2, value):
            return None
        cls = Resistor if kind == "R" else Capacitor
        return cls(name, n1, n2, value)
    if kind == "M":
        if n < 6:
            return line.fail("LexError", f"{name}: expected 4 nodes and a model", col)
        nodes = [line.node(i, "node") for i in range(1, 5)]
        model_tok, mcol = line.toks[5]
        if model_tok == "=":
            return line.fail("LexError", f"{name}: missing model name", mcol)
        params = line.keyvalues(6)
        if None in nodes or params is None:
            return None
        unknown = set(params) - {"w", "l"}
        if unknown:
            key = sorted(unknown)[0]
            return line.fail("LexError", f"{name}: unknown parameter {key.upper()}", params[key][2])
        if "w" not in params or "l" not in params:
            return line.fail("LexError", f"{name}: W= and L= are required", col)
        w = _positive(line, params["w"][0], "W", params["w"][1])
        l_ = _positive(line, params["l"][0], "L", params["l"][1])
        if w is None or l_ is None:
            return None
        return Mosfet(name, *nodes, model_tok.lower(), Geometry(w, l_))
    if kind in "VI":
        if n < 5 or line.toks[3][0].lower() != "dc":
            return line.fail("LexError", f"{name}: expected '<n+> <n-> DC <value>'", col)
        npos, nneg = line.node(1, "node"), line.node(2, "node")
        dc = line.value(4, "DC value")
        if None in (npos, nneg, dc):
            return None
        if kind == "I":
            if n != 5:
                return line.fail("LexError", f"{name}: unexpected token {line.toks[5][0]!r}", line.toks[5][1])
            return ISource(name, npos, nneg, dc)
        ac_mag, ac_phase = 0.0, 0.0
        if n > 5:
            if line.toks[5][0].lower() != "ac" or n > 8:
                return line.fail("LexError", f"{name}: unexpected token {line.toks[5][0]!r}", line.toks[5][1])
            ac_mag = line.value(6, "AC magnitude")
            ac_phase = line.value(7, "AC phase") if n == 8 else 0.0
            if ac_mag is None or ac_phase is None:
                return None
        return VSource(name, npos, nneg, dc, ac_mag, ac_phase)
    return line.fail("LexError", f"unknown element type {kind!r}", col)


def _parse_model(line):
    if len(line.toks) < 3:
        return line.fail("LexError", ".model needs a name and a type")
    name, _ = line.toks[1]
    kind, kcol = line.toks[2]
    if kind.lower() not in ("nmos", "pmos"):
        return line.fail("LexError", f"unknown model type {kind!r}", kcol)
    params = line.keyvalues(3)
    if params is None:
        return None
    fields = {}
    for key, (value, vcol, kcol2) in params.items():
        if key not in _MODEL_KEYS:
            return line.fail("LexError", f"unknown model parameter {key.upper()}", kcol2)
        fields[_MODEL_KEYS[key]] = value
    missing = {"vth0", "i0", "m", "lambda_d"} - set(fields)
    if missing:
        return line.fail("LexError", f"model {name}: missing {', '.join(sorted(k.upper() for k in missing))}")
    try:
        params = DeviceParams(Polarity(kind.lower()), **fields)
    except ValueError as exc:
        return line.fail("InvalidValue", f"model {name}: {exc}")
    return name.lower(), params


def _sweep(line, start):
    if len(line.toks) != start + 4 or line.toks[start][0].lower() != "dec":
        return line.fail("LexError", "expected 'dec <pts> <fstart> <fstop>'")
    pts = line.value(start + 1, "points per decade")
    f1 = line.value(start + 2, "start frequency")
    f2 = line.value(start + 3, "stop frequency")
    if None in (pts, f1, f2):
        return None
    if pts != int(pts) or pts < 1:
        return line.fail("InvalidValue", "points per decade must be a positive integer", line.toks[start + 1][1])
    if not 0 < f1 < f2:
        return line.fail("InvalidValue", "need 0 < fstart < fstop", line.toks[start + 2][1])
    return int(pts), f1, f2


def _parse_card(line):
    card = line.toks[0][0].lower()
    if card == ".op":
        if len(line.toks) != 1:
            return line.fail("LexError", ".op takes no arguments", line.toks[1][1])
        return OpCard()
    if card == ".ac":
        sweep = _sweep(line, 1)
        return AcDec(*sweep) if sweep else None
    if card == ".noise":
        if len(line.toks) < 3:
            return line.fail("LexError", ".noise needs <node> <vsource>")
        node = line.node(1, "output node")
        source = line.toks[2][0].upper()
        sweep = _sweep(line, 3)
        if node is None or sweep is None:
            return None
        return NoiseCard(node, source, *sweep)
    if card == ".tran":
        if len(line.toks) != 3:
            return line.fail("LexError", "expected '.tran <step> <stop>'")
        step, stop = line.value(1, "step"), line.value(2, "stop")
        if step is None or stop is None:
            return None
        if not 0 < step < stop:
            return line.fail("InvalidValue", "need 0 < step < stop", line.toks[1][1])
        return TranCard(step, stop)
    return line.fail("LexError", f"unknown control card {line.toks[0][0]!r}", line.toks[0][1])


def _check(netlist, diags, lines=None):
    """Structural invariants shared by parse and validate."""
    lines = lines or {}
    names = Counter(el.name for el in netlist.elements)
    for el in netlist.elements:
        if names[el.name] > 1:
            diags.add("DuplicateName", f"element {el.name} defined more than once", lines.get(id(el), 0), 1)
            names[el.name] = 0
    for el in netlist.elements:
        if isinstance(el, Mosfet) and el.model not in netlist.models:
            diags.add("UndefinedModel", f"{el.name} references undefined model {el.model!r}",
                      lines.get(id(el), 0), 1)
    touches = Counter(node for el in netlist.elements for node in el.terminals)
    if netlist.elements and GROUND not in touches:
        diags.add("MissingGround", "no element connects to ground node 0")
    for node, count in touches.items():
        if node != GROUND and count == 1:
            owner = next(el for el in netlist.elements if node in el.terminals)
            diags.add("DanglingNode", f"node {node!r} is only touched by {owner.name}",
                      lines.get(id(owner), 0), 1)
    sources = {el.name for el in netlist.of_type(VSource)}
    for card in netlist.analyses:
        if isinstance(card, NoiseCard):
            if card.input_source not in sources:
                diags.add("UnknownReference", f".noise input source {card.input_source} not defined")
            if card.output_node not in touches:
                diags.add("UnknownReference", f".noise output node {card.output_node!r} not in circuit")
    # gates fed only through capacitors have no DC definition
    resistive = Counter()
    for el in netlist.elements:
        if isinstance(el, Mosfet):
            for node in (el.drain, el.source):
                resistive[node] += 1
        elif not isinstance(el, Capacitor):
            for node in el.terminals:
                resistive[node] += 1
    gates = {el.gate for el in netlist.of_type(Mosfet)}
    for node in sorted(gates):
        if node != GROUND and resistive[node] == 0:
            diags.add("FloatingGate", f"gate node {node!r} is driven only by capacitors",
                      severity="warning")


def validate(netlist):
    """Return diagnostics (errors and warnings); empty means fully valid."""
    diags = _Collector()
    _check(netlist, diags)
    return diags.items


def parse(text):
    """Parse netlist text (``str`` or ``bytes``).

    Returns a :class:`Netlist`; on any error raises the :class:`NetlistError`
    subclass matching the first problem, with all diagnostics attached.
    """
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    text = text.replace("\x00", " ")
    diags = _Collector()
    title = ""
    elements, analyses, models = [], [], {}
    lines = {}
    ended = False
    first = True
    for lineno, raw in _logical_lines(text):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("*"):
            if first:
                title = stripped[1:].strip()
            first = False
            continue
        first = False
        if ended:
            diags.add("LexError", "content after .end", lineno, 1)
            break
        line = _Line(lineno, stripped, diags)
        if not line.toks:
            continue
        head = line.toks[0][0].lower()
        if head == ".end":
            if len(line.toks) > 1:
                line.fail("LexError", ".end takes no arguments", line.toks[1][1])
            ended = True
        elif head == ".title":
            title = stripped[len(".title"):].strip()
        elif head == ".model":
            parsed = _parse_model(line)
            if parsed:
                name, params = parsed
                if name in models:
                    line.fail("DuplicateName", f"model {name} defined more than once")
                models[name] = params
        elif head.startswith("."):
            card = _parse_card(line)
            if card is not None:
                analyses.append(card)
        else:
            el = _parse_element(line)
            if el is not None:
                elements.append(el)
                lines[id(el)] = lineno
    if not ended:
        diags.add("MissingEnd", "netlist has no .end card")
    netlist = Netlist(title, tuple(elements), models, tuple(analyses))
    if not diags.errors:
        _check(netlist, diags, lines)
    errors = diags.errors
    if errors:
        raise _ERROR_CLASSES.get(errors[0].code, NetlistError)(diags.items)
    return netlist


# --- serialiser --------------------------------------------------------------------


def _fmt_model(name, p):
    kind = p.polarity.value.upper()
    return (f".model {name} {kind} (VTH0={format_value(p.vth0)} I0={format_value(p.i0)} "
            f"M={format_value(p.m)} LAMBDA_D={format_value(p.lambda_d)} "
            f"LAMBDA_B={format_value(p.lambda_b)})")


def _fmt_element(el):
    if isinstance(el, Mosfet):
        return (f"{el.name} {el.drain} {el.gate} {el.source} {el.bulk} {el.model} "
                f"W={format_value(el.geometry.width)} L={format_value(el.geometry.length)}")
    if isinstance(el, (Resistor, Capacitor)):
        return f"{el.name} {el.n1} {el.n2} {format_value(el.value)}"
    if isinstance(el, VSource):
        text = f"{el.name} {el.npos} {el.nneg} DC {format_value(el.dc)}"
        if el.ac_mag or el.ac_phase:
            text += f" AC {format_value(el.ac_mag)}"
            if el.ac_phase:
                text += f" {format_value(el.ac_phase)}"
        return text
    if isinstance(el, ISource):
        return f"{el.name} {el.npos} {el.nneg} DC {format_value(el.dc)}"
    raise TypeError(f"unknown element {el!r}")


def _fmt_card(card):
    if isinstance(card, OpCard):
        return ".op"
    if isinstance(card, AcDec):
        return f".ac dec {card.points_per_decade} {format_value(card.f_start)} {format_value(card.f_stop)}"
    if isinstance(card, NoiseCard):
        return (f".noise {card.output_node} {card.input_source} dec {card.points_per_decade} "
                f"{format_value(card.f_start)} {format_value(card.f_stop)}")
    if isinstance(card, TranCard):
        return f".tran {format_value(card.step)} {format_value(card.stop)}"
    raise TypeError(f"unknown analysis {card!r}")


def serialize(netlist):
    """Canonical text; ``parse(serialize(n)) == n``."""
    out = [f"* {netlist.title}" if netlist.title else "*"]
    out += [_fmt_model(name, p) for name, p in netlist.models.items()]
    out += [_fmt_element(el) for el in netlist.elements]
    out += [_fmt_card(card) for card in netlist.analyses]
    out.append(".end")
    return "\n".join(out) + "\n"


def load(path):
    with open(path, "rb") as fh:
        return parse(fh.read())
