"""Weak-inversion MOSFET model.

Drain current::

    ID = (W/L) * I0 * exp((VGS - Vth) / (m*VT)) * (1 - exp(-VDS/VT))
    Vth = Vth0 - lambdaD*VDS - lambdaB*VBS

Terminal voltages are passed with their real signs. Internally every voltage
is multiplied by the polarity sign (+1 NMOS, -1 PMOS) so one code path serves
both device types; the returned drain current is signed the same way
(positive into an NMOS drain, negative into a PMOS drain).
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .units import format_value, parse_value

EXP_LIMIT = 60.0


class Polarity(enum.Enum):
    NMOS = "nmos"
    PMOS = "pmos"

    @property
    def sign(self):
        return 1.0 if self is Polarity.NMOS else -1.0


@dataclass(frozen=True)
class PhysicalConstants:
    boltzmann: float = 1.380649e-23
    elementary_charge: float = 1.602176634e-19
    temperature: float = 300.15

    @property
    def thermal_voltage(self):
        return self.boltzmann * self.temperature / self.elementary_charge


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class DeviceParams:
    polarity: Polarity
    vth0: float
    i0: float
    m: float
    lambda_d: float
    lambda_b: float = 0.0

    def __post_init__(self):
        if not isinstance(self.polarity, Polarity):
            object.__setattr__(self, "polarity", Polarity(str(self.polarity).lower()))
        if not self.i0 > 0:
            raise ValueError("i0 must be positive")
        if not 1.0 <= self.m <= 2.0:
            raise ValueError("slope factor m must lie in [1, 2]")
        if self.lambda_d < 0 or self.lambda_b < 0:
            raise ValueError("lambda_d and lambda_b must be non-negative")
        if not self.vth0 > 0:
            raise ValueError("vth0 is a magnitude and must be positive")


# Constants of the reference design (lambda_b not published, zero).
NMOS_DEFAULT = DeviceParams(Polarity.NMOS, vth0=0.3662, i0=288e-9, m=1.20, lambda_d=2.23e-3)
PMOS_DEFAULT = DeviceParams(Polarity.PMOS, vth0=0.3906, i0=74e-9, m=1.35, lambda_d=2.23e-3)


@dataclass(frozen=True)
class BiasPoint:
    vgs: float
    vds: float
    vbs: float = 0.0


@dataclass(frozen=True)
class Geometry:
    width: float
    length: float

    def __post_init__(self):
        if not (self.width > 0 and self.length > 0):
            raise ValueError("width and length must be positive")

    @property
    def aspect_ratio(self):
        return self.width / self.length


@dataclass(frozen=True)
class SmallSignalParams:
    gm: float
    gds: float
    gmb: float
    id: float


def evaluate(k, vth0, m, lambda_d, lambda_b, vt, vgs, vds, vbs):
    """Vectorised core in the conducting frame.

    All voltages must already be polarity-normalised with ``vds >= 0``.
    Returns ``(ids, gm, gds, gmb)`` where ``ids >= 0`` is the channel current
    magnitude and the conductances are its partial derivatives.
    """
    mvt = m * vt
    vth = vth0 - lambda_d * vds - lambda_b * vbs
    arg = np.clip((vgs - vth) / mvt, -EXP_LIMIT, EXP_LIMIT)
    forward = k * np.exp(arg)
    drain_tail = np.exp(-np.clip(vds / vt, 0.0, EXP_LIMIT))
    ids = forward * (1.0 - drain_tail)
    gm = ids / mvt
    gmb = lambda_b * ids / mvt
    gds = lambda_d * ids / mvt + forward * drain_tail / vt
    return ids, gm, gds, gmb


def threshold_voltage(p, b):
    """Effective threshold magnitude at bias ``b``."""
    s = p.polarity.sign
    vds = s * b.vds
    vbs = s * b.vbs
    if vds < 0:
        vbs -= vds
        vds = -vds
    return p.vth0 - p.lambda_d * vds - p.lambda_b * vbs


def _conducting_frame(p, b):
    s = p.polarity.sign
    vgs, vds, vbs = s * b.vgs, s * b.vds, s * b.vbs
    if vds >= 0:
        return vgs, vds, vbs, 1.0
    # source and drain swap roles
    return vgs - vds, -vds, vbs - vds, -1.0


def _scalar(p, g, b, c):
    vgs, vds, vbs, direction = _conducting_frame(p, b)
    k = g.aspect_ratio * p.i0
    out = evaluate(k, p.vth0, p.m, p.lambda_d, p.lambda_b,
                   c.thermal_voltage, vgs, vds, vbs)
    return tuple(float(x) for x in out), direction


def drain_current(p, g, b, c=DEFAULT_CONSTANTS):
    """Signed current flowing into the drain terminal."""
    (ids, _, _, _), direction = _scalar(p, g, b, c)
    return p.polarity.sign * direction * ids


def small_signal(p, g, b, c=DEFAULT_CONSTANTS):
    """Small-signal parameters in the conducting frame.

    ``id`` carries the same sign as :func:`drain_current`; the conductances are
    non-negative. ``gm == ID/(m*VT)`` holds exactly.
    """
    (ids, gm, gds, gmb), direction = _scalar(p, g, b, c)
    return SmallSignalParams(gm=gm, gds=gds, gmb=gmb, id=p.polarity.sign * direction * ids)


def required_aspect_ratio(p, id_target, b, c=DEFAULT_CONSTANTS):
    """W/L that carries ``id_target`` at bias ``b`` (saturated-channel form)."""
    if not id_target > 0:
        raise ValueError("id_target must be positive")
    vgs, _, _, _ = _conducting_frame(p, b)
    vth = threshold_voltage(p, b)
    mvt = p.m * c.thermal_voltage
    return (id_target / p.i0) * math.exp((vth - vgs) / mvt)


def finite_difference_oracle(p, g, b, c=DEFAULT_CONSTANTS, h=1e-6, wrt="vgs"):
    """Central difference of :func:`drain_current` w.r.t. one terminal voltage.

    Test oracle only. For PMOS the derivative of the (negative) drain current
    w.r.t. the (negative) terminal voltage is positive, matching the
    conductances returned by :func:`small_signal`.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-7, 1e-4] V")
    if wrt not in ("vgs", "vds", "vbs"):
        raise ValueError(f"unknown terminal {wrt!r}")

    def shifted(delta):
        values = {"vgs": b.vgs, "vds": b.vds, "vbs": b.vbs}
        values[wrt] += delta
        return drain_current(p, g, BiasPoint(**values), c)

    return (shifted(h) - shifted(-h)) / (2.0 * h)


def gm_finite_difference_oracle(p, g, b, c=DEFAULT_CONSTANTS, h=1e-6):
    return finite_difference_oracle(p, g, b, c, h, "vgs")


# --- technology parameter files -------------------------------------------

_TECH_FIELDS = ("vth0", "i0", "m", "lambda_d", "lambda_b")


@dataclass(frozen=True)
class Technology:
    """Per-node parameter set: one DeviceParams per polarity plus temperature."""

    nmos: DeviceParams = NMOS_DEFAULT
    pmos: DeviceParams = PMOS_DEFAULT
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    name: str = ""
    min_length: float = 0.0

    def params(self, polarity):
        return self.nmos if Polarity(polarity) is Polarity.NMOS else self.pmos


def parse_tech(text):
    """Parse a flat ``key=value`` technology file.

    Recognised keys: ``nmos.<field>``, ``pmos.<field>`` for the DeviceParams
    fields, ``temperature_k``, and optionally ``name`` and ``min_length``.
    Missing device fields fall back to the default table.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key.lower()] = (lineno, value)

    devices = {"nmos": dict(vars(NMOS_DEFAULT)), "pmos": dict(vars(PMOS_DEFAULT))}
    temperature = DEFAULT_CONSTANTS.temperature
    name, min_length = "", 0.0
    for key, (lineno, value) in raw.items():
        try:
            if key == "temperature_k":
                temperature = parse_value(value)
            elif key == "name":
                name = value
            elif key == "min_length":
                min_length = parse_value(value)
            else:
                kind, _, fld = key.partition(".")
                if kind not in devices or fld not in _TECH_FIELDS:
                    raise ValueError(f"unknown key {key!r}")
                devices[kind][fld] = parse_value(value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return Technology(
        nmos=DeviceParams(**devices["nmos"]),
        pmos=DeviceParams(**devices["pmos"]),
        constants=PhysicalConstants(temperature=temperature),
        name=name,
        min_length=min_length,
    )


def format_tech(tech):
    lines = []
    if tech.name:
        lines.append(f"name={tech.name}")
    if tech.min_length:
        lines.append(f"min_length={format_value(tech.min_length)}")
    for kind in ("nmos", "pmos"):
        params = getattr(tech, kind)
        for fld in _TECH_FIELDS:
            lines.append(f"{kind}.{fld}={format_value(getattr(params, fld))}")
    lines.append(f"temperature_k={format_value(tech.constants.temperature)}")
    return "\n".join(lines) + "\n"


def load_tech(path):
    with open(path, encoding="utf-8") as fh:
        return parse_tech(fh.read())
