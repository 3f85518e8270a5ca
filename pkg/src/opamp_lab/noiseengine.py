"""Small-signal noise analysis.

Every MOSFET carries a channel current noise source between its drain and
source with one-sided PSD ``2*q*ID + kf*ID**2/(W*L*f)`` (shot plus flicker);
every resistor carries ``4*k*T/R``. Each source is propagated to the output
node through the linearized network by its own linear solve, and the output
PSDs are summed (sources are uncorrelated).
"""

from dataclasses import dataclass, field

import numpy as np

from .acengine import linearize, sweep_frequencies
from .errors import AnalysisError, NoCorner, TargetUnreachable
from .netlist import AcDec, Mosfet, NoiseCard, Resistor

GAIN_FLOOR = 1e-12
DEFAULT_NOISE_SWEEP = AcDec(20, 1.0, 1e5)


@dataclass(frozen=True)
class NoiseModelParams:
    """``kf`` is in A*m^2 units such that ``kf*ID**2/(W*L*f)`` is in A^2/Hz
    when ID is in A, W and L in m (the current exponent is fixed at 2).

    ``devices`` restricts which elements are noisy (``None`` = all);
    ``resistors`` toggles resistor thermal noise.
    """

    kf: float = 0.0
    devices: tuple = None
    resistors: bool = True

    def __post_init__(self):
        if not self.kf >= 0:
            raise ValueError("kf must be non-negative")

    @property
    def af(self):
        return 2.0


@dataclass
class NoiseSpectrum:
    """Noise densities over frequency.

    ``white`` and ``flicker`` map each noisy element to its output PSD
    contribution (V^2/Hz) per frequency. ``gain`` is the complex transfer
    from the input source to the output node.
    """

    freqs: np.ndarray
    gain: np.ndarray
    white: dict
    flicker: dict
    output_node: str = "out"
    input_source: str = ""
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def contributions(self):
        return {name: self.white[name] + self.flicker[name] for name in self.white}

    @property
    def white_total(self):
        return sum(self.white.values(), np.zeros(len(self.freqs)))

    @property
    def flicker_total(self):
        return sum(self.flicker.values(), np.zeros(len(self.freqs)))

    @property
    def output_psd(self):
        return self.white_total + self.flicker_total

    @property
    def v_out(self):
        """Output noise density, V/sqrt(Hz)."""
        return np.sqrt(self.output_psd)

    @property
    def referral_ok(self):
        return np.abs(self.gain) >= GAIN_FLOOR

    @property
    def v_in(self):
        """Input-referred density, V/sqrt(Hz); NaN where the gain is too small to refer."""
        mag = np.abs(self.gain)
        out = np.full(len(self.freqs), np.nan)
        ok = self.referral_ok
        out[ok] = self.v_out[ok] / mag[ok]
        return out

    def breakdown(self, index):
        """Per-element output PSD (V^2/Hz) at sweep point ``index``, largest first."""
        rows = [(name, float(psd[index])) for name, psd in self.contributions.items()]
        return sorted(rows, key=lambda row: -row[1])


def _noise_sources(netlist, op, params):
    """Yield ``(name, node_a, node_b, white_psd, flicker_coeff)``.

    The flicker PSD of a source is ``flicker_coeff / f``.
    """
    c = op.circuit.constants
    wanted = None if params.devices is None else {d.upper() for d in params.devices}
    for el in netlist.elements:
        if wanted is not None and el.name not in wanted:
            continue
        if isinstance(el, Mosfet):
            ids = abs(op.drain_current(el.name))
            area = el.geometry.width * el.geometry.length
            yield (el.name, el.drain, el.source, 2.0 * c.elementary_charge * ids,
                   params.kf * ids ** 2 / area)
        elif isinstance(el, Resistor) and params.resistors:
            yield el.name, el.n1, el.n2, 4.0 * c.boltzmann * c.temperature / el.value, 0.0


def noise_sweep(netlist, op, card=None, params=NoiseModelParams(), freqs=None):
    """Output and input-referred noise of ``netlist`` around ``op``.

    ``card`` (a NoiseCard) names the output node and input source; it
    defaults to the netlist's ``.noise`` card. ``freqs`` overrides the sweep.
    """
    card = card or netlist.analysis(NoiseCard)
    if card is None:
        raise AnalysisError("no .noise card and no card given")
    if freqs is None:
        freqs = sweep_frequencies(card.sweep)
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    lin = linearize(netlist, op)
    out = lin.index(card.output_node)
    if out is None:
        raise AnalysisError("noise output node cannot be ground")
    sources = list(_noise_sources(netlist, op, params))
    rhs = np.zeros((lin.size, len(sources) + 1), dtype=complex)
    rhs[:, 0] = lin.unit_drive(card.input_source)
    for k, (_, a, b, _, _) in enumerate(sources, start=1):
        # unit current leaving node a through the source and entering node b
        ia, ib = lin.index(a), lin.index(b)
        if ia is not None:
            rhs[ia, k] -= 1.0
        if ib is not None:
            rhs[ib, k] += 1.0
    x, ok = lin.solve(freqs, rhs)
    if not ok.all():
        raise AnalysisError("singular small-signal matrix in noise analysis")
    transfer = np.abs(x[:, out, 1:]) ** 2
    white, flicker = {}, {}
    for k, (name, _, _, s_white, s_flicker) in enumerate(sources):
        white[name] = transfer[:, k] * s_white
        flicker[name] = transfer[:, k] * s_flicker / freqs
    return NoiseSpectrum(freqs, x[:, out, 0], white, flicker, card.output_node.lower(),
                         card.input_source.upper())


def _corner_from_ratio(freqs, ratio):
    ratio = np.asarray(ratio, dtype=float)
    above = ratio >= 1.0
    hits = np.flatnonzero(above[:-1] & ~above[1:])
    if len(hits) == 0:
        raise NoCorner("flicker and white contributions never cross inside the sweep")
    i = hits[0]
    lf = np.log(freqs[i: i + 2])
    lr = np.log(ratio[i: i + 2])
    t = -lr[0] / (lr[1] - lr[0])
    return float(np.exp(lf[0] + t * (lf[1] - lf[0])))


def flicker_corner(spectrum):
    """Frequency where total flicker and white output PSDs are equal.

    The flicker/white ratio is interpolated linearly in log-log space, so a
    PSD of the form ``a/f + b`` gives exactly ``a/b``.
    """
    white = spectrum.white_total
    flicker = spectrum.flicker_total
    if not np.any(flicker > 0) or not np.all(white > 0):
        raise NoCorner("spectrum has no flicker component or no white floor")
    return _corner_from_ratio(spectrum.freqs, flicker / white)


def calibrate_kf(netlist, op, target_corner_hz, card=None, params=NoiseModelParams()):
    """Flicker coefficient that puts the flicker corner at ``target_corner_hz``.

    The flicker PSD is linear in ``kf``, so evaluating the network once with
    unit ``kf`` at the target frequency gives the root directly:
    ``kf = white(fc) / flicker_unit(fc)``.
    """
    if not target_corner_hz > 0:
        raise TargetUnreachable("corner frequency must be positive")
    unit = NoiseModelParams(1.0, params.devices, params.resistors)
    s = noise_sweep(netlist, op, card, unit, freqs=[target_corner_hz])
    flicker = s.flicker_total[0]
    white = s.white_total[0]
    if not flicker > 0:
        raise TargetUnreachable("no device contributes flicker noise at the output")
    return float(white / flicker)
