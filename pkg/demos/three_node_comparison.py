"""Operating point, Bode metrics, noise and slew of the bundled 180/90/45 nm amplifiers.

Run: python3 demos/three_node_comparison.py [--no-slew]
"""

import sys

from opamp_lab import bundled, netlist, noiseengine, opsolver, tranengine
from opamp_lab.acengine import ac_analysis, bode_metrics


def summarize(node, slew=True):
    net = netlist.parse(bundled(f"two_stage_{node}.sp").read_text())
    op = opsolver.solve_op(net)
    m = bode_metrics(ac_analysis(net, op))
    kf = noiseengine.calibrate_kf(net, op, 1e3)  # flicker corner placed at 1 kHz
    spectrum = noiseengine.noise_sweep(net, op, params=noiseengine.NoiseModelParams(kf), freqs=[10.0])
    print(f"{node:>3} nm  power {op.supply_power * 1e9:7.2f} nW  gain {m.dc_gain_db:5.1f} dB  "
          f"PM {m.phase_margin_deg:4.1f} deg  UGB {m.ugb_hz / 1e3:5.1f} kHz  "
          f"noise@10Hz {spectrum.v_in[0] * 1e6:4.2f} uV/rtHz", end="")
    if slew:
        wave = tranengine.tran(*tranengine.buffer_bench(net, (0.1, 0.4), stop=100e-6, dt=20e-9))
        print(f"  slew {tranengine.measure_slew(wave) / 1e3:5.2f} mV/us", end="")
    print()
    top = spectrum.breakdown(0)[:3]
    print("        largest noise contributors at 10 Hz: "
          + ", ".join(f"{name} {psd ** 0.5 / abs(spectrum.gain[0]) * 1e6:.2f} uV" for name, psd in top))


if __name__ == "__main__":
    for node in ("180", "90", "45"):
        summarize(node, slew="--no-slew" not in sys.argv)
