"""Goals to netlist for the 180 nm node, then constant-voltage scaling to 90 nm.

Run: python3 demos/design_walkthrough.py
"""

import warnings

from opamp_lab import bundled, designer, opsolver
from opamp_lab.acengine import ac_analysis, bode_metrics
from opamp_lab.devmodel import parse_tech

warnings.simplefilter("ignore")  # the reference budget is slightly above the 100 nW goal

tech180 = parse_tech(bundled("tech180.params").read_text())
tech90 = parse_tech(bundled("tech90.params").read_text())
goals, budget, c1 = designer.load_goals(bundled("goals_180.cfg"))

d = designer.design(goals, tech180, budget=budget, c1=c1)
print("sizes (W/L):", ", ".join(f"{k} {g.aspect_ratio:.2f}" for k, g in d.geometries.items()))
print(f"Cc {d.cc * 1e12:.3f} pF  Rc {d.rc / 1e6:.3f} Mohm  C1 {d.c1 * 1e12:.3f} pF  "
      f"VREF1 {d.vref1:.4f} V  VREF2 {d.vref2:.4f} V  power {d.power_w * 1e9:.2f} nW")

m = designer.closure_metrics(d, tech180)
print(f"macromodel: PM {m.phase_margin_deg:.1f} deg, UGB {m.ugb_hz / 1e3:.1f} kHz "
      f"(goals {goals.phase_margin_deg:g} deg, {goals.ugb_hz / 1e3:g} kHz)")

net = designer.build_netlist(d, tech180)
op = opsolver.solve_op(net, constants=tech180.constants)
m = bode_metrics(ac_analysis(net, op))
print(f"transistor level: gain {m.dc_gain_db:.1f} dB, PM {m.phase_margin_deg:.1f} deg, "
      f"UGB {m.ugb_hz / 1e3:.1f} kHz, power {op.supply_power * 1e9:.2f} nW")

s = designer.calibrate_design(designer.scale_design(d, 2.0, tech90), tech90)
print(f"scaled to 90 nm: M1 {s.geometries['M1'].width * 1e6:.2f}/{s.geometries['M1'].length * 1e6:.2f} um, "
      f"Cc {s.cc * 1e12:.3f} pF, Rc {s.rc / 1e6:.3f} Mohm, power {s.power_w * 1e9:.2f} nW")
