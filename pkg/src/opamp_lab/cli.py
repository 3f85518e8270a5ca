"""Command-line front end.

Exit codes: 0 ok, 2 usage or missing file, 3 parse error, 4 solver
failure, 5 metric extraction or design failure.
"""

import argparse
import csv
import io
import os
import re
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import acengine, designer, devmodel, netlist as nl, noiseengine, opsolver, tranengine
from .errors import AnalysisError, DesignError, MetricError, NonConvergence, SingularMatrix
from .netlist import AcDec, NetlistError, NoiseCard, TranCard

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_SOLVER, EXIT_METRIC = 0, 2, 3, 4, 5
REPORT_COLUMNS = ("node", "dc_gain_db", "pm_deg", "ugb_hz", "power_nw", "slew_mv_per_us",
                  "noise_uv_rthz@{f}", "vdd_v", "cl_pf")
SLEW_STEP = (0.1, 0.4)


class UsageError(Exception):
    pass


# --- input resolution -----------------------------------------------------------------


def _bundled(kind, name):
    ref = resources.files("opamp_lab").joinpath(kind, name)
    return ref if ref.is_file() else None


def resolve(path, kind):
    """A real file, or else a bundled file of that name (``circuits``/``tech``)."""
    p = Path(path)
    if p.is_file():
        return p.read_text(encoding="utf-8")
    ref = _bundled(kind, p.name)
    if ref is not None:
        return ref.read_text(encoding="utf-8")
    raise UsageError(f"file not found: {path}")


def load_netlist(path, tech_path=None):
    net = nl.parse(resolve(path, "circuits"))
    tech = load_tech(tech_path)
    if tech is not None:
        net = net.with_models(tech)
    return net, tech


def load_tech(path):
    if path is None:
        return None
    return devmodel.parse_tech(resolve(path, "tech"))


def constants_of(tech):
    return tech.constants if tech is not None else devmodel.DEFAULT_CONSTANTS


def node_label(net, path):
    match = re.search(r"(\d+)\s*nm", net.title)
    return f"{match.group(1)}nm" if match else Path(path).stem


def parse_sweep(text):
    """``'dec 100 1 1e7'`` (engineering suffixes allowed)."""
    parts = text.split()
    if len(parts) != 4 or parts[0].lower() != "dec":
        raise UsageError(f"sweep must look like 'dec <pts> <fstart> <fstop>', got {text!r}")
    from .units import parse_value

    card = AcDec(int(parse_value(parts[1])), parse_value(parts[2]), parse_value(parts[3]))
    if not (card.points_per_decade >= 1 and 0 < card.f_start < card.f_stop):
        raise UsageError("invalid sweep")
    return card


def parse_floats(text):
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


# --- output helpers --------------------------------------------------------------------


def fmt(value):
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return "n/a"
    if isinstance(value, str):
        return value
    return repr(float(value) + 0.0)  # no "-0.0"


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def emit(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def sibling(path, suffix):
    """``bode.csv`` -> ``bode_metrics.csv``."""
    if path is None:
        return None
    p = Path(path)
    return p.with_name(f"{p.stem}_{suffix}{p.suffix or '.csv'}")


# --- commands --------------------------------------------------------------------------


def op_rows(op):
    rows = [("voltage", node, v, "V") for node, v in op.node_voltages.items()]
    for name, st in op.device_states.items():
        ss = st.small_signal
        rows += [("current", name, ss.id, "A"), ("gm", name, ss.gm, "S"),
                 ("gds", name, ss.gds, "S"), ("gmb", name, ss.gmb, "S")]
    rows += [("supply_current", name, i, "A") for name, i in op.supply_currents.items()]
    rows.append(("power", "total", op.supply_power, "W"))
    return rows


def cmd_op(args):
    net, tech = load_netlist(args.netlist, args.tech)
    op = opsolver.solve_op(net, constants=constants_of(tech))
    emit(csv_text(("quantity", "object", "value", "unit"), op_rows(op)), args.out)
    return EXIT_OK


def ac_metrics_rows(m):
    rows = [("dc_gain", m.dc_gain_db, "dB"), ("ugb", m.ugb_hz, "Hz"),
            ("phase_margin", m.phase_margin_deg, "deg")]
    if m.gain_margin_db is not None:
        rows.append(("gain_margin", m.gain_margin_db, "dB"))
    return rows


def cmd_ac(args):
    net, tech = load_netlist(args.netlist, args.tech)
    card = parse_sweep(args.sweep) if args.sweep else None
    op = opsolver.solve_op(net, constants=constants_of(tech))
    resp = acengine.ac_analysis(net, op, card, args.output_node)
    rows = zip(resp.freqs, resp.magnitude_db, resp.phase_deg)
    emit(csv_text(("freq_hz", "mag_db", "phase_deg"), rows), args.out)
    metrics = acengine.bode_metrics(resp)
    target = args.metrics or sibling(args.out, "metrics")
    emit(csv_text(("metric", "value", "unit"), ac_metrics_rows(metrics)), target)
    return EXIT_OK


def noise_params(net, op, args, card):
    if args.kf is not None:
        return noiseengine.NoiseModelParams(args.kf)
    kf = noiseengine.calibrate_kf(net, op, args.corner, card)
    return noiseengine.NoiseModelParams(kf)


def cmd_noise(args):
    net, tech = load_netlist(args.netlist, args.tech)
    op = opsolver.solve_op(net, constants=constants_of(tech))
    card = net.analysis(NoiseCard) or NoiseCard(args.output_node, args.input_source, 20, 1.0, 1e5)
    if args.sweep:
        sweep = parse_sweep(args.sweep)
        card = NoiseCard(card.output_node, card.input_source, sweep.points_per_decade,
                         sweep.f_start, sweep.f_stop)
    params = noise_params(net, op, args, card)
    spectrum = noiseengine.noise_sweep(net, op, card, params)
    rows = zip(spectrum.freqs, spectrum.v_in * 1e9, spectrum.v_out * 1e9)
    emit(csv_text(("freq_hz", "v_in_nv_per_rthz", "v_out_nv_per_rthz"), rows), args.out)
    summary = [("kf", params.kf, "A*m^2")]
    try:
        summary.append(("flicker_corner", noiseengine.flicker_corner(spectrum), "Hz"))
    except MetricError:
        summary.append(("flicker_corner", None, "Hz"))
    emit(csv_text(("metric", "value", "unit"), summary), args.metrics or sibling(args.out, "metrics"))
    if args.breakdown_at:
        freqs = parse_floats(args.breakdown_at)
        bd = noiseengine.noise_sweep(net, op, card, params, freqs=freqs)
        rows = []
        for i, f in enumerate(bd.freqs):
            gain = abs(bd.gain[i])
            for name, psd in bd.breakdown(i):
                rows.append((f, name, np.sqrt(psd) * 1e9, np.sqrt(psd) / gain * 1e9))
        header = ("freq_hz", "element", "v_out_nv_per_rthz", "v_in_nv_per_rthz")
        emit(csv_text(header, rows), args.breakdown_out or sibling(args.out, "breakdown"))
    return EXIT_OK


def run_slew(net, tech, step=SLEW_STEP, stop=100e-6, dt=None):
    bench, card, stim = tranengine.buffer_bench(net, step, stop=stop, dt=dt)
    wave = tranengine.tran(bench, card, stim, constants=constants_of(tech))
    return wave, tranengine.measure_slew(wave, "out")


def cmd_tran(args):
    net, tech = load_netlist(args.netlist, args.tech)
    if args.step is None and net.analysis(TranCard) is not None and not args.bench:
        card = net.analysis(TranCard)
        if args.stop or args.dt:
            card = TranCard(args.dt or card.step, args.stop or card.stop)
        wave = tranengine.tran(net, card, constants=constants_of(tech))
        slew = None
    else:
        step = tuple(parse_floats(args.step)) if args.step else SLEW_STEP
        if len(step) != 2:
            raise UsageError("--step takes two values: v0,v1")
        wave, slew = run_slew(net, tech, step, args.stop or 100e-6, args.dt)
    nodes = [n.lower() for n in args.nodes.split(",")] if args.nodes else list(wave.node_names)
    cols = [wave.v(n) for n in nodes]
    rows = zip(wave.times, *cols)
    emit(csv_text(("t_s",) + tuple(f"v({n})" for n in nodes), rows), args.out)
    if slew is not None:
        emit(csv_text(("metric", "value", "unit"), [("slew_rate", slew, "V/s")]),
             args.metrics or sibling(args.out, "metrics"))
    return EXIT_OK


def write_design(result, tech, outdir, stem="design"):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = designer.result_rows(result)
    (outdir / f"{stem}.csv").write_text(
        csv_text(("quantity", "object", "value", "unit"), rows), encoding="utf-8")
    net = designer.build_netlist(result, tech)
    (outdir / f"{stem}.sp").write_text(nl.serialize(net), encoding="utf-8")


def cmd_design(args):
    goals, budget, c1 = designer.parse_goals(resolve(args.goals, "circuits"))
    tech = load_tech(args.tech) or devmodel.Technology(name="180nm")
    result = designer.design(goals, tech, budget=budget, c1=c1, calibrate=not args.no_calibrate)
    write_design(result, tech, args.output)
    return EXIT_OK


def cmd_scale(args):
    text = resolve(args.design, "circuits")
    rows = list(csv.reader(io.StringIO(text)))[1:]
    source = designer.parse_result_rows(rows)
    tech = load_tech(args.tech) or devmodel.Technology()
    scaled = designer.scale_design(source, args.factor, tech)
    if not args.no_calibrate:
        scaled = designer.calibrate_design(scaled, tech)
    write_design(scaled, tech, args.output, stem="scaled")
    return EXIT_OK


def report_row(path, tech_path, noise_freq, kf, corner, slew):
    net, tech = load_netlist(path, tech_path)
    constants = constants_of(tech)
    op = opsolver.solve_op(net, constants=constants)
    vdd = next((s.dc for s in net.of_type(nl.VSource) if s.name == "VDD"), None)
    cl = next((c.value for c in net.of_type(nl.Capacitor) if c.name == "CL"), None)
    row = {"node": node_label(net, path), "power_nw": op.supply_power * 1e9,
           "vdd_v": vdd, "cl_pf": None if cl is None else cl * 1e12}
    try:
        m = acengine.bode_metrics(acengine.ac_analysis(net, op))
        row.update(dc_gain_db=m.dc_gain_db, pm_deg=m.phase_margin_deg, ugb_hz=m.ugb_hz)
    except MetricError:
        pass
    card = net.analysis(NoiseCard)
    if card is not None:
        params = noiseengine.NoiseModelParams(
            kf if kf is not None else noiseengine.calibrate_kf(net, op, corner, card))
        spectrum = noiseengine.noise_sweep(net, op, card, params, freqs=[noise_freq])
        row["noise"] = float(spectrum.v_in[0]) * 1e6
    if slew:
        try:
            row["slew_mv_per_us"] = run_slew(net, tech, dt=20e-9)[1] * 1e-3
        except (MetricError, NonConvergence):
            pass
    return row


def emit_report(rows, noise_freq=10.0):
    """Comparison table, one row per netlist, fixed column order, 'n/a' for missing cells."""
    if not rows:
        raise ValueError("report needs at least one row")
    f = f"{noise_freq:g}"
    header = [c.format(f=f) for c in REPORT_COLUMNS]
    keys = [c if not c.startswith("noise") else "noise" for c in REPORT_COLUMNS]
    return csv_text(header, ([row.get(k) for k in keys] for row in rows))


def cmd_compare(args):
    limit = int(os.environ.get("OPAMP_LAB_THREADS", "0") or 0) or len(args.netlists)
    techs = args.techs or [None] * len(args.netlists)
    if len(techs) != len(args.netlists):
        raise UsageError("--techs must list one file per netlist")
    with ThreadPoolExecutor(max_workers=max(1, limit)) as pool:
        futures = [pool.submit(report_row, p, t, args.noise_freq, args.kf, args.corner,
                               not args.no_slew) for p, t in zip(args.netlists, techs)]
        rows = [fut.result() for fut in futures]
    emit(emit_report(rows, args.noise_freq), args.out)
    return EXIT_OK


# --- argument parsing --------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="opamp-lab", description=(
        "Subthreshold two-stage op-amp design and simulation. Netlist and technology "
        "arguments accept a file path or the name of a bundled file "
        "(two_stage_180.sp, tech90.params, ...)."))
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, out_help="output CSV (default: stdout)"):
        sp.add_argument("--netlist", required=True, help="netlist file")
        sp.add_argument("--tech", help="technology file overriding the netlist's .model cards")
        sp.add_argument("--out", "-o", help=out_help)

    sp = sub.add_parser("op", help="DC operating point")
    common(sp)
    sp.set_defaults(func=cmd_op)

    sp = sub.add_parser("ac", help="AC sweep and Bode metrics")
    common(sp, "Bode CSV freq_hz,mag_db,phase_deg (default: stdout)")
    sp.add_argument("--metrics", help="metrics CSV (default: <out>_metrics.csv, or stdout)")
    sp.add_argument("--sweep", help="override sweep, e.g. 'dec 100 1 10meg'")
    sp.add_argument("--output-node", default="out", help="output node (default: out)")
    sp.set_defaults(func=cmd_ac)

    sp = sub.add_parser("noise", help="noise spectrum, flicker corner, per-element breakdown")
    common(sp, "spectrum CSV freq_hz,v_in_nv_per_rthz,v_out_nv_per_rthz (default: stdout)")
    sp.add_argument("--metrics", help="metrics CSV (default: <out>_metrics.csv, or stdout)")
    sp.add_argument("--sweep", help="override sweep, e.g. 'dec 20 1 100k'")
    group = sp.add_mutually_exclusive_group()
    group.add_argument("--kf", type=float, help="flicker coefficient (A*m^2)")
    group.add_argument("--corner", type=float, default=1e3,
                       help="calibrate kf to this flicker corner, Hz (default: 1000)")
    sp.add_argument("--breakdown-at", help="comma-separated frequencies for a per-element table")
    sp.add_argument("--breakdown-out", help="breakdown CSV (default: <out>_breakdown.csv, or stdout)")
    sp.add_argument("--output-node", default="out", help="used when the netlist has no .noise card")
    sp.add_argument("--input-source", default="VIN", help="used when the netlist has no .noise card")
    sp.set_defaults(func=cmd_noise)

    sp = sub.add_parser("tran", help="transient run or unity-gain slew bench")
    common(sp, "waveform CSV t_s,v(node)... (default: stdout)")
    sp.add_argument("--metrics", help="slew metrics CSV (default: <out>_metrics.csv, or stdout)")
    sp.add_argument("--step", help="follower input step v0,v1 in volts (default 0.1,0.4)")
    sp.add_argument("--bench", action="store_true",
                    help="use the follower slew bench even if the netlist has a .tran card")
    sp.add_argument("--stop", type=float, help="stop time, s (bench default 100e-6)")
    sp.add_argument("--dt", type=float, help="time step, s (default stop/1e4)")
    sp.add_argument("--nodes", help="comma-separated nodes to write (default: all)")
    sp.set_defaults(func=cmd_tran)

    sp = sub.add_parser("design", help="size a design from goals")
    sp.add_argument("--goals", required=True, help="goals key=value file")
    sp.add_argument("--tech", help="technology file (default: built-in 180 nm constants)")
    sp.add_argument("-o", "--output", required=True, help="output directory")
    sp.add_argument("--no-calibrate", action="store_true", help="skip VREF calibration")
    sp.set_defaults(func=cmd_design)

    sp = sub.add_parser("scale", help="constant-voltage scaling of a design CSV")
    sp.add_argument("--design", required=True, help="design CSV written by 'design'")
    sp.add_argument("--factor", type=float, required=True, help="scaling factor S (W, L divided by S)")
    sp.add_argument("--tech", required=True, help="target technology file")
    sp.add_argument("-o", "--output", required=True, help="output directory")
    sp.add_argument("--no-calibrate", action="store_true", help="skip VREF calibration")
    sp.set_defaults(func=cmd_scale)

    sp = sub.add_parser("compare", help="one report row per netlist")
    sp.add_argument("--netlists", nargs="+", required=True, help="netlist files")
    sp.add_argument("--techs", nargs="+", help="technology file per netlist (optional)")
    sp.add_argument("--out", "-o", help="report CSV (default: stdout)")
    sp.add_argument("--noise-freq", type=float, default=10.0,
                    help="frequency of the noise column, Hz (default: 10)")
    group = sp.add_mutually_exclusive_group()
    group.add_argument("--kf", type=float, help="flicker coefficient for every netlist")
    group.add_argument("--corner", type=float, default=1e3,
                       help="calibrate kf per netlist to this corner, Hz (default: 1000)")
    sp.add_argument("--no-slew", action="store_true", help="skip the transient slew bench")
    sp.set_defaults(func=cmd_compare)
    return p


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    with warnings.catch_warnings():
        warnings.showwarning = _show_warning
        return _run(args)


def _run(args):
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NetlistError as exc:
        source = getattr(args, "netlist", None) or "<input>"
        for diag in exc.diagnostics:
            sep = ":" if diag.line else ": "
            print(f"{source}{sep}{diag}", file=sys.stderr)
        return EXIT_PARSE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (NonConvergence, SingularMatrix, AnalysisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (MetricError, DesignError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_METRIC


if __name__ == "__main__":
    sys.exit(main())
