"""Command line front end: ``rydrx SUBCOMMAND SCENARIO [options]``.

Arrays go to CSV, scalars and fits to JSON. Floats are written with
``repr`` so identical inputs give byte-identical files. Exit status is 0
on success, 2 for configuration errors and 3 for numerical failures; the
error is also printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .constants import TWO_PI
from .errors import ConfigurationError, FeatureAmbiguityError, RydrxError
from .scenario import Scenario, bundled_scenarios, load_scenario, phase_grid

OUTPUT_SCHEMA_VERSION = 1
SUBCOMMANDS = ("spectrum", "pulse", "phase-scan", "demod", "estimate")


# --------------------------------------------------------------------------
# serialization

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


class Outputs:
    def __init__(self, directory: Path, prefix: str, subcommand: str):
        self.directory = directory
        self.stem = f"{prefix}.{subcommand}"
        self.written = []

    def write(self, suffix: str, text: str) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / f"{self.stem}.{suffix}"
        path.write_text(text, encoding="utf-8")
        self.written.append(path)
        return path


def _header(sc: Scenario, subcommand: str, seed: int) -> dict:
    return {"schema_version": OUTPUT_SCHEMA_VERSION, "subcommand": subcommand,
            "scenario": sc.name, "seed": seed, "package_version": __version__}


def _hz(x):
    return None if x is None else x / TWO_PI


# --------------------------------------------------------------------------
# subcommands

def run_spectrum(sc: Scenario, out: Outputs, seed: int, threads: int):
    from .spectroscopy import extract_features, scan_spectrum
    block = sc.spectrum or _default("spectrum")
    scan = scan_spectrum(sc.system, sc.drive_fields, sc.vapor_config, sc.optical_depth,
                         block.grid.values(), block.scan_role, sc.exact, threads)
    out.write("csv", format_csv(["detuning_Hz", "transmission"],
                                zip(scan.detuning / TWO_PI, scan.transmission)))
    doc = _header(sc, "spectrum", seed)
    try:
        doc["features"] = extract_features(scan).to_dict()
    except FeatureAmbiguityError as exc:
        doc["features"] = None
        doc["feature_error"] = exc.to_dict()
    doc["reference_absorption"] = scan.metadata["reference_absorption"]
    doc["optical_depth"] = sc.optical_depth
    out.write("json", dumps_json(doc))
    return doc


def _pulse_kind(sc: Scenario) -> str:
    kind = sc.pulse.kind
    if kind != "auto":
        return kind
    from .lindblad import SquarePulse
    for d in sc.drive_fields:
        if d.role == "rf" and d.envelope.breakpoints:
            return "rf"
    for d in sc.drive_fields:
        if d.role == "coupler" and isinstance(d.envelope, SquarePulse):
            return "coupler"
    return "generic"


def run_pulse(sc: Scenario, out: Outputs, seed: int, threads: int):
    from . import pulses
    from .lindblad import CW
    from .doppler import averaged_steady_state
    from .spectroscopy import probe_index, probe_transmission, reference_absorption
    if sc.pulse is None:
        raise ConfigurationError("scenario has no pulse block", [("pulse", "missing")])
    b = sc.pulse
    scen = pulses.PulseScenario(sc.system, sc.drive_fields, sc.vapor_config, sc.optical_depth,
                                b.span_s, b.dt_s, b.t_start_s, b.grid.values(),
                                b.detector_bandwidth_hz, b.mode)
    kind = _pulse_kind(sc)
    sim = {"rf": pulses.simulate_rf_pulse, "coupler": pulses.simulate_coupler_pulse}
    trace = sim.get(kind, pulses.simulate_pulse)(scen, threads)
    values = trace.values if trace.values.ndim == 2 else trace.values[:, None]
    dets = scen.detunings / TWO_PI
    out.write("csv", format_csv(["t_s"] + [repr(float(d)) for d in dets],
                                (np.concatenate([[t], row]) for t, row in zip(trace.times, values))))
    doc = _header(sc, "pulse", seed)
    doc.update({"kind": kind, "mode": trace.mode, "detunings_Hz": dets,
                "n_times": len(trace.times), "metadata": trace.metadata})
    if kind == "rf":
        spl = pulses.splitting_series(trace)
        ok = np.isfinite(spl)
        doc["splitting"] = {"t_s": trace.times[ok], "splitting_Hz": spl[ok] / TWO_PI}
    elif kind == "coupler":
        c = next(d for d in sc.drive_fields if d.role == "coupler")
        cw = [d.with_(envelope=CW) if d is c else d for d in sc.drive_fields]
        ref = reference_absorption(sc.system, sc.drive_fields, sc.vapor_config, exact=False)
        n_opt = sum(d.optical for d in cw)
        rho = averaged_steady_state(sc.system, cw, sc.vapor_config, np.zeros((1, n_opt)),
                                    exact=sc.exact)
        i, j = probe_index(sc.system, cw)
        steady = float(probe_transmission(rho[0, i, j].imag, sc.optical_depth, ref))
        if trace.mode == "relative":
            steady /= math.exp(-sc.optical_depth)
        f = pulses.coupler_transient_features(trace, c.envelope.on, c.envelope.off, steady)
        doc["transient"] = vars(f)
    out.write("json", dumps_json(doc))
    return doc


def run_phase(sc: Scenario, out: Outputs, seed: int, threads: int):
    from .constants import E_A0
    from .phase import (PhaseScheme, fit_phase_and_amplitude, full_line_strength, net_coupling,
                        simulate_phase_scan)
    if sc.phase is None:
        raise ConfigurationError("scenario has no phase block", [("phase", "missing")])
    p = sc.phase
    scheme = PhaseScheme.from_field(p.field_v_per_m, p.d_a_ea0 * E_A0, p.d_b_ea0 * E_A0,
                                    TWO_PI * p.omega_5p_ns_hz, TWO_PI * p.omega_5p_n1s_hz,
                                    TWO_PI * p.delta_a_hz, TWO_PI * p.delta_b_hz,
                                    phi_rf=p.phi_rf_rad, omega_rf=TWO_PI * p.rf_frequency_hz)
    phi, delays = phase_grid(p)
    scan = simulate_phase_scan(scheme, phi_opt=None if delays is not None else phi,
                               delays=delays, mode=p.mode, noise=p.noise, floor=p.floor,
                               seed=seed)
    scale = 1.0
    if p.mode == "full":
        # instrument calibration: absorption per |Omega_C|^2 at a 1 V/m, zero-phase reference
        ref = scheme.with_field(1.0).with_(phi_rf=0.0).with_opt_phase(0.0)
        scale = full_line_strength(ref) / abs(net_coupling(ref)) ** 2
    fit = fit_phase_and_amplitude(scan, scheme, strength_scale=scale)
    header = ["phi_opt_rad", "line_strength"] + (["delay_m"] if delays is not None else [])
    cols = [scan.phi_opt, scan.strength] + ([delays] if delays is not None else [])
    out.write("csv", format_csv(header, zip(*cols)))
    doc = _header(sc, "phase-scan", seed)
    doc.update({"mode": p.mode, "fit": fit.to_dict(), "adiabatic_ratio": scheme.adiabatic_ratio,
                "strength_scale": scale, "noise": p.noise})
    out.write("json", dumps_json(doc))
    return doc


def _baseband(block, base: Path | None):
    path = Path(block.baseband_csv)
    if not path.is_absolute() and base is not None:
        path = base / path
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read baseband {path}: {exc}",
                                 [("demod.baseband_csv", str(exc))]) from None
    vals = []
    for row in csv.reader(io.StringIO(text)):
        if not row:
            continue
        try:
            vals.append(float(row[-1]))
        except ValueError:
            if vals:
                raise ConfigurationError(f"non-numeric baseband sample {row[-1]!r}",
                                         [("demod.baseband_csv", "non-numeric sample")]) from None
    return np.array(vals)


def run_demod(sc: Scenario, out: Outputs, seed: int, threads: int, base: Path | None = None):
    from .demod import ModulatedCarrier, demodulate, operating_point
    from .estimation import eit_linewidth
    from .spectroscopy import scan_spectrum
    if sc.demod is None:
        raise ConfigurationError("scenario has no demod block", [("demod", "missing")])
    b = sc.demod
    rf = [d for d in sc.drive_fields if d.role == "rf"]
    if len(rf) != 1:
        raise ConfigurationError("demodulation needs exactly one rf drive")
    carrier_rabi = abs(rf[0].rabi)
    if b.baseband_csv is None:
        carrier = ModulatedCarrier.sine(carrier_rabi, b.depth, b.tone_hz, b.sample_rate_hz,
                                        b.periods)
    else:
        carrier = ModulatedCarrier(carrier_rabi, _baseband(b, base), b.depth, b.sample_rate_hz)
    grid = b.grid.values()
    if b.operating_point_hz is None:
        scan = scan_spectrum(sc.system, sc.drive_fields, sc.vapor_config, sc.optical_depth,
                             grid, exact=sc.exact, threads=threads)
        op = operating_point(scan)
    else:
        op = TWO_PI * b.operating_point_hz
    lw = None
    if b.mode == "quasi-static":
        lw = eit_linewidth(sc.system, sc.drive_fields, sc.vapor_config, sc.optical_depth,
                           grid, sc.exact)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = demodulate(sc.system, sc.drive_fields, sc.vapor_config, carrier, op,
                         sc.optical_depth, b.mode, lw, b.quasi_static_limit, sc.exact)
    out.write("csv", format_csv(["t_s", "rx"], zip(res.times, res.recovered)))
    doc = _header(sc, "demod", seed)
    doc.update({"metrics": res.metrics(), "linewidth_Hz": _hz(lw), "depth": b.depth,
                "warnings": [str(w.message) for w in caught]})
    out.write("json", dumps_json(doc))
    return doc


def _read_scan(path: Path, od: float):
    from .spectroscopy import SpectrumScan
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read scan {path}: {exc}", [("--scan", str(exc))]) from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["detuning_Hz", "transmission"]:
        raise ConfigurationError("scan CSV needs a 'detuning_Hz,transmission' header",
                                 [("--scan", "bad header")])
    try:
        data = np.array([[float(x) for x in r[:2]] for r in rows[1:] if r])
    except ValueError as exc:
        raise ConfigurationError(f"non-numeric scan value: {exc}", [("--scan", str(exc))]) from None
    if data.ndim != 2 or len(data) == 0:
        raise ConfigurationError("scan CSV has no data rows", [("--scan", "empty")])
    return SpectrumScan(TWO_PI * data[:, 0], data[:, 1], od, metadata={"source": str(path)})


def run_estimate(sc: Scenario, out: Outputs, seed: int, threads: int, scan: Path | None = None):
    from .estimation import eit_linewidth, end_to_end_estimate, field_from_splitting
    from .spectroscopy import extract_features
    if sc.estimate is None:
        raise ConfigurationError("scenario has no estimate block", [("estimate", "missing")])
    grid = (sc.spectrum or _default("spectrum")).grid.values()
    band = tuple(sc.estimate.band)
    if scan is not None:
        feats = extract_features(_read_scan(scan, sc.optical_depth))
        if feats.splitting is None:
            raise FeatureAmbiguityError("AT splitting not resolved; no field estimate", n_peaks=1)
        lw = (eit_linewidth(sc.system, sc.drive_fields, sc.vapor_config, sc.optical_depth, grid,
                            sc.exact) if sc.drives else None)
        est = field_from_splitting(feats.splitting, sc.dipole(), lw, band, feats.uncertainty, True)
    else:
        if not sc.drives:
            raise ConfigurationError("estimating from a simulation needs a ladder and drives "
                                     "(or pass --scan)", [("drives", "missing")])
        est = end_to_end_estimate(sc.system, sc.drive_fields, sc.vapor_config, sc.dipole(),
                                  sc.optical_depth, grid, band, sc.exact, threads)
    doc = _header(sc, "estimate", seed)
    doc["estimate"] = est.to_dict()
    doc["source"] = "scan" if scan is not None else "simulation"
    rf = [d for d in sc.drives if d.role == "rf"]
    if len(rf) == 1 and rf[0].field_v_per_m is not None:
        doc["applied_E_V_per_m"] = rf[0].field_v_per_m
    out.write("json", dumps_json(doc))
    return doc


def _default(block):
    from .scenario import SpectrumBlock
    return {"spectrum": SpectrumBlock()}[block]


RUNNERS = {"spectrum": run_spectrum, "pulse": run_pulse, "phase-scan": run_phase,
           "demod": run_demod, "estimate": run_estimate}


# --------------------------------------------------------------------------
# entry point

def resolve_scenario(name: str) -> tuple[Scenario, Path | None]:
    path = Path(name)
    if path.exists():
        return load_scenario(path), path.parent
    bundled = bundled_scenarios()
    if name in bundled:
        return load_scenario(bundled[name]), None
    raise ConfigurationError(f"scenario {name!r} not found (bundled: {', '.join(bundled)})",
                             [("scenario", "not found")])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario file or bundled scenario name")
    common.add_argument("-o", "--output-dir", help="output directory (default: scenario output.directory)")
    common.add_argument("--seed", type=int, help="random seed (default: scenario seed)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    parser = argparse.ArgumentParser(prog="rydrx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rydrx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    helps = {"spectrum": "steady-state transmission versus coupler detuning",
             "pulse": "time-domain trace or map for pulsed drives",
             "phase-scan": "RF phase scan and cos^2 fit",
             "demod": "AM demodulation at an EIT operating point",
             "estimate": "RF field from a simulated or supplied AT splitting"}
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "estimate":
            sp.add_argument("--scan", help="invert a spectrum CSV (detuning_Hz,transmission) "
                                           "instead of simulating one")
    sub.add_parser("list", help="list bundled scenarios")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name, path in bundled_scenarios().items():
            print(f"{name}\t{path}")
        return 0
    try:
        if args.threads < 1:
            raise ConfigurationError("--threads must be at least 1", [("--threads", "< 1")])
        sc, base = resolve_scenario(args.scenario)
        seed = sc.seed if args.seed is None else args.seed
        directory = Path(args.output_dir or sc.output.directory)
        out = Outputs(directory, sc.output.prefix or sc.name, args.command)
        runner = RUNNERS[args.command]
        if args.command == "demod":
            runner(sc, out, seed, args.threads, base)
        elif args.command == "estimate" and args.scan:
            runner(sc, out, seed, args.threads, Path(args.scan))
        else:
            runner(sc, out, seed, args.threads)
    except RydrxError as exc:
        sys.stderr.write(json.dumps(_clean(exc.to_dict()), sort_keys=True) + "\n")
        return exc.exit_code
    except Exception as exc:  # unexpected failure: still machine readable
        err = {"error": type(exc).__name__, "module": "rydrx", "message": str(exc)}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 3
    for p in out.written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
