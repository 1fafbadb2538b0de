"""Batch command-line front end.

Subcommands: run (simulate per config), oracle (reference results for the
configured system), analyze (recompute estimators from stored samples),
bennett (partition-function ratio between an oo run and an O run).

Exit codes: 0 success, 2 config error, 3 numerical abort, 4 sign collapse,
5 no Bennett overlap.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

import numpy as np

from . import __version__
from .analysis import analyze_run, bennett_report
from .config import parse_config
from .errors import (ConfigError, ExpimdError, NoOverlapError, NumericsError,
                     SignCollapseError)
from .model import SymmetryChannel
from .oracle import (dot_exact_diagonalize, dot_thermal_energy,
                     harmonic_pair_distribution, harmonic_partition)
from .potentials import KB_MEV_PER_K
from .runner import execute_run

_CHANNELS = {
    "boson": SymmetryChannel.BOSON,
    "fermion": SymmetryChannel.FERMION,
    "distinguishable": SymmetryChannel.DISTINGUISHABLE,
}


def _cmd_run(args):
    cfg = parse_config(args.config)
    out = pathlib.Path(args.out or cfg.values["output"]["directory"])
    seeds = args.seeds or 1
    base_seed = cfg.values["sampler"]["seed"]
    if seeds == 1:
        summary = execute_run(cfg, out, restart_from=args.restart)
        _report_channels(summary)
        return 4 if _any_collapsed(summary) else 0
    if args.restart:
        raise ConfigError("--restart cannot be combined with --seeds")
    status = 0
    for k in range(seeds):
        sub = out / f"seed_{base_seed + k:04d}"
        summary = execute_run(cfg, sub, seed=base_seed + k)
        _report_channels(summary)
        status = max(status, 4 if _any_collapsed(summary) else 0)
    return status


def _any_collapsed(summary):
    return any(entry.get("sign_collapsed") for entry in summary["channels"].values())


def _report_channels(summary):
    for name, entry in summary["channels"].items():
        if entry.get("sign_collapsed"):
            print(f"{name}: SIGN COLLAPSE  <W> = {entry['weight_mean']:.3e} "
                  f"+- {entry['weight_stderr']:.3e}")
        elif "energy" in entry:
            e = entry["energy"]
            print(f"{name}: E = {e['value']:.6g} +- {e['stderr']:.2g}  "
                  f"<W> = {entry['weight_mean']:.4g}")


def _cmd_analyze(args):
    channels = None
    if args.channels:
        channels = [_CHANNELS[c] for c in args.channels.split(",")]
    out = args.out or args.run_dirs[0]
    summary = analyze_run(args.run_dirs, out_dir=out, channels=channels)
    _report_channels(summary)
    return 4 if _any_collapsed(summary) else 0


def _cmd_bennett(args):
    out = args.out or args.oo_dir
    report = bennett_report(args.oo_dir, args.o_dir, out_dir=out,
                            e_boson=args.e_boson,
                            e_boson_err=args.e_boson_err or 0.0)
    print(f"Z_O/Z_oo = {report['ratio']:.6g} +- {report['ratio_stderr']:.2g} "
          f"(C* = {report['c_star']:.4g}, plateau "
          f"{'ok' if report['plateau_ok'] else 'NOT FLAT'})")
    if "fermion_energy" in report:
        ef = report["fermion_energy"]
        print(f"E_F (free-energy route) = {ef['value']:.6g} +- {ef['stderr']:.2g}")
    return 0


def _cmd_oracle(args):
    cfg = parse_config(args.config)
    out = pathlib.Path(args.out or cfg.values["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    sysvals = cfg.values["system"]
    report = {"version": __version__, "config_hash": cfg.hash}
    if sysvals["kind"] == "toy":
        if sysvals["potential"] != "harmonic":
            raise ConfigError("the analytic oracle covers the harmonic toy only")
        beta, omega, n_d = cfg.beta, sysvals["omega"], sysvals["dim"]
        ref = harmonic_partition(beta, omega, n_d)
        report["harmonic"] = {
            "beta_hbar_omega": beta * omega,
            "exchange_ratio": ref.exchange_ratio,
            "e_distinguishable": ref.e_distinguishable,
            "e_boson": ref.e_boson,
            "e_fermion": ref.e_fermion,
            "e_fermion_low_t_approx": ref.e_fermion_low_t_approx,
        }
        r = np.linspace(0.0, cfg.pair_range, cfg.values["estimators"]["pair_bins"])
        for name, channel in _CHANNELS.items():
            g = harmonic_pair_distribution(beta, omega, n_d, channel, r)
            path = out / f"oracle_pair_{name}.txt"
            with open(path, "w") as fh:
                fh.write(f"# exact pair distribution, channel={name}\n# r g\n")
                for ri, gi in zip(r, g):
                    fh.write(f"{ri!r} {gi!r}\n")
    else:
        dot = cfg.dot_params
        spectrum = dot_exact_diagonalize(dot)
        spectrum.save(out / "spectrum.txt")
        temperature = sysvals["temperature"]
        curve = []
        for t in np.linspace(max(temperature / 4.0, 1.0), 60.0, 25):
            b = 1.0 / (KB_MEV_PER_K * t)
            curve.append({
                "temperature_K": float(t),
                "singlet_meV": dot_thermal_energy(spectrum, b, "singlet"),
                "triplet_meV": dot_thermal_energy(spectrum, b, "triplet"),
            })
        beta = cfg.beta
        report["dot"] = {
            "wigner_parameter": dot.wigner_parameter,
            "hbar_omega0_meV": dot.hbar_omega0,
            "eta": dot.eta,
            "l_0_nm": dot.l_0,
            "basis_cutoff": spectrum.basis_cutoff,
            "singlet_meV": dot_thermal_energy(spectrum, beta, "singlet"),
            "triplet_meV": dot_thermal_energy(spectrum, beta, "triplet"),
            "temperature_K": temperature,
            "curve": curve,
        }
    with open(out / "oracle.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"oracle results written to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="expimd",
        description="Path-integral MD for two indistinguishable quantum "
                    "particles with metadynamics-enhanced exchange sampling",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a configured system")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", help="output directory (overrides config)")
    p_run.add_argument("--restart", help="checkpoint file to continue from")
    p_run.add_argument("--seeds", type=int,
                       help="run N independent trajectories (seed, seed+1, ...)")
    p_run.set_defaults(func=_cmd_run)

    p_or = sub.add_parser("oracle", help="reference results for the config")
    p_or.add_argument("--config", required=True)
    p_or.add_argument("--out")
    p_or.set_defaults(func=_cmd_oracle)

    p_an = sub.add_parser("analyze", help="recompute estimators from samples")
    p_an.add_argument("run_dirs", nargs="+")
    p_an.add_argument("--out")
    p_an.add_argument("--channels", help="comma list: boson,fermion,distinguishable")
    p_an.set_defaults(func=_cmd_analyze)

    p_be = sub.add_parser("bennett", help="Z_O/Z_oo from an oo run and an O run")
    p_be.add_argument("oo_dir")
    p_be.add_argument("o_dir")
    p_be.add_argument("--out")
    p_be.add_argument("--e-boson", type=float, dest="e_boson",
                      help="boson energy for the free-energy route")
    p_be.add_argument("--e-boson-err", type=float, dest="e_boson_err")
    p_be.set_defaults(func=_cmd_bennett)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SignCollapseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NoOverlapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except NumericsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExpimdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
