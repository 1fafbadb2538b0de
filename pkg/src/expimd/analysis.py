"""Estimator orchestration over stored sample segments.

The same functions produce the in-run summary and the `analyze` command's
output: an estimate is always computed from the stored records, so
re-analysis of a finished run reproduces the run's own summary exactly.

Per-sample statistical weights combine the symmetry weight W(s) of the
requested channel with the reweighting factor e^{+beta V(s)} built from the
*recorded* bias column, i.e. the bias the dynamics actually felt.
"""

from __future__ import annotations

import json
import math
import pathlib

import numpy as np

from . import __version__
from .config import RunConfig, parse_config_text
from .errors import ConfigError, SignCollapseError
from .estimators import (Histogram1D, Histogram2D, WeightedAccumulator,
                         bennett_ratio, channel_log_weights,
                         fermion_energy_via_free_energy, virial_terms_signed)
from .model import SymmetryChannel
from .storage import iter_segments, load_columns

_CHANNEL_NAMES = {
    SymmetryChannel.BOSON: "boson",
    SymmetryChannel.FERMION: "fermion",
    SymmetryChannel.DISTINGUISHABLE: "distinguishable",
}


def run_config_from_dir(run_dir) -> RunConfig:
    for seg in iter_segments(run_dir):
        return parse_config_text(seg.header["config"])
    raise ConfigError(f"{run_dir}: no sample segments found")


class _ChannelAccumulators:
    def __init__(self, cfg: RunConfig, channel: SymmetryChannel, n_dim: int):
        est = cfg.values["estimators"]
        self.channel = channel
        self.beta = cfg.beta
        self.n_dim = n_dim
        block = est["block_length"]
        self.scalars = WeightedAccumulator(["energy", "s"], block_length=block)
        self.pair_mean = None
        if est["mean_pair_distance"]:
            self.pair_mean = WeightedAccumulator(["r"], block_length=block)
        self.pair = None
        self.density = None
        if est["pair_distribution"]:
            self.pair = Histogram1D(est["pair_bins"], 0.0, cfg.pair_range,
                                    block_length=max(block // 4, 16))
        if est["density"]:
            r = cfg.density_range
            self.density = Histogram2D(est["density_bins"], est["density_bins"],
                                       -r, r, -r, r,
                                       block_length=max(block // 4, 16))

    def add_columns(self, cols, log_rw):
        sign, logw = channel_log_weights(cols.s, self.beta, self.channel, log_rw)
        num_sign, num_log = virial_terms_signed(
            cols.pot, cols.s, cols.vir_oo, cols.vir_o,
            self.beta, self.n_dim, self.channel,
        )
        self.scalars.add_signed_batch(
            sign, logw,
            {
                "energy": (num_sign, num_log + log_rw),
                "s": _signed_obs(cols.s, sign, logw),
            },
        )

    def add_snapshots(self, snaps, s_vals, log_rw):
        if self.pair is None and self.density is None and self.pair_mean is None:
            return
        sign, logw = channel_log_weights(s_vals, self.beta, self.channel, log_rw)
        dists = np.linalg.norm(snaps[:, 0] - snaps[:, 1], axis=-1)
        if self.pair_mean is not None:
            self.pair_mean.add_batch(sign, logw, {"r": dists.mean(axis=1)})
        if self.pair is not None:
            self.pair.add_batch(list(dists), sign, logw)
        if self.density is not None:
            pts = snaps.reshape(snaps.shape[0], -1, snaps.shape[-1])
            self.density.add_batch(list(pts), sign, logw)


def _signed_obs(values, w_sign, w_log):
    values = np.asarray(values, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logs = np.where(values != 0.0, np.log(np.abs(values)), -np.inf) + w_log
    return np.sign(values) * w_sign, logs


def analyze_run(run_dirs, out_dir=None, channels=None, phase="sample") -> dict:
    """Compute all configured estimators over one or more run directories.

    Multiple directories are merged (independent trajectories of the same
    system). Returns the summary dict; writes summary.json and the table
    files into out_dir when given.
    """
    if isinstance(run_dirs, (str, pathlib.Path)):
        run_dirs = [run_dirs]
    run_dirs = [pathlib.Path(d) for d in run_dirs]
    cfg = run_config_from_dir(run_dirs[0])
    system = cfg.system_spec()
    if channels is None:
        channels = cfg.channels
    accs = {ch: _ChannelAccumulators(cfg, ch, system.dim) for ch in channels}

    n_samples = 0
    seeds = []
    for run_dir in run_dirs:
        for seg in iter_segments(run_dir, phase=phase):
            cols = seg.columns
            if seg.header.get("config_hash") != cfg.hash:
                raise ConfigError(
                    f"{run_dir}: segment config hash mismatch; "
                    "refusing to merge different systems"
                )
            if seg.header.get("seed") not in seeds:
                seeds.append(seg.header.get("seed"))
            n_samples += len(cols)
            log_rw = cfg.beta * cols.bias
            for acc in accs.values():
                acc.add_columns(cols, log_rw)
            if seg.snapshots is not None and len(seg.snapshots):
                idx = np.searchsorted(cols.step, seg.snapshot_steps)
                for acc in accs.values():
                    acc.add_snapshots(seg.snapshots, cols.s[idx], log_rw[idx])

    est_cfg = cfg.values["estimators"]
    summary = {
        "version": __version__,
        "config_hash": cfg.hash,
        "seeds": seeds,
        "beta": cfg.beta,
        "n_samples": n_samples,
        "channels": {},
    }
    tables = {}
    for ch, acc in accs.items():
        name = _CHANNEL_NAMES[ch]
        w_mean, w_se = acc.scalars.weight_mean()
        entry = {
            "weight_mean": w_mean,
            "weight_stderr": w_se,
            "effective_samples": acc.scalars.effective_samples,
            "sign_collapsed": False,
        }
        try:
            if est_cfg["energy"]:
                e = acc.scalars.ratio("energy")
                entry["energy"] = {"value": e.value, "stderr": e.stderr}
            s_est = acc.scalars.ratio("s")
            entry["mean_s"] = {"value": s_est.value, "stderr": s_est.stderr}
            if acc.pair_mean is not None and acc.pair_mean.count:
                r_est = acc.pair_mean.ratio("r")
                entry["mean_pair_distance"] = {"value": r_est.value,
                                               "stderr": r_est.stderr}
        except SignCollapseError:
            entry["sign_collapsed"] = True
        if acc.pair is not None and not entry["sign_collapsed"]:
            try:
                ro = acc.pair.readout(norm="unit_integral")
                tables[f"pair_distribution_{name}"] = _pair_table(ro)
            except (SignCollapseError, ZeroDivisionError):
                entry["sign_collapsed"] = True
        if acc.density is not None and not entry["sign_collapsed"]:
            try:
                ro = acc.density.readout2d(norm="count2")
                tables[f"density_{name}"] = _density_table(ro)
            except (SignCollapseError, ZeroDivisionError):
                entry["sign_collapsed"] = True
        summary["channels"][name] = entry

    if out_dir is not None:
        out_dir = pathlib.Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stamp = {"config_hash": cfg.hash, "version": __version__}
        for name, text in tables.items():
            path = out_dir / f"{name}.txt"
            with open(path, "w") as fh:
                fh.write(f"# expimd table {name}\n")
                for key, val in stamp.items():
                    fh.write(f"# {key}={val}\n")
                fh.write(text)
            summary.setdefault("tables", {})[name] = path.name
        with open(out_dir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return summary


def _pair_table(ro) -> str:
    lines = ["# r value stderr effective_count\n"]
    for r, v, e, ne in zip(ro.centers, ro.values, ro.stderr, ro.effective_counts):
        lines.append(f"{r!r} {v!r} {e!r} {ne!r}\n")
    return "".join(lines)


def _density_table(ro) -> str:
    xc, yc = ro.centers
    lines = ["# x y value stderr\n"]
    for i, x in enumerate(xc):
        for j, y in enumerate(yc):
            lines.append(f"{x!r} {y!r} {ro.values[i, j]!r} {ro.stderr[i, j]!r}\n")
    return "".join(lines)


def load_pair_table(path):
    """(r, value, stderr, effective_count) arrays from a pair table file."""
    data = np.loadtxt(path)
    return data[:, 0], data[:, 1], data[:, 2], data[:, 3]


def load_density_table(path, nbins):
    data = np.loadtxt(path)
    value = data[:, 2].reshape(nbins, nbins)
    stderr = data[:, 3].reshape(nbins, nbins)
    x = np.unique(data[:, 0])
    y = np.unique(data[:, 1])
    return x, y, value, stderr


def bennett_report(oo_dir, o_dir, out_dir=None, e_boson=None,
                   e_boson_err=0.0) -> dict:
    """Bennett ratio between a distinguishable run and a connected run.

    When e_boson is not given it is taken from the oo run's summary (boson
    channel), enabling the free-energy route to the fermion energy.
    """
    oo_dir, o_dir = pathlib.Path(oo_dir), pathlib.Path(o_dir)
    cfg = run_config_from_dir(oo_dir)
    cols_oo = load_columns(oo_dir)
    cols_o = load_columns(o_dir)
    if len(cols_oo) == 0 or len(cols_o) == 0:
        raise ConfigError("both runs need sample-phase records")
    beta = cfg.beta
    result = bennett_ratio(
        cols_oo.s, cols_o.s, beta,
        log_reweight_oo=beta * cols_oo.bias,
        log_reweight_o=beta * cols_o.bias,
        block_length=cfg.values["estimators"]["block_length"],
    )
    report = {
        "version": __version__,
        "config_hash": cfg.hash,
        "beta": beta,
        "ratio": result.ratio,
        "ratio_stderr": result.stderr,
        "c_star": result.c_star,
        "plateau": result.plateau,
        "plateau_ok": result.plateau_ok,
        "fermi_mean_oo": result.fermi_mean_oo,
        "fermi_mean_o": result.fermi_mean_o,
        "n_samples": [len(cols_oo), len(cols_o)],
    }
    if e_boson is None:
        summary_path = oo_dir / "summary.json"
        if summary_path.exists():
            with open(summary_path) as fh:
                summary = json.load(fh)
            boson = summary.get("channels", {}).get("boson", {})
            if "energy" in boson:
                e_boson = boson["energy"]["value"]
                e_boson_err = boson["energy"]["stderr"]
    if e_boson is not None and 0.0 < result.ratio < 1.0:
        e_f, e_f_err = fermion_energy_via_free_energy(
            e_boson, result.ratio, beta, e_boson_err, result.stderr
        )
        report["fermion_energy"] = {"value": e_f, "stderr": e_f_err,
                                    "e_boson": e_boson,
                                    "e_boson_stderr": e_boson_err}
    if out_dir is not None:
        out_dir = pathlib.Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "bennett.json", "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return report
