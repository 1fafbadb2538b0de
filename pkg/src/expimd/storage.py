"""Sample records, run-directory layout and checkpoint files.

A run directory holds numbered binary segments (numpy .npz with a JSON
header entry), a hills file when metadynamics is active, a checkpoint and a
summary. Every file embeds the config hash, package version and seed, and
none embeds a timestamp: two runs of the same configuration produce
byte-identical output.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SEGMENT_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1

SCALAR_COLUMNS = ("step", "s", "pot", "spring_oo", "vir_oo", "vir_o", "bias")


@dataclass
class SampleColumns:
    """Column arrays for a stream of trajectory samples.

    step is the global MD step of each sample; s the exchange variable; pot
    the bead-averaged potential; spring_oo the distinguishable-topology
    spring energy; vir_oo / vir_o the centroid- and center-of-mass-referenced
    virial sums; bias the metadynamics potential actually applied at the
    sample (zero for unbiased runs).
    """

    step: np.ndarray
    s: np.ndarray
    pot: np.ndarray
    spring_oo: np.ndarray
    vir_oo: np.ndarray
    vir_o: np.ndarray
    bias: np.ndarray

    def __len__(self):
        return len(self.step)

    @classmethod
    def empty(cls):
        return cls(*(np.empty(0) for _ in SCALAR_COLUMNS))

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, name) for p in parts])
                     for name in SCALAR_COLUMNS))


def write_segment(path, columns: SampleColumns, *, header: dict,
                  snapshots=None, snapshot_steps=None, momenta=None):
    """Write one sample segment. snapshots: (n, 2, P, dim) bead positions
    retained for histogram estimators, tagged with their sample steps."""
    payload = {name: getattr(columns, name) for name in SCALAR_COLUMNS}
    header = dict(header)
    header["format_version"] = SEGMENT_FORMAT_VERSION
    payload["header_json"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode(), dtype=np.uint8
    )
    if snapshots is not None:
        payload["snapshots"] = snapshots
        payload["snapshot_steps"] = snapshot_steps
    if momenta is not None:
        payload["momenta"] = momenta
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


@dataclass
class Segment:
    header: dict
    columns: SampleColumns
    snapshots: np.ndarray | None = None
    snapshot_steps: np.ndarray | None = None
    momenta: np.ndarray | None = None


def read_segment(path) -> Segment:
    with np.load(path) as data:
        header = json.loads(bytes(data["header_json"]).decode())
        if header.get("format_version") != SEGMENT_FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported segment version")
        columns = SampleColumns(*(data[name] for name in SCALAR_COLUMNS))
        snaps = data["snapshots"] if "snapshots" in data.files else None
        snap_steps = data["snapshot_steps"] if "snapshot_steps" in data.files else None
        momenta = data["momenta"] if "momenta" in data.files else None
    return Segment(header, columns, snaps, snap_steps, momenta)


def segment_paths(run_dir):
    return sorted(pathlib.Path(run_dir).glob("samples_*.npz"))


def iter_segments(run_dir, phase=None):
    """Yield segments of a run directory in step order."""
    for path in segment_paths(run_dir):
        seg = read_segment(path)
        if phase is not None and seg.header.get("phase") != phase:
            continue
        yield seg


def load_columns(run_dir, phase="sample") -> SampleColumns:
    return SampleColumns.concatenate(
        seg.columns for seg in iter_segments(run_dir, phase=phase)
    )


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(path, *, positions, momenta, step, rng_state, meta,
                    bias=None):
    """Atomic-enough checkpoint write (temp file + replace)."""
    payload = {
        "positions": positions,
        "momenta": momenta,
        "step": np.asarray(step, dtype=np.int64),
        "rng_json": np.frombuffer(json.dumps(rng_state).encode(), dtype=np.uint8),
        "meta_json": np.frombuffer(
            json.dumps(dict(meta, format_version=CHECKPOINT_FORMAT_VERSION),
                       sort_keys=True).encode(),
            dtype=np.uint8,
        ),
    }
    if bias is not None:
        payload["bias_centers"] = np.asarray(bias.centers)
        payload["bias_heights"] = np.asarray(bias.heights)
        payload["bias_params"] = np.asarray([
            bias.gamma, bias.w0, bias.sigma, float(bias.tau_g),
            bias.grid_min, bias.grid_max, bias.grid_spacing,
            1.0 if bias.frozen else 0.0,
        ])
    tmp = pathlib.Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    tmp.replace(path)


def load_checkpoint(path):
    """Returns a dict with positions, momenta, step, rng_state, meta, bias."""
    from .metadynamics import BiasState

    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode())
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version")
        out = {
            "positions": data["positions"],
            "momenta": data["momenta"],
            "step": int(data["step"]),
            "rng_state": json.loads(bytes(data["rng_json"]).decode()),
            "meta": meta,
            "bias": None,
        }
        if "bias_params" in data.files:
            p = data["bias_params"]
            out["bias"] = BiasState(
                gamma=float(p[0]), w0=float(p[1]), sigma=float(p[2]),
                tau_g=int(p[3]), grid_min=float(p[4]), grid_max=float(p[5]),
                grid_spacing=float(p[6]),
                centers=list(map(float, data["bias_centers"])),
                heights=list(map(float, data["bias_heights"])),
            )
            out["bias"].frozen = bool(p[7])
    return out
