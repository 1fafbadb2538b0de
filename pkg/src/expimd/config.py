"""Run configuration: strict sectioned text with explicit units.

Mixing the natural-unit toy systems with the meV/nm/fs quantum dot makes
unit mistakes the dominant failure mode, so every dimensional value in a
config file carries a unit token and is checked against the dimension the
key expects. Unknown sections or keys are rejected outright.

Toy units: hbar = m = 1, base time t0, base energy E0 = hbar/t0, base
length L0 = sqrt(hbar t0 / m). Dot units: meV, nm, fs, K. The token `kT`
means thermal energy at the configured temperature; `lchar` is the
characteristic length (1/sqrt(m omega beta) for the harmonic toy, l_0 for
the dot).

A canonical serialization (fixed key order, repr-exact floats) defines the
config hash embedded in every output file; parse -> serialize -> parse is
the identity.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .metadynamics import BiasState
from .model import SymmetryChannel, SystemSpec, Topology
from .potentials import (HBAR_MEV_FS, KB_MEV_PER_K, DotParams, FreeParticles,
                         IsotropicHarmonic, QuantumDot)
from .sampler import IntegratorSpec, WallSpec

__all__ = ["RunConfig", "parse_config", "parse_config_text", "config_hash"]


@dataclass(frozen=True)
class _Key:
    kind: str = "float"          # float | int | bool | str | strlist
    dimension: str | None = None  # energy, inv_energy, time, inv_time,
                                  # length, temperature, dimensionless
    default: object = None
    required: bool = False
    choices: tuple = ()


_SCHEMA = {
    "system": {
        "kind": _Key("str", required=True, choices=("toy", "dot")),
        "potential": _Key("str", default="harmonic",
                          choices=("free", "harmonic", "dot")),
        "dim": _Key("int", default=3),
        "num_beads": _Key("int", required=True),
        "beta": _Key("float", dimension="inv_energy"),
        "omega": _Key("float", dimension="inv_time", default=1.0),
        "hbar_omega0": _Key("float", dimension="energy"),
        "eta": _Key("float", default=1.0),
        "m_star_ratio": _Key("float", default=0.07),
        "epsilon_r": _Key("float", default=12.5),
        "gamma_c": _Key("float", default=0.9),
        "temperature": _Key("float", dimension="temperature"),
        "coulomb_floor_factor": _Key("float", default=1e-3),
    },
    "sampler": {
        "topology": _Key("str", default="oo", choices=("oo", "O")),
        "timestep": _Key("float", dimension="time", required=True),
        "n_steps": _Key("int", required=True),
        "sample_stride": _Key("int", default=5),
        "seed": _Key("int", default=1),
        "friction": _Key("float", dimension="inv_time"),
        "burn_in_fraction": _Key("float", default=0.1),
        "wall_min": _Key("float", dimension="energy"),
        "wall_max": _Key("float", dimension="energy"),
        "wall_k": _Key("float", dimension="inv_energy", default=0.0),
        "checkpoint_every": _Key("int", default=0),
        "chunk_steps": _Key("int", default=4096),
        "snapshot_momenta": _Key("bool", default=False),
    },
    "metadynamics": {
        "enabled": _Key("bool", default=False),
        "w0": _Key("float", dimension="energy", default=None),
        "sigma_g": _Key("float", dimension="energy", default=None),
        "bias_factor": _Key("float", default=4.0),
        "tau_g": _Key("int", default=2000),
        "build_steps": _Key("int", default=0),
        "grid_min": _Key("float", dimension="energy"),
        "grid_max": _Key("float", dimension="energy"),
        "grid_spacing": _Key("float", dimension="energy"),
    },
    "estimators": {
        "channels": _Key("strlist", default=("distinguishable",)),
        "energy": _Key("bool", default=True),
        "mean_pair_distance": _Key("bool", default=False),
        "pair_distribution": _Key("bool", default=False),
        "pair_bins": _Key("int", default=200),
        "pair_range": _Key("float", dimension="length", default=None),
        "density": _Key("bool", default=False),
        "density_bins": _Key("int", default=128),
        "density_range": _Key("float", dimension="length", default=None),
        "block_length": _Key("int", default=256),
        "snapshot_every": _Key("int", default=5),
        "segment_samples": _Key("int", default=500000),
    },
    "output": {
        "directory": _Key("str", default="run_output"),
        "text_samples": _Key("bool", default=False),
    },
}

_CHANNELS = {
    "boson": SymmetryChannel.BOSON,
    "fermion": SymmetryChannel.FERMION,
    "distinguishable": SymmetryChannel.DISTINGUISHABLE,
}


@dataclass
class RunConfig:
    """Parsed configuration plus the unit context to interpret it."""

    raw: dict                 # section -> key -> (number-or-string, unit-token)
    values: dict              # section -> key -> value in internal units
    canonical_text: str

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text.encode()).hexdigest()[:16]

    # -- system assembly -----------------------------------------------------

    def _toy(self):
        return self.values["system"]["kind"] == "toy"

    @property
    def beta(self) -> float:
        sys = self.values["system"]
        if self._toy():
            return sys["beta"]
        return 1.0 / (KB_MEV_PER_K * sys["temperature"])

    @property
    def kT(self) -> float:
        return 1.0 / self.beta

    @property
    def characteristic_length(self) -> float:
        sys = self.values["system"]
        if self._toy():
            if sys["potential"] == "harmonic":
                return 1.0 / math.sqrt(sys["omega"] * self.beta)
            return math.sqrt(self.beta)
        return self.dot_params.l_0

    @property
    def dot_params(self) -> DotParams:
        sys = self.values["system"]
        return DotParams.from_confinement(
            sys["hbar_omega0"], sys["eta"], sys["m_star_ratio"],
            sys["epsilon_r"], sys["gamma_c"], sys["coulomb_floor_factor"],
        )

    def system_spec(self) -> SystemSpec:
        sys = self.values["system"]
        if self._toy():
            if sys["potential"] == "harmonic":
                pot = IsotropicHarmonic(mass=1.0, omega=sys["omega"])
            elif sys["potential"] == "free":
                pot = FreeParticles()
            else:
                raise ConfigError("toy systems support free or harmonic potentials")
            return SystemSpec(mass=1.0, beta=self.beta, hbar=1.0,
                              num_beads=sys["num_beads"], dim=sys["dim"],
                              potential=pot)
        dot = self.dot_params
        return SystemSpec(mass=dot.m_star, beta=self.beta, hbar=HBAR_MEV_FS,
                          num_beads=sys["num_beads"], dim=2,
                          potential=QuantumDot(dot))

    def integrator_spec(self) -> IntegratorSpec:
        smp = self.values["sampler"]
        walls = None
        if smp["wall_k"] > 0.0:
            if smp["wall_min"] is None or smp["wall_max"] is None:
                raise ConfigError("wall_k set but wall_min/wall_max missing")
            walls = WallSpec(smp["wall_min"], smp["wall_max"], smp["wall_k"])
        meta = self.values["metadynamics"]
        burn_in = 0
        if not meta["enabled"]:
            burn_in = int(smp["burn_in_fraction"] * smp["n_steps"])
        return IntegratorSpec(
            timestep=smp["timestep"],
            n_steps=smp["n_steps"],
            sample_stride=smp["sample_stride"],
            seed=smp["seed"],
            friction=smp["friction"],
            topology=Topology.DISTINGUISHABLE if smp["topology"] == "oo"
            else Topology.CONNECTED,
            walls=walls,
            burn_in_steps=burn_in,
            chunk_steps=smp["chunk_steps"],
            snapshot_momenta=smp["snapshot_momenta"],
        )

    def bias_state(self) -> BiasState | None:
        meta = self.values["metadynamics"]
        if not meta["enabled"]:
            return None
        kt = self.kT
        w0 = meta["w0"] if meta["w0"] is not None else 0.5 * kt
        sigma = meta["sigma_g"] if meta["sigma_g"] is not None else 4.0 * kt
        gmin = meta["grid_min"] if meta["grid_min"] is not None else -60.0 * kt
        gmax = meta["grid_max"] if meta["grid_max"] is not None else 60.0 * kt
        return BiasState(
            gamma=meta["bias_factor"], w0=w0, sigma=sigma, tau_g=meta["tau_g"],
            grid_min=gmin, grid_max=gmax, grid_spacing=meta["grid_spacing"],
        )

    @property
    def channels(self):
        names = self.values["estimators"]["channels"]
        try:
            return [_CHANNELS[n] for n in names]
        except KeyError as exc:
            raise ConfigError(f"unknown channel {exc}") from exc

    @property
    def pair_range(self):
        r = self.values["estimators"]["pair_range"]
        return r if r is not None else 6.0 * self.characteristic_length

    @property
    def density_range(self):
        r = self.values["estimators"]["density_range"]
        return r if r is not None else 4.0 * self.characteristic_length


def _split_value(raw: str):
    parts = raw.split()
    if not parts:
        raise ConfigError("empty value")
    return parts[0], (parts[1] if len(parts) > 1 else None)


class _Units:
    """Resolves unit tokens to internal-unit factors for one config."""

    def __init__(self, kind, beta, lchar):
        self.kind = kind
        self.beta = beta
        self.lchar = lchar

    def factor(self, dimension, unit):
        kt = 1.0 / self.beta if self.beta else None
        toy = self.kind == "toy"
        table = {
            "energy": ({"E0": 1.0, "kT": kt} if toy
                       else {"meV": 1.0, "kT": kt}),
            "inv_energy": ({"/E0": 1.0, "/kT": None if kt is None else 1.0 / kt}
                           if toy else
                           {"/meV": 1.0, "/kT": None if kt is None else 1.0 / kt}),
            "time": {"t0": 1.0} if toy else {"fs": 1.0},
            "inv_time": {"/t0": 1.0} if toy else {"/fs": 1.0},
            "length": ({"L0": 1.0, "lchar": self.lchar} if toy
                       else {"nm": 1.0, "lchar": self.lchar}),
            "temperature": {"K": 1.0},
        }
        if dimension not in table:
            raise ConfigError(f"key has no unit dimension {dimension!r}")
        allowed = table[dimension]
        if unit is None:
            raise ConfigError(
                f"missing unit; expected one of {sorted(allowed)}"
            )
        if unit not in allowed:
            raise ConfigError(
                f"unit {unit!r} invalid here; expected one of {sorted(allowed)}"
            )
        f = allowed[unit]
        if f is None:
            raise ConfigError(f"unit {unit!r} not resolvable in this context")
        return f


def parse_config_text(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc

    raw = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        raw[section] = {}
        for key, value in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            raw[section][key] = value.strip()
    if "system" not in raw:
        raise ConfigError("missing [system] section")

    # first pass: types and unit tokens, no conversion yet
    typed = {}
    for section, keys in _SCHEMA.items():
        typed[section] = {}
        for key, spec in keys.items():
            present = section in raw and key in raw[section]
            if not present:
                if spec.required:
                    raise ConfigError(f"missing required key {key!r} in [{section}]")
                typed[section][key] = (spec.default, None)
                continue
            text_value = raw[section][key]
            if spec.kind == "str":
                val = text_value
                if spec.choices and val not in spec.choices:
                    raise ConfigError(
                        f"[{section}] {key} = {val!r}: expected one of {spec.choices}"
                    )
                typed[section][key] = (val, None)
            elif spec.kind == "strlist":
                vals = tuple(v.strip() for v in text_value.split(",") if v.strip())
                typed[section][key] = (vals, None)
            elif spec.kind == "bool":
                low = text_value.lower()
                if low not in ("true", "false", "yes", "no", "1", "0"):
                    raise ConfigError(f"[{section}] {key}: not a boolean: {text_value!r}")
                typed[section][key] = (low in ("true", "yes", "1"), None)
            else:
                num, unit = _split_value(text_value)
                try:
                    val = int(num) if spec.kind == "int" else float(num)
                except ValueError as exc:
                    raise ConfigError(
                        f"[{section}] {key}: bad number {num!r}"
                    ) from exc
                if spec.dimension is None and unit is not None:
                    raise ConfigError(
                        f"[{section}] {key} is dimensionless; drop the unit {unit!r}"
                    )
                if spec.dimension is not None and unit is None:
                    raise ConfigError(f"[{section}] {key}: missing unit")
                typed[section][key] = (val, unit)

    kind = typed["system"]["kind"][0]
    if kind == "toy":
        if typed["system"]["beta"][0] is None:
            raise ConfigError("toy systems require [system] beta")
        if typed["system"]["potential"][0] == "dot":
            raise ConfigError("toy systems cannot use the dot potential")
    else:
        for req in ("hbar_omega0", "temperature"):
            if typed["system"][req][0] is None:
                raise ConfigError(f"dot systems require [system] {req}")
        typed["system"]["potential"] = ("dot", None)
        typed["system"]["dim"] = (2, None)

    # resolve beta for kT units (toy beta itself must be in /E0)
    if kind == "toy":
        beta_val, beta_unit = typed["system"]["beta"]
        if beta_unit != "/E0":
            raise ConfigError("toy beta must be given in /E0")
        beta = float(beta_val)
    else:
        t_val, t_unit = typed["system"]["temperature"]
        if t_unit != "K":
            raise ConfigError("temperature must be given in K")
        beta = 1.0 / (KB_MEV_PER_K * float(t_val))

    # characteristic length needs omega/l0, resolved from typed values
    if kind == "toy":
        omega_val = typed["system"]["omega"][0] or 1.0
        if typed["system"]["potential"][0] == "harmonic":
            lchar = 1.0 / math.sqrt(float(omega_val) * beta)
        else:
            lchar = math.sqrt(beta)
    else:
        dot = DotParams.from_confinement(
            float(typed["system"]["hbar_omega0"][0]),
            float(typed["system"]["eta"][0]),
            float(typed["system"]["m_star_ratio"][0]),
            float(typed["system"]["epsilon_r"][0]),
            float(typed["system"]["gamma_c"][0]),
            float(typed["system"]["coulomb_floor_factor"][0]),
        )
        lchar = dot.l_0

    units = _Units(kind, beta, lchar)
    values = {}
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for key, spec in keys.items():
            val, unit = typed[section][key]
            if val is None or spec.dimension is None or unit is None:
                values[section][key] = val
            else:
                values[section][key] = val * units.factor(spec.dimension, unit)

    canonical = _serialize(typed)
    return RunConfig(raw=typed, values=values, canonical_text=canonical)


def _serialize(typed) -> str:
    out = io.StringIO()
    for section in _SCHEMA:
        rows = []
        for key, spec in _SCHEMA[section].items():
            val, unit = typed[section][key]
            if val is None:
                continue
            if spec.kind == "strlist":
                text = ", ".join(val)
            elif spec.kind == "bool":
                text = "true" if val else "false"
            elif spec.kind == "str":
                text = str(val)
            else:
                text = repr(val) if spec.kind == "float" else str(val)
                if unit is not None:
                    text += f" {unit}"
            rows.append(f"{key} = {text}\n")
        if rows:
            out.write(f"[{section}]\n")
            out.writelines(rows)
            out.write("\n")
    return out.getvalue()


def parse_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config_text(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_hash(cfg: RunConfig) -> str:
    return cfg.hash
