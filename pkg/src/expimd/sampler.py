"""Langevin path-integral molecular dynamics over either necklace topology.

The integrator is the BAOAB splitting (half-kick, half-drift, thermostat,
half-drift, half-kick) with a white-noise thermostat applied per Cartesian
bead coordinate; friction = 0 turns it into plain velocity Verlet. The
metadynamics bias force acts on the distinguishable topology only, through
the chain rule dV/ds * ds/dr on the four closure beads.

Runs are deterministic: all randomness flows from one numpy Generator whose
consumption order is a pure function of the global step index, so a
trajectory restarted from a checkpoint continues bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, NumericsError
from .metadynamics import BiasState
from .model import (BeadConfiguration, SystemSpec, Topology, collective_variable_s,
                    cv_gradient, potential_energy, spring_energy)
from .potentials import FreeParticles, IsotropicHarmonic, QuantumDot
from .potentials import gradient as potential_gradient
from .storage import SampleColumns

__all__ = [
    "IntegratorSpec",
    "WallSpec",
    "TrajectorySample",
    "SampleBatch",
    "Trajectory",
    "run_trajectory",
    "equilibrate_then_sample",
    "total_force",
    "total_energy",
    "initialize_configuration",
]

DEFAULT_CHUNK_STEPS = 4096


@dataclass(frozen=True)
class WallSpec:
    """Harmonic restraint outside [s_min, s_max]: V = k/2 (s - bound)^2."""

    s_min: float
    s_max: float
    wall_k: float

    def __post_init__(self):
        if self.wall_k < 0:
            raise ConfigError("wall_k must be >= 0")
        if self.s_max <= self.s_min:
            raise ConfigError("wall range is empty")


@dataclass(frozen=True)
class IntegratorSpec:
    """Time-integration parameters of one trajectory."""

    timestep: float
    n_steps: int
    sample_stride: int = 1
    seed: int = 0
    friction: float | None = None  # default 1/(10 dt)
    topology: Topology = Topology.DISTINGUISHABLE
    walls: WallSpec | None = None
    burn_in_steps: int = 0
    chunk_steps: int = DEFAULT_CHUNK_STEPS
    snapshot_momenta: bool = False

    def __post_init__(self):
        if not self.timestep > 0:
            raise ConfigError(f"timestep must be positive, got {self.timestep}")
        if self.sample_stride < 1:
            raise ConfigError("sample_stride must be >= 1")
        if self.n_steps < 0:
            raise ConfigError("n_steps must be >= 0")
        if self.friction is not None and self.friction < 0:
            raise ConfigError("friction must be >= 0")
        if self.chunk_steps < 1:
            raise ConfigError("chunk_steps must be >= 1")

    @property
    def effective_friction(self) -> float:
        return self.friction if self.friction is not None else 0.1 / self.timestep


@dataclass
class TrajectorySample:
    """One emitted sample (a row of SampleBatch)."""

    step: int
    s: float
    bias_value: float
    potential_energy: float
    spring_energy_oo: float
    vir_oo: float
    vir_o: float
    snapshot: np.ndarray | None = None


@dataclass
class SampleBatch:
    """Struct-of-arrays batch of samples plus bead snapshots."""

    columns: SampleColumns
    snapshots: np.ndarray
    momenta: np.ndarray | None
    phase: str

    def __len__(self):
        return len(self.columns)

    def samples(self):
        cols = self.columns
        for i in range(len(cols)):
            yield TrajectorySample(
                step=int(cols.step[i]), s=float(cols.s[i]),
                bias_value=float(cols.bias[i]),
                potential_energy=float(cols.pot[i]),
                spring_energy_oo=float(cols.spring_oo[i]),
                vir_oo=float(cols.vir_oo[i]), vir_o=float(cols.vir_o[i]),
                snapshot=self.snapshots[i],
            )


def _potential_code_params(potential):
    if isinstance(potential, FreeParticles):
        return _kernels.POT_FREE, np.zeros(1)
    if isinstance(potential, IsotropicHarmonic):
        return _kernels.POT_HARMONIC, np.array([potential.mass * potential.omega**2])
    if isinstance(potential, QuantumDot):
        d = potential.dot
        return _kernels.POT_DOT, np.array([
            d.m_star * d.omega_x**2,
            d.m_star * d.omega_y**2,
            d.coulomb_pref,
            d.soft_a**2,
        ])
    raise ConfigError(f"unsupported potential {potential!r}")


def initialize_configuration(system: SystemSpec, rng: np.random.Generator,
                             width=None) -> BeadConfiguration:
    """Gaussian bead cloud around the confinement minimum, thermal momenta.

    Width defaults to the classical thermal width 1/sqrt(m omega beta) for
    harmonic toys, l_0/2 for the dot and the free thermal length otherwise.
    """
    pot = system.potential
    if width is None:
        if isinstance(pot, IsotropicHarmonic):
            width = 1.0 / math.sqrt(pot.mass * pot.omega * system.beta)
        elif isinstance(pot, QuantumDot):
            width = 0.5 * pot.dot.l_0
        else:
            width = 0.5 * system.hbar * math.sqrt(system.beta / system.mass)
    positions = width * rng.standard_normal(system.shape)
    momenta = math.sqrt(system.mass / system.beta) * rng.standard_normal(system.shape)
    return BeadConfiguration(positions, momenta)


class Trajectory:
    """Owns the evolving MD state; yields SampleBatch chunks.

    Deposition happens between kernel chunks: chunk boundaries are forced
    onto multiples of the bias deposition stride, so the grid the kernel
    reads is exact at every step.
    """

    def __init__(self, system: SystemSpec, integ: IntegratorSpec,
                 init: BeadConfiguration | None = None,
                 bias: BiasState | None = None,
                 rng: np.random.Generator | None = None):
        if bias is not None and integ.topology is not Topology.DISTINGUISHABLE:
            raise ConfigError(
                "the metadynamics bias is defined on the distinguishable "
                "(oo) ensemble; connected-topology runs must be unbiased"
            )
        self.system = system
        self.integ = integ
        self.bias = bias
        self.rng = rng if rng is not None else np.random.default_rng(integ.seed)
        if init is None:
            init = initialize_configuration(system, self.rng)
        init.validate(system)
        if init.momenta is None:
            raise ConfigError("initial configuration needs momenta for MD")
        self.positions = np.ascontiguousarray(init.positions, dtype=np.float64)
        self.momenta = np.ascontiguousarray(init.momenta, dtype=np.float64)
        self.force = np.zeros_like(self.positions)
        self.step = 0

        dt = integ.timestep
        gamma = integ.effective_friction
        self._c1 = math.exp(-gamma * dt)
        self._noise_scale = math.sqrt(
            max(0.0, 1.0 - self._c1**2) * system.mass / system.beta
        )
        self._pot_code, self._pot_params = _potential_code_params(system.potential)
        self._topo = (_kernels.TOPO_OO
                      if integ.topology is Topology.DISTINGUISHABLE
                      else _kernels.TOPO_CONNECTED)

    @property
    def configuration(self) -> BeadConfiguration:
        return BeadConfiguration(self.positions.copy(), self.momenta.copy())

    def _bias_arrays(self):
        if self.bias is None:
            return False, np.zeros(2), 0.0, 1.0
        b = self.bias
        return True, b.grid_v, b.grid_min, 1.0 / b.grid_spacing

    def _wall_params(self):
        w = self.integ.walls
        if w is None or w.wall_k == 0.0:
            return False, 0.0, 0.0, 0.0
        return True, w.s_min, w.s_max, w.wall_k

    def advance(self, n_steps: int, phase="sample") -> SampleBatch:
        """Integrate exactly n_steps with one kernel call (no bias events)."""
        integ = self.integ
        nmax = n_steps // integ.sample_stride + 1
        shape = self.system.shape
        out_step = np.empty(nmax, dtype=np.int64)
        out = {name: np.empty(nmax) for name in
               ("s", "pot", "spring", "viroo", "viro", "bias")}
        out_snap = np.empty((nmax,) + shape)
        store_mom = integ.snapshot_momenta
        out_snap_mom = np.empty((nmax,) + shape if store_mom else (0,) + shape)
        thermostat = self._noise_scale != 0.0 or self._c1 != 1.0
        if thermostat:
            noise = self.rng.standard_normal((n_steps,) + shape)
        else:
            noise = np.zeros((0,) + shape)
        bias_on, grid_v, grid_s0, grid_inv_ds = self._bias_arrays()
        wall_on, s_lo, s_hi, wall_k = self._wall_params()
        nsamp = _kernels.integrate_chunk(
            self.positions, self.momenta, self.force, n_steps, self.step,
            integ.timestep, self.system.mass, self._c1, self._noise_scale,
            noise, self.system.k_spring, self._topo, self._pot_code,
            self._pot_params, bias_on, grid_v, grid_s0, grid_inv_ds,
            wall_on, s_lo, s_hi, wall_k,
            integ.sample_stride, integ.burn_in_steps,
            out_step, out["s"], out["pot"], out["spring"], out["viroo"],
            out["viro"], out["bias"], out_snap, store_mom, out_snap_mom,
        )
        self.step += n_steps
        if not (np.all(np.isfinite(self.positions))
                and np.all(np.isfinite(self.momenta))):
            bad = np.argwhere(~np.isfinite(self.positions))
            part, bead = (int(bad[0][0]), int(bad[0][1])) if len(bad) else (None, None)
            raise NumericsError("non-finite coordinate", step=self.step,
                                particle=part, bead=bead)
        columns = SampleColumns(
            step=out_step[:nsamp].copy(), s=out["s"][:nsamp].copy(),
            pot=out["pot"][:nsamp].copy(), spring_oo=out["spring"][:nsamp].copy(),
            vir_oo=out["viroo"][:nsamp].copy(), vir_o=out["viro"][:nsamp].copy(),
            bias=out["bias"][:nsamp].copy(),
        )
        return SampleBatch(
            columns=columns,
            snapshots=out_snap[:nsamp].copy(),
            momenta=out_snap_mom[:nsamp].copy() if store_mom else None,
            phase=phase,
        )

    def _next_boundary(self, end_step: int) -> int:
        """Largest admissible chunk end given deposits and the chunk cap."""
        nxt = min(end_step, self.step + self.integ.chunk_steps)
        if self.bias is not None and not self.bias.frozen:
            tau = self.bias.tau_g
            next_deposit = (self.step // tau + 1) * tau
            nxt = min(nxt, next_deposit)
        return nxt

    def run(self, n_steps: int, phase="sample"):
        """Generate SampleBatch chunks over n_steps, depositing on schedule."""
        end = self.step + n_steps
        while self.step < end:
            target = self._next_boundary(end)
            batch = self.advance(target - self.step, phase=phase)
            deposit_due = (
                self.bias is not None
                and not self.bias.frozen
                and self.step % self.bias.tau_g == 0
                and self.step > 0
            )
            yield batch
            if deposit_due:
                s_now = collective_variable_s(
                    BeadConfiguration(self.positions), self.system
                )
                self.bias.deposit(s_now, self.system.beta)


def run_trajectory(system: SystemSpec, integ: IntegratorSpec,
                   init: BeadConfiguration | None = None,
                   bias: BiasState | None = None,
                   rng: np.random.Generator | None = None):
    """Run integ.n_steps and return (batches-merged SampleBatch, trajectory).

    Convenience wrapper for in-memory runs; large runs should iterate
    Trajectory.run and stream batches to disk instead.
    """
    traj = Trajectory(system, integ, init=init, bias=bias, rng=rng)
    batches = list(traj.run(integ.n_steps))
    columns = SampleColumns.concatenate(b.columns for b in batches)
    snaps = (np.concatenate([b.snapshots for b in batches])
             if batches else np.empty((0,) + system.shape))
    mom = None
    if integ.snapshot_momenta and batches:
        mom = np.concatenate([b.momenta for b in batches])
    return SampleBatch(columns, snaps, mom, "sample"), traj


def equilibrate_then_sample(system: SystemSpec, integ: IntegratorSpec,
                            bias: BiasState, build_steps: int,
                            sample_steps: int,
                            init: BeadConfiguration | None = None,
                            rng: np.random.Generator | None = None):
    """Two-phase protocol: deposit hills, freeze, then stream samples.

    Yields ('build'|'sample', SampleBatch) tuples; bias is frozen in place
    after build_steps. The deposited count after the build phase equals
    floor(build_steps / tau_G).
    """
    if bias is None:
        raise ConfigError("equilibrate_then_sample requires a bias")
    traj = Trajectory(system, integ, init=init, bias=bias, rng=rng)

    def phases():
        for batch in traj.run(build_steps, phase="build"):
            yield "build", batch
        bias.freeze()
        for batch in traj.run(sample_steps, phase="sample"):
            yield "sample", batch

    return traj, phases()


# --- reference force/energy (numpy; used by tests and the public API) -------


def total_energy(config: BeadConfiguration, system: SystemSpec, topo: Topology,
                 bias: BiasState | None = None, walls: WallSpec | None = None,
                 bias_method="exact") -> float:
    """spring + potential + bias(s) + wall(s); no kinetic term."""
    e = spring_energy(config, system, topo) + potential_energy(config, system)
    if bias is not None or walls is not None:
        s = collective_variable_s(config, system)
        if bias is not None:
            e += float(bias.bias_value(s, method=bias_method))
        if walls is not None:
            if s < walls.s_min:
                e += 0.5 * walls.wall_k * (s - walls.s_min) ** 2
            elif s > walls.s_max:
                e += 0.5 * walls.wall_k * (s - walls.s_max) ** 2
    return e


def total_force(config: BeadConfiguration, system: SystemSpec, topo: Topology,
                bias: BiasState | None = None, walls: WallSpec | None = None,
                bias_method="exact") -> np.ndarray:
    """-grad of total_energy, shape (2, P, dim)."""
    pos = config.positions
    if pos.shape != system.shape:
        raise ConfigError(f"positions shape {pos.shape} != {system.shape}")
    k2 = 2.0 * system.k_spring
    if topo is Topology.DISTINGUISHABLE:
        force = -k2 * (2.0 * pos - np.roll(pos, -1, axis=1) - np.roll(pos, 1, axis=1))
    else:
        ring = np.concatenate([pos[0], pos[1]], axis=0)
        f = -k2 * (2.0 * ring - np.roll(ring, -1, axis=0) - np.roll(ring, 1, axis=0))
        force = np.stack([f[: system.num_beads], f[system.num_beads:]])
    for i in range(system.num_beads):
        g1, g2 = potential_gradient(system.potential, pos[0, i], pos[1, i])
        force[0, i] -= g1 / system.num_beads
        force[1, i] -= g2 / system.num_beads
    if bias is not None or (walls is not None and walls.wall_k > 0.0):
        s = collective_variable_s(config, system)
        dv = 0.0
        if bias is not None:
            dv += float(bias.bias_derivative(s, method=bias_method))
        if walls is not None:
            if s < walls.s_min:
                dv += walls.wall_k * (s - walls.s_min)
            elif s > walls.s_max:
                dv += walls.wall_k * (s - walls.s_max)
        if dv != 0.0:
            force -= dv * cv_gradient(config, system)
    return force
