"""Core ring-polymer model for two identical quantum particles.

Each particle is a closed necklace of P beads. Two necklace topologies exist:
the distinguishable one ("oo", two separate P-bead rings) and the connected
one ("O", a single 2P-bead ring obtained by swapping the closure links).
The difference in spring energy between them,

    s = V_O - V_oo,

is the exchange collective variable. Because all interior links are shared,
s reduces to a four-bead closed form involving only the closure beads
r_1^1, r_1^P, r_2^1, r_2^P; that form is used in hot paths and checked
against the full difference in tests.

Distinguishable-ensemble averages are converted to boson/fermion averages
with the weight W_I(s) = 1 +- exp(-beta*s). The weight is carried as a
(sign, log|W|) pair so that metadynamics-driven excursions to very negative
s (beta*|s| of order 1e4) cannot overflow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OverflowGuardError, ShapeError
from .potentials import PotentialSpec, evaluate as evaluate_potential

__all__ = [
    "Topology",
    "SymmetryChannel",
    "SystemSpec",
    "BeadConfiguration",
    "spring_energy",
    "potential_energy",
    "collective_variable_s",
    "cv_gradient",
    "symmetry_weight",
    "symmetry_weight_signed",
]

# log of the largest double; |log W| beyond this cannot be exponentiated
_LOG_FLOAT_MAX = math.log(np.finfo(np.float64).max)


class Topology(enum.Enum):
    """Necklace topology: two separate rings, or one exchange-connected ring."""

    DISTINGUISHABLE = "oo"
    CONNECTED = "O"


class SymmetryChannel(enum.Enum):
    """Quantum-symmetry channel selecting the sign in W_I = 1 +- e^{-beta s}."""

    BOSON = "boson"
    FERMION = "fermion"
    DISTINGUISHABLE = "distinguishable"

    @property
    def sign(self) -> int:
        """+1 for bosons, -1 for fermions, 0 when weighting is disabled."""
        if self is SymmetryChannel.BOSON:
            return 1
        if self is SymmetryChannel.FERMION:
            return -1
        return 0


@dataclass(frozen=True)
class SystemSpec:
    """Physical parameters fixing all energy scales of the bead system.

    mass, beta and hbar are in one consistent unit system (natural units for
    the toy models, meV/nm/fs for the quantum dot). num_beads is the Trotter
    number P, dim the spatial dimension.
    """

    mass: float
    beta: float
    hbar: float
    num_beads: int
    dim: int
    potential: PotentialSpec

    def __post_init__(self):
        if self.num_beads < 2:
            raise ValueError(f"num_beads must be >= 2, got {self.num_beads}")
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        for name in ("mass", "beta", "hbar"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if not math.isfinite(self.k_spring):
            raise ValueError("spring constant overflows; check mass/beta/hbar")

    @property
    def k_spring(self) -> float:
        """Harmonic link constant m*P / (2 hbar^2 beta^2)."""
        return self.mass * self.num_beads / (2.0 * self.hbar**2 * self.beta**2)

    @property
    def shape(self) -> tuple:
        return (2, self.num_beads, self.dim)


@dataclass
class BeadConfiguration:
    """Bead positions (and optionally momenta) of the two necklaces.

    positions has shape (2, P, dim): particle index, bead index, coordinate.
    momenta, when present, has the same shape.
    """

    positions: np.ndarray
    momenta: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.momenta is not None:
            self.momenta = np.ascontiguousarray(self.momenta, dtype=np.float64)

    def validate(self, spec: SystemSpec):
        if self.positions.shape != spec.shape:
            raise ShapeError("positions", spec.shape, self.positions.shape)
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite bead position")
        if self.momenta is not None:
            if self.momenta.shape != spec.shape:
                raise ShapeError("momenta", spec.shape, self.momenta.shape)
            if not np.all(np.isfinite(self.momenta)):
                raise ValueError("non-finite bead momentum")
        return self

    def copy(self) -> "BeadConfiguration":
        mom = None if self.momenta is None else self.momenta.copy()
        return BeadConfiguration(self.positions.copy(), mom)


def _check_shape(config: BeadConfiguration, spec: SystemSpec):
    if config.positions.shape != spec.shape:
        raise ShapeError("positions", spec.shape, config.positions.shape)


def spring_energy(config: BeadConfiguration, spec: SystemSpec, topo: Topology) -> float:
    """Total harmonic link energy of the given topology (no physical potential).

    Distinguishable: sum over both rings of k_spring (r^{i+1}-r^i)^2 with
    cyclic closure per particle. Connected: the same sum over the single
    2P-bead ring ordered (particle 1 beads 1..P, particle 2 beads 1..P).
    """
    _check_shape(config, spec)
    k = spec.k_spring
    pos = config.positions
    if topo is Topology.DISTINGUISHABLE:
        diff = np.roll(pos, -1, axis=1) - pos
        return k * float(np.sum(diff * diff))
    ring = np.concatenate([pos[0], pos[1]], axis=0)
    diff = np.roll(ring, -1, axis=0) - ring
    return k * float(np.sum(diff * diff))


def potential_energy(config: BeadConfiguration, spec: SystemSpec) -> float:
    """Bead-averaged physical potential (1/P) sum_i V(r_1^i, r_2^i).

    Identical for both topologies.
    """
    _check_shape(config, spec)
    pos = config.positions
    total = 0.0
    for i in range(spec.num_beads):
        total += evaluate_potential(spec.potential, pos[0, i], pos[1, i])
    return total / spec.num_beads


def collective_variable_s(config: BeadConfiguration, spec: SystemSpec) -> float:
    """Exchange collective variable s = V_O - V_oo via the four-bead form.

    Only the closure links differ between the two topologies, so

        s = k [ (r_2^1-r_1^P)^2 + (r_1^1-r_2^P)^2
              - (r_1^1-r_1^P)^2 - (r_2^1-r_2^P)^2 ].
    """
    _check_shape(config, spec)
    pos = config.positions
    r1a, r1b = pos[0, 0], pos[0, -1]
    r2a, r2b = pos[1, 0], pos[1, -1]

    def sq(v):
        return float(np.dot(v, v))

    return spec.k_spring * (sq(r2a - r1b) + sq(r1a - r2b) - sq(r1a - r1b) - sq(r2a - r2b))


def cv_gradient(config: BeadConfiguration, spec: SystemSpec) -> np.ndarray:
    """Gradient of s with respect to every bead coordinate, shape (2, P, dim).

    Nonzero only on the four closure beads.
    """
    _check_shape(config, spec)
    pos = config.positions
    grad = np.zeros_like(pos)
    two_k = 2.0 * spec.k_spring
    r1a, r1b = pos[0, 0], pos[0, -1]
    r2a, r2b = pos[1, 0], pos[1, -1]
    grad[0, 0] = two_k * (r1b - r2b)
    grad[0, -1] = two_k * (r1a - r2a)
    grad[1, 0] = two_k * (r2b - r1b)
    grad[1, -1] = two_k * (r2a - r1a)
    return grad


def symmetry_weight_signed(s, beta: float, channel: SymmetryChannel):
    """(sign, log|W|) of W_I(s) = 1 +- e^{-beta s}, overflow-safe, vectorized.

    For the boson channel the sign is always +1. For the fermion channel the
    sign equals sign(s) and W_F(0) = 0 is returned as (0, -inf). The
    distinguishable channel has W = 1 identically.
    """
    s = np.asarray(s, dtype=np.float64)
    x = beta * s
    if channel is SymmetryChannel.DISTINGUISHABLE:
        return np.ones_like(x), np.zeros_like(x)
    if channel is SymmetryChannel.BOSON:
        # log(1 + e^{-x}) for any x
        return np.ones_like(x), np.logaddexp(0.0, -x)
    if channel is not SymmetryChannel.FERMION:
        raise ValueError(f"unknown channel {channel!r}")
    sign = np.sign(x)
    logw = np.full_like(x, -np.inf)
    pos = x > 0
    neg = x < 0
    # 1 - e^{-x} = -expm1(-x) > 0 for x > 0
    logw[pos] = np.log(-np.expm1(-x[pos]))
    # |1 - e^{-x}| = expm1(-x) for x < 0; log via -x + log1p(-e^{x})
    logw[neg] = -x[neg] + np.log1p(-np.exp(x[neg]))
    return sign, logw


def symmetry_weight(s: float, beta: float, channel: SymmetryChannel) -> float:
    """Quantum-symmetry weight W_I(s) = 1 +- e^{-beta s} as a plain float.

    Raises OverflowGuardError when |W| exceeds the float64 range; accumulators
    should use symmetry_weight_signed, which cannot overflow.
    """
    sign, logw = symmetry_weight_signed(float(s), beta, channel)
    if logw > _LOG_FLOAT_MAX:
        raise OverflowGuardError(
            f"|W| = exp({float(logw):.1f}) overflows float64; "
            "use symmetry_weight_signed"
        )
    return float(sign * np.exp(logw))
