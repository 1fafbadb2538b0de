"""Interaction potentials and the two-electron quantum-dot parameterization.

Two unit systems are used. Toy systems are in natural units hbar = m = 1.
The quantum dot is in meV / nm / fs, in which

    hbar = 658.2119569 meV fs
    k_B  = 0.08617333  meV/K
    m_e  = (m_e c^2) / c^2  with c = 299.792458 nm/fs
    e^2/(4 pi eps_0) = 1439.964516 meV nm

The dot confines each electron in an anisotropic 2D harmonic well
U(x, y) = m*/2 (w_x^2 x^2 + w_y^2 y^2) and couples the pair through a
rescaled Coulomb repulsion V_C(r) = gamma_C e^2 / (4 pi eps_r eps_0 r),
softened below a floor a << l_0 so that transient bead encounters during
molecular dynamics never produce an infinite energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "HBAR_MEV_FS",
    "KB_MEV_PER_K",
    "ELECTRON_MASS_MEV_FS2_NM2",
    "COULOMB_MEV_NM",
    "PotentialSpec",
    "FreeParticles",
    "IsotropicHarmonic",
    "QuantumDot",
    "DotParams",
    "evaluate",
    "gradient",
    "solve_dot_frequencies",
]

HBAR_MEV_FS = 658.2119569
KB_MEV_PER_K = 0.08617333
_C_NM_PER_FS = 299.792458
_ME_C2_MEV = 510998.95000e3
ELECTRON_MASS_MEV_FS2_NM2 = _ME_C2_MEV / _C_NM_PER_FS**2
COULOMB_MEV_NM = 1439.964516  # e^2/(4 pi eps_0)


def solve_dot_frequencies(hbar_omega0: float, eta: float) -> tuple:
    """Invert (omega_0, eta) -> (omega_x, omega_y).

    omega_0 = sqrt((w_x^2 + w_y^2)/2) and eta = w_y/w_x have the unique
    positive solution w_x = omega_0 sqrt(2/(1+eta^2)), w_y = eta w_x.
    Input and output share the same (energy or angular-frequency) units.
    """
    if hbar_omega0 <= 0 or eta <= 0:
        raise ValueError("hbar_omega0 and eta must be positive")
    wx = hbar_omega0 * math.sqrt(2.0 / (1.0 + eta * eta))
    return wx, eta * wx


@dataclass(frozen=True)
class DotParams:
    """Quantum-dot material and confinement parameters (meV/nm/fs units).

    omega_x / omega_y are angular frequencies in 1/fs. Derived quantities
    follow their defining formulas: omega_0 = sqrt((w_x^2+w_y^2)/2),
    eta = w_y/w_x, l_0 = sqrt(hbar/(m* omega_0)) and the Wigner parameter
    R_W = V_C(l_0)/(hbar omega_0). The Coulomb softening floor is
    soft_floor_factor * l_0.
    """

    m_star_ratio: float
    omega_x: float
    omega_y: float
    epsilon_r: float
    gamma_c: float
    soft_floor_factor: float = 1e-3

    def __post_init__(self):
        if self.omega_x <= 0 or self.omega_y <= 0:
            raise ValueError("confinement frequencies must be positive")
        if self.epsilon_r <= 0:
            raise ValueError("epsilon_r must be positive")
        if not 0.0 <= self.gamma_c <= 1.0:
            # 0 is the no-Coulomb limit used by the diagonalization oracle
            raise ValueError("gamma_C must lie in [0, 1]")
        if self.soft_floor_factor <= 0:
            raise ValueError("soft_floor_factor must be positive")

    @classmethod
    def from_confinement(cls, hbar_omega0_mev, eta, m_star_ratio=0.07,
                         epsilon_r=12.5, gamma_c=0.9, soft_floor_factor=1e-3):
        """Build from the averaged level spacing (meV) and anisotropy."""
        hwx, hwy = solve_dot_frequencies(hbar_omega0_mev, eta)
        return cls(m_star_ratio, hwx / HBAR_MEV_FS, hwy / HBAR_MEV_FS,
                   epsilon_r, gamma_c, soft_floor_factor)

    @property
    def m_star(self) -> float:
        return self.m_star_ratio * ELECTRON_MASS_MEV_FS2_NM2

    @property
    def omega0(self) -> float:
        return math.sqrt(0.5 * (self.omega_x**2 + self.omega_y**2))

    @property
    def eta(self) -> float:
        return self.omega_y / self.omega_x

    @property
    def hbar_omega0(self) -> float:
        return HBAR_MEV_FS * self.omega0

    @property
    def l_0(self) -> float:
        return math.sqrt(HBAR_MEV_FS / (self.m_star * self.omega0))

    @property
    def coulomb_pref(self) -> float:
        """gamma_C e^2/(4 pi eps_r eps_0), in meV nm."""
        return self.gamma_c * COULOMB_MEV_NM / self.epsilon_r

    @property
    def soft_a(self) -> float:
        return self.soft_floor_factor * self.l_0

    @property
    def wigner_parameter(self) -> float:
        return self.coulomb_pref / self.l_0 / self.hbar_omega0

    def coulomb(self, r: float) -> float:
        """Softened pair repulsion V_C(sqrt(r^2 + a^2))."""
        return self.coulomb_pref / math.sqrt(r * r + self.soft_a**2)


@dataclass(frozen=True)
class FreeParticles:
    """No interaction and no external field."""


@dataclass(frozen=True)
class IsotropicHarmonic:
    """Independent isotropic wells: V = m w^2 (|r1|^2 + |r2|^2) / 2."""

    mass: float = 1.0
    omega: float = 1.0

    def __post_init__(self):
        if self.mass <= 0 or self.omega <= 0:
            raise ValueError("mass and omega must be positive")


@dataclass(frozen=True)
class QuantumDot:
    """Anisotropic 2D confinement plus softened Coulomb repulsion."""

    dot: DotParams


PotentialSpec = FreeParticles | IsotropicHarmonic | QuantumDot


def _require_dim(pot, r1, r2):
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    if r1.shape != r2.shape:
        raise ValueError(f"position shapes differ: {r1.shape} vs {r2.shape}")
    if isinstance(pot, QuantumDot) and r1.shape != (2,):
        raise ValueError("the quantum dot is two-dimensional")
    return r1, r2


def evaluate(pot: PotentialSpec, r1, r2) -> float:
    """Pair potential V(r1, r2); symmetric under particle exchange."""
    r1, r2 = _require_dim(pot, r1, r2)
    if isinstance(pot, FreeParticles):
        return 0.0
    if isinstance(pot, IsotropicHarmonic):
        c = 0.5 * pot.mass * pot.omega**2
        return c * float(np.dot(r1, r1) + np.dot(r2, r2))
    if isinstance(pot, QuantumDot):
        d = pot.dot
        cx = 0.5 * d.m_star * d.omega_x**2
        cy = 0.5 * d.m_star * d.omega_y**2
        conf = cx * (r1[0] ** 2 + r2[0] ** 2) + cy * (r1[1] ** 2 + r2[1] ** 2)
        dr = r1 - r2
        return conf + d.coulomb(math.sqrt(float(np.dot(dr, dr))))
    raise TypeError(f"unknown potential {pot!r}")


def gradient(pot: PotentialSpec, r1, r2):
    """(dV/dr1, dV/dr2), analytic."""
    r1, r2 = _require_dim(pot, r1, r2)
    if isinstance(pot, FreeParticles):
        return np.zeros_like(r1), np.zeros_like(r2)
    if isinstance(pot, IsotropicHarmonic):
        c = pot.mass * pot.omega**2
        return c * r1, c * r2
    if isinstance(pot, QuantumDot):
        d = pot.dot
        conf = d.m_star * np.array([d.omega_x**2, d.omega_y**2])
        g1 = conf * r1
        g2 = conf * r2
        dr = r1 - r2
        # d/dr1 of pref/sqrt(|dr|^2 + a^2) = -pref * dr / (...)^{3/2}
        denom = (float(np.dot(dr, dr)) + d.soft_a**2) ** 1.5
        gc = -d.coulomb_pref * dr / denom
        return g1 + gc, g2 - gc
    raise TypeError(f"unknown potential {pot!r}")
