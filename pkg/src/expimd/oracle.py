"""Independent ground truth for tests and validation.

Two references are provided and neither touches the sampler:

* closed-form thermodynamics and pair distributions of two non-interacting
  particles in an isotropic harmonic well, in all three symmetry channels;
* exact diagonalization of the two-electron quantum dot, exploiting the
  separation into a center-of-mass oscillator and a relative-coordinate
  Hamiltonian whose parity sectors map onto singlet (even) and triplet (odd)
  states.

The Coulomb interaction in the diagonalization uses the same softened form
as the sampler so the two routes are compared on identical Hamiltonians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.special import gammaln

from .errors import ConvergenceError
from .model import SymmetryChannel
from .potentials import HBAR_MEV_FS, DotParams

__all__ = [
    "HarmonicReference",
    "harmonic_partition",
    "harmonic_pair_distribution",
    "harmonic_mean_pair_distance",
    "SpectrumTable",
    "dot_exact_diagonalize",
    "dot_thermal_energy",
]


def _cothm1(x):
    """coth(x) - 1 = 2/(e^{2x} - 1), stable for large x."""
    return 2.0 / math.expm1(2.0 * x)


def _log_z1(u, n_d):
    """log Z_1 for one particle in an n_d-dim well; u = beta hbar omega."""
    # 2 sinh(u/2) = e^{u/2}(1 - e^{-u})
    return -n_d * (0.5 * u + math.log1p(-math.exp(-u)))


@dataclass(frozen=True)
class HarmonicReference:
    """Exact two-particle harmonic-well thermodynamics.

    All energies measure from the well bottom (zero-point included).
    exchange_ratio is Z_O/Z_oo = Z_1(2 beta)/Z_1(beta)^2.
    """

    beta: float
    hbar_omega: float
    n_d: int
    log_z1: float
    log_z1_2beta: float
    log_z_boson: float
    log_z_fermion: float
    exchange_ratio: float
    e_distinguishable: float
    e_boson: float
    e_fermion: float

    @property
    def z1(self):
        return math.exp(self.log_z1)

    @property
    def z1_2beta(self):
        return math.exp(self.log_z1_2beta)

    @property
    def z_boson(self):
        return math.exp(self.log_z_boson)

    @property
    def z_fermion(self):
        return math.exp(self.log_z_fermion)

    @property
    def e_fermion_low_t_approx(self):
        """E_B - (1/beta) ln(Z_F/Z_B), the free-energy-difference route."""
        return self.e_boson - (self.log_z_fermion - self.log_z_boson) / self.beta


def harmonic_partition(beta, hbar_omega, n_d) -> HarmonicReference:
    """Closed forms for Z_1(beta), Z_1(2 beta), Z_B/F and the energies.

    Z_1(beta) = (2 sinh(beta hbar omega / 2))^{-n_d};
    Z_{B/F} = (Z_1(beta)^2 +- Z_1(2 beta)) / 2; energies are the analytic
    -d ln Z / d beta. Everything is computed in log/expm1 form so the
    deep-quantum regime (beta hbar omega >> 1) stays accurate.
    """
    u = beta * hbar_omega
    if u <= 0:
        raise ValueError("beta * hbar_omega must be positive")
    lz1 = _log_z1(u, n_d)
    lz12 = _log_z1(2.0 * u, n_d)
    # rho = Z_1(2b)/Z_1(b)^2 = tanh^{n_d}(u/2) in (0, 1)
    log_rho = lz12 - 2.0 * lz1
    rho = math.exp(log_rho)
    e_dist = n_d * hbar_omega * (1.0 + _cothm1(0.5 * u))  # 2 * n_d*(hw/2)coth
    e_conn = n_d * hbar_omega * (1.0 + _cothm1(u))
    # 1 - rho computed without cancellation: rho = (1 - d1)^{n_d} with
    # d1 = 1 - tanh(u/2) = 2 e^{-u}/(1+e^{-u})
    d1 = 2.0 * math.exp(-u) / (1.0 + math.exp(-u))
    one_minus_rho = -math.expm1(n_d * math.log1p(-d1))
    e_boson = (e_dist + rho * e_conn) / (1.0 + rho)
    # E_F = [ (E_dist - E_conn) + (1-rho) E_conn ] / (1-rho)
    delta_e = n_d * hbar_omega * (_cothm1(0.5 * u) - _cothm1(u))
    e_fermion = delta_e / one_minus_rho + e_conn
    log_zb = 2.0 * lz1 + math.log1p(rho) - math.log(2.0)
    log_zf = 2.0 * lz1 + math.log(one_minus_rho) - math.log(2.0)
    return HarmonicReference(
        beta=beta,
        hbar_omega=hbar_omega,
        n_d=n_d,
        log_z1=lz1,
        log_z1_2beta=lz12,
        log_z_boson=log_zb,
        log_z_fermion=log_zf,
        exchange_ratio=rho,
        e_distinguishable=e_dist,
        e_boson=e_boson,
        e_fermion=e_fermion,
    )


def _gaussian_radial_lognorm(a, n_d):
    """log of int_0^inf r^{n_d-1} e^{-a r^2} dr."""
    return gammaln(0.5 * n_d) - math.log(2.0) - 0.5 * n_d * math.log(a)


def _pair_gaussian_coefficients(beta, hbar_omega, n_d, mass=1.0, hbar=1.0):
    """(a_direct, a_exchange) in p_rel(r) ~ e^{-a_d r^2} +- e^{-a_x r^2}.

    Obtained from the thermal single-particle Gaussian kernel: integrating
    the two-particle (anti)symmetrized density over the center of mass
    leaves a relative-coordinate density that is a sum of two isotropic
    Gaussians with equal prefactors.
    """
    u = beta * hbar_omega
    alpha = mass * (hbar_omega / hbar) / hbar  # m omega / hbar
    a_direct = 0.5 * alpha * math.tanh(0.5 * u)
    a_exchange = 0.5 * alpha / math.tanh(0.5 * u)
    return a_direct, a_exchange


def harmonic_pair_distribution(beta, hbar_omega, n_d, channel, r,
                               mass=1.0, hbar=1.0):
    """Exact pair-distance distribution g(r), normalized to unit integral.

    g(r) dr is the probability of finding the two particles at separation
    in [r, r+dr]. The fermion curve vanishes at r = 0 (exchange hole); the
    boson curve is enhanced there.
    """
    r = np.asarray(r, dtype=np.float64)
    a_d, a_x = _pair_gaussian_coefficients(beta, hbar_omega, n_d, mass, hbar)
    sg = channel.sign
    direct = np.exp(-a_d * r * r)
    exch = np.exp(-a_x * r * r) if sg else 0.0
    norm = math.exp(_gaussian_radial_lognorm(a_d, n_d))
    if sg:
        norm += sg * math.exp(_gaussian_radial_lognorm(a_x, n_d))
    with np.errstate(divide="ignore"):
        shape = np.where(r > 0, r ** (n_d - 1), 0.0 if n_d > 1 else 1.0)
    return shape * (direct + sg * exch) / norm


def harmonic_mean_pair_distance(beta, hbar_omega, n_d, channel,
                                mass=1.0, hbar=1.0):
    """Exact <r> under the channel's pair distribution."""
    a_d, a_x = _pair_gaussian_coefficients(beta, hbar_omega, n_d, mass, hbar)
    sg = channel.sign

    def moment(a, power):
        return math.exp(gammaln(0.5 * (n_d + power)) - math.log(2.0)
                        - 0.5 * (n_d + power) * math.log(a))

    num = moment(a_d, 1) + (sg * moment(a_x, 1) if sg else 0.0)
    den = moment(a_d, 0) + (sg * moment(a_x, 0) if sg else 0.0)
    return num / den


# --- quantum-dot exact diagonalization --------------------------------------


@dataclass
class SpectrumTable:
    """Relative-coordinate eigenvalues with parity labels plus CM data.

    energies are in meV and ascending; parity +1 marks even states (singlet
    sector), -1 odd states (triplet sector). hbar_omega_x/y describe the
    center-of-mass oscillator, which is analytic.
    """

    energies: np.ndarray
    parities: np.ndarray
    hbar_omega_x: float
    hbar_omega_y: float
    basis_cutoff: int
    converged: bool
    convergence_history: list = field(default_factory=list)

    def sector(self, parity):
        return self.energies[self.parities == parity]

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("# expimd spectrum v1\n")
            fh.write(f"# hbar_omega_x_meV={self.hbar_omega_x!r} "
                     f"hbar_omega_y_meV={self.hbar_omega_y!r}\n")
            fh.write(f"# basis_cutoff={self.basis_cutoff} converged={self.converged}\n")
            fh.write(f"# convergence_history={self.convergence_history!r}\n")
            fh.write("# energy_meV parity\n")
            for e, p in zip(self.energies, self.parities):
                fh.write(f"{e!r} {int(p):+d}\n")

    @classmethod
    def load(cls, path):
        meta = {}
        energies, parities = [], []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    for tok in line[1:].split():
                        if "=" in tok:
                            key, val = tok.split("=", 1)
                            meta[key] = val
                    continue
                if line:
                    e, p = line.split()
                    energies.append(float(e))
                    parities.append(int(p))
        return cls(
            energies=np.asarray(energies),
            parities=np.asarray(parities, dtype=int),
            hbar_omega_x=float(meta["hbar_omega_x_meV"]),
            hbar_omega_y=float(meta["hbar_omega_y_meV"]),
            basis_cutoff=int(meta["basis_cutoff"]),
            converged=meta["converged"] == "True",
        )


def _radial_mesh(soft_a, r_max, h_out, grade=16.0):
    """Graded radial nodes: spacing min(h_out, max(a/6, r/grade)).

    Resolves the softened-Coulomb bump at the origin with a handful of
    points while staying coarse in the harmonic tail.
    """
    h0 = min(soft_a / 6.0, h_out)
    nodes = [0.5 * h0]
    while nodes[-1] < r_max:
        h = min(h_out, max(soft_a / 6.0, nodes[-1] / grade))
        nodes.append(nodes[-1] + h)
    return np.asarray(nodes)


def _radial_channel(m, r, mu, omega0_sq, pref, soft_a_sq, n_keep):
    """Eigenpairs of one angular-momentum channel of the isotropic part.

    Finite-volume discretization of
        -hb^2/2mu [(1/r) d/dr (r d/dr) - m^2/r^2] R + U(r) R = E R
    with measure r dr; the r-weighted flux form is regular at the origin
    for every m, so no boundary trickery is needed. Returns eigenvalues,
    radial functions (normalized as sum R^2 w = 1) and the cell weights w.
    """
    n = len(r)
    faces = np.empty(n + 1)
    faces[0] = 0.0
    faces[1:-1] = 0.5 * (r[:-1] + r[1:])
    faces[-1] = r[-1] + 0.5 * (r[-1] - r[-2])
    w = r * (faces[1:] - faces[:-1])
    kin = HBAR_MEV_FS**2 / (2.0 * mu)
    potential = 0.5 * mu * omega0_sq * r**2
    if pref:
        potential = potential + pref / np.sqrt(r**2 + soft_a_sq)
    h = np.diff(r)
    flux = kin * faces[1:-1] / h
    diag = np.zeros(n)
    diag[:-1] += flux
    diag[1:] += flux
    diag[-1] += kin * faces[-1] / (r[-1] - r[-2])  # R = 0 beyond r_max
    diag = diag / w + potential + kin * m * m / r**2
    sqw = np.sqrt(w)
    off = -flux / (sqw[:-1] * sqw[1:])
    evals, evecs = eigh_tridiagonal(diag, off, select="i",
                                    select_range=(0, min(n_keep, n) - 1))
    return evals, evecs / sqw[:, None], w


def _angular_cos2_matrix(ms, kind, n_theta=4096):
    """<b_m|cos 2theta|b_m'> in the normalized cos/sin angular basis."""
    theta = 2.0 * math.pi * np.arange(n_theta) / n_theta
    basis = []
    for m in ms:
        if kind == "cos":
            basis.append(np.cos(m * theta)
                         / math.sqrt(math.pi * (2.0 if m == 0 else 1.0)))
        else:
            basis.append(np.sin(m * theta) / math.sqrt(math.pi))
    b = np.asarray(basis)
    return (b * np.cos(2.0 * theta)) @ b.T * (2.0 * math.pi / n_theta)


def _sector_hamiltonians(dot: DotParams, cutoff, mesh_scale=1.0,
                         e_window=170.0):
    """Coupled-channel Hamiltonians of the relative problem.

    The confinement splits into an isotropic part (solved exactly per
    angular momentum m on the radial mesh) and the anisotropy
    -(mu delta/2) r^2 cos 2theta, which couples m to m +- 2 within four
    symmetry sectors (cos/sin x even/odd m). Exchange parity is the parity
    of m: even sectors hold singlet states, odd sectors triplet states.
    basis_cutoff sets the number of angular channels and the mesh density.
    """
    mu = 0.5 * dot.m_star
    omega0_sq = dot.omega0**2
    delta = 0.5 * (dot.omega_y**2 - dot.omega_x**2)
    hw_min = HBAR_MEV_FS * min(dot.omega_x, dot.omega_y)
    e_top = e_window + 4.0 * dot.hbar_omega0
    r_max = 1.15 * math.sqrt(2.0 * e_top / (mu * min(dot.omega_x, dot.omega_y) ** 2))
    h_out = 0.383 * dot.l_0 / (cutoff * mesh_scale)
    r = _radial_mesh(dot.soft_a, r_max, h_out)
    n_keep = max(3 * cutoff, int(e_top / hw_min) + 4)
    channels = {}
    ground = None
    for m in range(cutoff + 1):
        evals, radial, w = _radial_channel(m, r, mu, omega0_sq,
                                           dot.coulomb_pref, dot.soft_a**2,
                                           n_keep)
        if ground is None:
            ground = evals[0]
        keep = min(int(np.count_nonzero(evals < ground + e_window)) + 1,
                   len(evals))
        channels[m] = (evals[:keep], radial[:, :keep])

    rw = r * r * w
    coef = -0.5 * mu * delta

    def assemble(ms, kind):
        ang = _angular_cos2_matrix(ms, kind)
        sizes = [len(channels[m][0]) for m in ms]
        offs = np.concatenate([[0], np.cumsum(sizes)])
        h_mat = np.zeros((offs[-1], offs[-1]))
        for i, m in enumerate(ms):
            h_mat[offs[i]:offs[i + 1], offs[i]:offs[i + 1]] = np.diag(
                channels[m][0])
        for i, mi in enumerate(ms):
            for j in range(i, len(ms)):
                if abs(ang[i, j]) < 1e-13:
                    continue
                ri, rj = channels[mi][1], channels[ms[j]][1]
                block = coef * ang[i, j] * ((ri * rw[:, None]).T @ rj)
                if j == i:
                    h_mat[offs[i]:offs[i + 1], offs[i]:offs[i + 1]] += block
                else:
                    h_mat[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = block
                    h_mat[offs[j]:offs[j + 1], offs[i]:offs[i + 1]] = block.T
        return h_mat

    sectors = {}
    for parity in (+1, -1):
        start = 0 if parity == 1 else 1
        cos_ms = list(range(start, cutoff + 1, 2))
        sin_ms = [m for m in cos_ms if m > 0]
        sectors[(parity, "cos")] = assemble(cos_ms, "cos")
        if sin_ms:
            sectors[(parity, "sin")] = assemble(sin_ms, "sin")
    return sectors


def _diagonalize_once(dot, cutoff, mesh_scale=1.0, e_window=170.0):
    sectors = _sector_hamiltonians(dot, cutoff, mesh_scale, e_window)
    energies, parities = [], []
    for (parity, _), h_mat in sectors.items():
        vals = eigh(h_mat, eigvals_only=True)
        energies.append(vals)
        parities.append(np.full(len(vals), parity))
    energies = np.concatenate(energies)
    parities = np.concatenate(parities)
    order = np.argsort(energies)
    energies, parities = energies[order], parities[order]
    keep = energies < energies[0] + e_window
    return energies[keep], parities[keep]


def dot_exact_diagonalize(dot: DotParams, basis_cutoff=16, tol_mev=1e-3,
                          max_cutoff=128, e_window=170.0) -> SpectrumTable:
    """Relative-coordinate spectrum, refined until ground states converge.

    Doubles the basis cutoff (angular channels and mesh density together)
    until the lowest even- and odd-parity energies move by less than
    tol_mev, then returns the finer spectrum. Raises ConvergenceError if
    max_cutoff is reached first. The retained window of levels above the
    ground state is fixed so thermal sums are cutoff-independent.
    """
    cutoff = basis_cutoff
    energies, parities = _diagonalize_once(dot, cutoff, e_window=e_window)
    history = []
    converged = False
    while True:
        next_cutoff = min(2 * cutoff, max_cutoff)
        if next_cutoff == cutoff:
            break
        e2, p2 = _diagonalize_once(dot, next_cutoff, e_window=e_window)
        shift_even = abs(e2[p2 == 1][0] - energies[parities == 1][0])
        shift_odd = abs(e2[p2 == -1][0] - energies[parities == -1][0])
        history.append((cutoff, next_cutoff, shift_even, shift_odd))
        energies, parities, cutoff = e2, p2, next_cutoff
        if max(shift_even, shift_odd) < tol_mev:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"dot spectrum not converged at cutoff {cutoff}: "
            f"last shifts {history[-1][2]:.2e}/{history[-1][3]:.2e} meV",
            history=history,
        )
    return SpectrumTable(
        energies=energies,
        parities=parities,
        hbar_omega_x=HBAR_MEV_FS * dot.omega_x,
        hbar_omega_y=HBAR_MEV_FS * dot.omega_y,
        basis_cutoff=cutoff,
        converged=converged,
        convergence_history=history,
    )


def _oscillator_thermal_energy(beta, hbar_omega):
    """(hw/2) coth(beta hw / 2) for one mode."""
    return 0.5 * hbar_omega * (1.0 + _cothm1(0.5 * beta * hbar_omega))


def dot_thermal_energy(spectrum: SpectrumTable, beta, channel) -> float:
    """Total thermal energy of the singlet or triplet state, in meV.

    E(beta) = E_CM(beta) + sum'_k E_k e^{-beta E_k} / sum'_k e^{-beta E_k},
    where the primed sum runs over even-parity relative states for the
    singlet and odd-parity states for the triplet, and the center of mass
    is an analytic 2D oscillator (mass drops out of its energies).
    """
    if channel in ("singlet", SymmetryChannel.BOSON):
        parity = +1
    elif channel in ("triplet", SymmetryChannel.FERMION):
        parity = -1
    else:
        raise ValueError(f"channel must be singlet or triplet, got {channel!r}")
    e_cm = (_oscillator_thermal_energy(beta, spectrum.hbar_omega_x)
            + _oscillator_thermal_energy(beta, spectrum.hbar_omega_y))
    levels = spectrum.sector(parity)
    if len(levels) == 0:
        raise ValueError("spectrum has no states of the requested parity")
    x = -beta * (levels - levels[0])
    w = np.exp(x)
    e_rel = float(np.sum(levels * w) / np.sum(w))
    return e_cm + e_rel
