import math

import numpy as np
import pytest
from scipy.integrate import quad

from expimd.errors import ConvergenceError
from expimd.model import SymmetryChannel
from expimd.oracle import (SpectrumTable, dot_exact_diagonalize,
                           dot_thermal_energy, harmonic_mean_pair_distance,
                           harmonic_pair_distribution, harmonic_partition)
from expimd.potentials import HBAR_MEV_FS, DotParams

B = SymmetryChannel.BOSON
F = SymmetryChannel.FERMION
D = SymmetryChannel.DISTINGUISHABLE


class TestHarmonicPartition:
    def test_energies_match_numerical_log_derivative(self):
        h = 1e-6
        for beta, nd in [(3.0, 3), (1.0, 1), (0.25, 2), (7.0, 3)]:
            ref = harmonic_partition(beta, 1.0, nd)
            for attr, channel_log in [
                ("e_boson", "log_z_boson"),
                ("e_fermion", "log_z_fermion"),
            ]:
                lz = lambda b: getattr(harmonic_partition(b, 1.0, nd), channel_log)
                fd = -(lz(beta + h) - lz(beta - h)) / (2 * h)
                assert getattr(ref, attr) == pytest.approx(fd, rel=1e-8)
            lz1 = lambda b: 2.0 * harmonic_partition(b, 1.0, nd).log_z1
            fd = -(lz1(beta + h) - lz1(beta - h)) / (2 * h)
            assert ref.e_distinguishable == pytest.approx(fd, rel=1e-8)

    def test_ground_state_limits_3d(self):
        ref = harmonic_partition(200.0, 1.0, 3)
        assert ref.e_boson == pytest.approx(3.0, rel=1e-12)
        assert ref.e_fermion == pytest.approx(4.0, rel=1e-10)

    def test_classical_limit(self):
        beta = 1e-4
        for nd in (1, 2, 3):
            ref = harmonic_partition(beta, 1.0, nd)
            assert ref.e_distinguishable == pytest.approx(2 * nd / beta, rel=1e-4)

    def test_exchange_ratio_closed_form(self):
        ref1 = harmonic_partition(3.0, 1.0, 1)
        expected = (2 * math.sinh(1.5)) ** 2 / (2 * math.sinh(3.0))
        assert ref1.exchange_ratio == pytest.approx(expected, rel=1e-12)
        assert ref1.exchange_ratio == pytest.approx(0.9052, abs=2e-4)
        ref3 = harmonic_partition(3.0, 1.0, 3)
        assert ref3.exchange_ratio == pytest.approx(expected**3, rel=1e-12)

    def test_partition_functions(self):
        ref = harmonic_partition(2.0, 1.0, 2)
        z1 = (2 * math.sinh(1.0)) ** -2
        z12 = (2 * math.sinh(2.0)) ** -2
        assert ref.z1 == pytest.approx(z1, rel=1e-12)
        assert ref.z1_2beta == pytest.approx(z12, rel=1e-12)
        assert ref.z_boson == pytest.approx((z1**2 + z12) / 2, rel=1e-12)
        assert ref.z_fermion == pytest.approx((z1**2 - z12) / 2, rel=1e-12)

    def test_low_t_free_energy_route_residual(self):
        # the free-energy approximation E_F ~ E_B - (1/beta) ln(Z_F/Z_B)
        # carries a documented finite-temperature residual
        ref = harmonic_partition(3.0, 1.0, 3)
        residual = ref.e_fermion - ref.e_fermion_low_t_approx
        assert residual == pytest.approx(0.3509, abs=2e-4)
        # and the residual vanishes at low temperature
        cold = harmonic_partition(30.0, 1.0, 3)
        assert abs(cold.e_fermion - cold.e_fermion_low_t_approx) < 1e-10


class TestHarmonicPairDistribution:
    def test_fermion_node_at_origin(self):
        g = harmonic_pair_distribution(3.0, 1.0, 1, F, np.array([0.0]))
        assert g[0] == 0.0

    def test_boson_enhancement_at_contact(self):
        r = np.array([1e-3])
        gb = harmonic_pair_distribution(3.0, 1.0, 3, B, r)
        gd = harmonic_pair_distribution(3.0, 1.0, 3, D, r)
        assert gb[0] > gd[0]

    def test_classical_limit_channels_coincide(self):
        r = np.linspace(0, 5, 50)
        beta = 1e-3
        gb = harmonic_pair_distribution(beta, 1.0, 3, B, r)
        gd = harmonic_pair_distribution(beta, 1.0, 3, D, r)
        assert np.allclose(gb, gd, rtol=1e-2)

    @pytest.mark.parametrize("channel", [B, F, D])
    @pytest.mark.parametrize("nd", [1, 2, 3])
    def test_unit_integral(self, channel, nd):
        f = lambda r: harmonic_pair_distribution(3.0, 1.0, nd, channel,
                                                 np.array([r]))[0]
        val, _ = quad(f, 0.0, 20.0, limit=200)
        assert val == pytest.approx(1.0, rel=1e-8)

    @pytest.mark.parametrize("channel", [B, F, D])
    def test_mean_distance_matches_quadrature(self, channel):
        mean = harmonic_mean_pair_distance(3.0, 1.0, 3, channel)
        f = lambda r: r * harmonic_pair_distribution(3.0, 1.0, 3, channel,
                                                     np.array([r]))[0]
        val, _ = quad(f, 0.0, 20.0, limit=200)
        assert mean == pytest.approx(val, rel=1e-8)

    def test_matches_brute_force_thermal_kernel_1d(self):
        # independent construction: build the (anti)symmetrized two-particle
        # density from the 1D Gaussian thermal kernel on a grid and
        # marginalize the separation |x1 - x2|
        beta, hw = 3.0, 1.0
        u = beta * hw
        n = 801
        x = np.linspace(-6, 6, n)
        dx = x[1] - x[0]
        sinh, cosh = math.sinh(u), math.cosh(u)
        xx, yy = np.meshgrid(x, x, indexing="ij")
        kernel = np.exp(-((xx**2 + yy**2) * cosh - 2 * xx * yy) / (2 * sinh))
        diag = np.diag(kernel)
        for channel in (B, F):
            rho2 = np.outer(diag, diag) + channel.sign * kernel**2
            r_grid = np.linspace(0.05, 4.0, 15)
            g_ref = []
            sep = np.abs(xx - yy)
            for r in r_grid:
                mask = np.abs(sep - r) < dx / 2
                g_ref.append(rho2[mask].sum())
            g_ref = np.array(g_ref)
            g_ref /= np.trapezoid(g_ref, r_grid)
            g = harmonic_pair_distribution(beta, hw, 1, channel, r_grid)
            g /= np.trapezoid(g, r_grid)
            assert np.allclose(g, g_ref, rtol=2e-2, atol=2e-3)


def small_dot(eta=1.38, gamma_c=0.9):
    return DotParams.from_confinement(5.1, eta, gamma_c=gamma_c)


class TestDotDiagonalization:
    def test_no_coulomb_matches_oscillator_levels(self):
        dot = small_dot(gamma_c=0.0)
        table = dot_exact_diagonalize(dot, basis_cutoff=16)
        hwx, hwy = table.hbar_omega_x, table.hbar_omega_y
        exact = sorted(
            hwx * (nx + 0.5) + hwy * (ny + 0.5)
            for nx in range(8) for ny in range(8)
        )[:12]
        assert np.allclose(table.energies[:12], exact, atol=2e-3)

    def test_parity_labels_match_oscillator_quantum_numbers(self):
        dot = small_dot(gamma_c=0.0)
        table = dot_exact_diagonalize(dot, basis_cutoff=16)
        hwx, hwy = table.hbar_omega_x, table.hbar_omega_y
        # ground state is even, first excitation along the soft axis is odd
        assert table.parities[0] == 1
        assert table.energies[1] == pytest.approx(
            table.energies[0] + min(hwx, hwy), abs=2e-3)
        assert table.parities[1] == -1

    @pytest.fixture(scope="class")
    def paper_spectrum(self):
        return dot_exact_diagonalize(small_dot(), basis_cutoff=16)

    def test_even_ground_below_odd_ground(self, paper_spectrum):
        even = paper_spectrum.sector(+1)
        odd = paper_spectrum.sector(-1)
        assert even[0] < odd[0]

    def test_convergence_history_recorded(self, paper_spectrum):
        assert paper_spectrum.converged
        assert paper_spectrum.convergence_history
        final = paper_spectrum.convergence_history[-1]
        assert max(final[2], final[3]) < 1e-3

    def test_convergence_failure_raises(self):
        with pytest.raises(ConvergenceError):
            dot_exact_diagonalize(small_dot(), basis_cutoff=2, tol_mev=1e-14,
                                  max_cutoff=4)

    def test_save_load_round_trip(self, paper_spectrum, tmp_path):
        path = tmp_path / "spectrum.txt"
        paper_spectrum.save(path)
        loaded = SpectrumTable.load(path)
        assert np.array_equal(loaded.energies, paper_spectrum.energies)
        assert np.array_equal(loaded.parities, paper_spectrum.parities)
        assert loaded.hbar_omega_x == paper_spectrum.hbar_omega_x

    def test_sector_matrices_symmetric(self):
        from expimd.oracle import _sector_hamiltonians

        sectors = _sector_hamiltonians(small_dot(), 12)
        for h_mat in sectors.values():
            assert np.max(np.abs(h_mat - h_mat.T)) <= 1e-12 * (
                1.0 + np.max(np.abs(h_mat)))

    def test_mesh_insensitivity(self):
        # doubling the radial mesh density must not move the low spectrum
        from expimd.oracle import _diagonalize_once

        dot = small_dot()
        e1, _ = _diagonalize_once(dot, 16)
        e2, _ = _diagonalize_once(dot, 16, mesh_scale=2.0)
        assert np.allclose(e1[:10], e2[:10], atol=1e-3)


class TestDotThermalEnergy:
    def test_zero_temperature_limits(self):
        dot = small_dot(gamma_c=0.0)
        table = dot_exact_diagonalize(dot, basis_cutoff=12, tol_mev=1e-6)
        beta = 1e3
        hwx, hwy = table.hbar_omega_x, table.hbar_omega_y
        zero_point = 0.5 * (hwx + hwy)
        singlet = dot_thermal_energy(table, beta, "singlet")
        assert singlet == pytest.approx(2 * zero_point, rel=1e-10)
        triplet = dot_thermal_energy(table, beta, "triplet")
        assert triplet == pytest.approx(2 * zero_point + min(hwx, hwy), rel=1e-10)

    def test_matches_brute_force_product_sum_no_coulomb(self):
        # independent oracle: symmetrize the full two-particle product
        # spectrum explicitly and sum the Boltzmann series
        dot = small_dot(eta=1.38, gamma_c=0.0)
        table = dot_exact_diagonalize(dot, basis_cutoff=24, tol_mev=1e-6)
        hwx = HBAR_MEV_FS * dot.omega_x
        hwy = HBAR_MEV_FS * dot.omega_y
        nmax = 24
        levels = np.array([hwx * (nx + 0.5) + hwy * (ny + 0.5)
                           for nx in range(nmax) for ny in range(nmax)])
        for temperature_k in (5.0, 11.6, 30.0):
            beta = 1.0 / (0.08617333 * temperature_k)
            w = np.exp(-beta * (levels - levels.min()))
            boltz = np.outer(w, w)
            e_ij = levels[:, None] + levels[None, :]
            upper = np.triu(np.ones_like(boltz))           # pairs i <= j
            strict = np.triu(np.ones_like(boltz), k=1)     # pairs i < j
            z_sym = np.sum(boltz * upper)
            e_sym = np.sum(e_ij * boltz * upper)
            z_anti = np.sum(boltz * strict)
            e_anti = np.sum(e_ij * boltz * strict)
            singlet_ref = e_sym / z_sym
            triplet_ref = e_anti / z_anti
            assert dot_thermal_energy(table, beta, "singlet") == pytest.approx(
                singlet_ref, abs=2e-6)
            assert dot_thermal_energy(table, beta, "triplet") == pytest.approx(
                triplet_ref, abs=2e-6)

    def test_channel_aliases(self):
        dot = small_dot(gamma_c=0.0)
        table = dot_exact_diagonalize(dot, basis_cutoff=10, tol_mev=1e-5)
        assert dot_thermal_energy(table, 1.0, B) == dot_thermal_energy(
            table, 1.0, "singlet")
        assert dot_thermal_energy(table, 1.0, F) == dot_thermal_energy(
            table, 1.0, "triplet")
        with pytest.raises(ValueError):
            dot_thermal_energy(table, 1.0, "quintet")
