import math

import numpy as np
import pytest

from expimd.potentials import (COULOMB_MEV_NM, HBAR_MEV_FS, KB_MEV_PER_K,
                               DotParams, FreeParticles, IsotropicHarmonic,
                               QuantumDot, evaluate, gradient,
                               solve_dot_frequencies)


def paper_dot(**kw):
    return DotParams.from_confinement(5.1, 1.38, **kw)


class TestEvaluate:
    def test_free(self):
        assert evaluate(FreeParticles(), [1.0, 2.0], [0.5, -1.0]) == 0.0

    def test_isotropic_harmonic(self):
        pot = IsotropicHarmonic(1.0, 1.0)
        assert evaluate(pot, [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]) == pytest.approx(0.5)

    def test_exchange_symmetry(self):
        rng = np.random.default_rng(0)
        dot = QuantumDot(paper_dot())
        for _ in range(20):
            r1 = 20.0 * rng.standard_normal(2)
            r2 = 20.0 * rng.standard_normal(2)
            assert evaluate(dot, r1, r2) == pytest.approx(evaluate(dot, r2, r1),
                                                          rel=1e-14)

    def test_dot_requires_2d(self):
        with pytest.raises(ValueError):
            evaluate(QuantumDot(paper_dot()), [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])

    def test_softening_keeps_coulomb_finite(self):
        d = paper_dot()
        v = evaluate(QuantumDot(d), [0.0, 0.0], [0.0, 0.0])
        assert math.isfinite(v)
        assert v == pytest.approx(d.coulomb_pref / d.soft_a)

    def test_confinement_dominates_at_large_radius(self):
        d = paper_dot()
        far = evaluate(QuantumDot(d), [1e3 * d.l_0, 0.0], [0.0, 1e3 * d.l_0])
        near = evaluate(QuantumDot(d), [d.l_0, 0.0], [0.0, d.l_0])
        kt = KB_MEV_PER_K * 11.6
        assert far - near > 1e6 * kt


class TestCoulombForm:
    def test_v_times_r_constant_above_floor(self):
        d = paper_dot()
        rs = np.array([0.5, 1.0, 3.0, 10.0]) * d.l_0
        vals = np.array([d.coulomb(r) * r for r in rs])
        # pure 1/r means V*r constant; the floor perturbs at relative a^2/2r^2
        assert np.allclose(vals, d.coulomb_pref, rtol=1e-5)

    def test_floor_scale(self):
        d = paper_dot()
        assert d.soft_a == pytest.approx(1e-3 * d.l_0)


class TestGradient:
    def test_free(self):
        g1, g2 = gradient(FreeParticles(), [1.0], [2.0])
        assert np.all(g1 == 0.0) and np.all(g2 == 0.0)

    def test_harmonic_unit(self):
        g1, _ = gradient(IsotropicHarmonic(1.0, 1.0), [1.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        assert np.allclose(g1, [1.0, 0.0, 0.0])

    @pytest.mark.parametrize("pot", [
        IsotropicHarmonic(1.0, 2.0),
        QuantumDot(paper_dot()),
    ])
    def test_finite_difference_agreement(self, pot):
        rng = np.random.default_rng(42)
        dim = 2 if isinstance(pot, QuantumDot) else 3
        scale = 20.0 if isinstance(pot, QuantumDot) else 1.0
        h = 1e-5 * scale
        for _ in range(200):
            r1 = scale * rng.standard_normal(dim)
            r2 = scale * rng.standard_normal(dim)
            g1, g2 = gradient(pot, r1, r2)
            for which, g in ((0, g1), (1, g2)):
                for d in range(dim):
                    rp = [r1.copy(), r2.copy()]
                    rm = [r1.copy(), r2.copy()]
                    rp[which][d] += h
                    rm[which][d] -= h
                    fd = (evaluate(pot, *rp) - evaluate(pot, *rm)) / (2 * h)
                    scale_g = abs(g[d]) + np.max(np.abs(g1)) + np.max(np.abs(g2)) + 1e-12
                    assert abs(fd - g[d]) <= 1e-6 * scale_g


class TestDotParams:
    def test_derived_quantities_consistent(self):
        d = paper_dot()
        assert d.omega0 == pytest.approx(
            math.sqrt((d.omega_x**2 + d.omega_y**2) / 2), rel=1e-12)
        assert d.eta == pytest.approx(d.omega_y / d.omega_x, rel=1e-12)
        assert d.l_0 == pytest.approx(
            math.sqrt(HBAR_MEV_FS / (d.m_star * d.omega0)), rel=1e-12)
        vc_at_l0 = d.gamma_c * COULOMB_MEV_NM / d.epsilon_r / d.l_0
        assert d.wigner_parameter == pytest.approx(vc_at_l0 / d.hbar_omega0,
                                                   rel=1e-12)

    def test_paper_parameters(self):
        # m*/m_e = 0.07, eps_r = 12.5, gamma_C = 0.9, hbar omega_0 = 5.1 meV,
        # eta = 1.38: the defining formulas give R_W = 1.391 and l_0 = 14.6 nm
        d = paper_dot()
        assert d.hbar_omega0 == pytest.approx(5.1, rel=1e-12)
        assert d.l_0 == pytest.approx(14.6097, rel=1e-4)
        assert d.wigner_parameter == pytest.approx(1.39146, rel=1e-4)

    def test_validation(self):
        with pytest.raises(ValueError):
            DotParams(0.07, -1.0, 1.0, 12.5, 0.9)
        with pytest.raises(ValueError):
            DotParams(0.07, 1.0, 1.0, 12.5, 1.5)

    def test_gamma_c_zero_allowed_for_oracle_limit(self):
        d = DotParams.from_confinement(5.1, 1.0, gamma_c=0.0)
        assert d.coulomb(1.0) == 0.0


class TestSolveDotFrequencies:
    def test_isotropic(self):
        wx, wy = solve_dot_frequencies(5.1, 1.0)
        assert wx == pytest.approx(5.1) and wy == pytest.approx(5.1)

    def test_round_trip(self):
        wx, wy = solve_dot_frequencies(5.1, 1.38)
        assert wy / wx == pytest.approx(1.38, rel=1e-12)
        assert math.sqrt((wx**2 + wy**2) / 2) == pytest.approx(5.1, rel=1e-12)

    def test_extreme_anisotropy_stays_finite(self):
        wx, wy = solve_dot_frequencies(5.1, 100.0)
        assert wx > 0 and math.isfinite(wy)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            solve_dot_frequencies(-1.0, 1.0)
