import math

import numpy as np
import pytest

from expimd.errors import NoOverlapError, SignCollapseError
from expimd.estimators import (Histogram1D, Histogram2D, WeightedAccumulator,
                               bennett_ratio, channel_log_weights,
                               density_difference,
                               fermion_energy_via_free_energy, signed_logsumexp,
                               virial_energy, weighted_average)
from expimd.model import SymmetryChannel

B = SymmetryChannel.BOSON
F = SymmetryChannel.FERMION
D = SymmetryChannel.DISTINGUISHABLE


class GaussianEnsemble:
    """Exactly solvable finite-P harmonic two-particle system.

    The distinguishable-topology action is a Gaussian form, so the oo
    ensemble can be sampled exactly and every reference quantity
    (energies, Z_O/Z_oo) follows from determinants; this validates the
    estimators independently of any molecular dynamics.
    """

    def __init__(self, P=4, nd=2, beta=2.3, m=1.0, hbar=1.0, omega=1.0):
        self.P, self.nd, self.beta = P, nd, beta
        self.m, self.hbar, self.omega = m, hbar, omega
        self.k = m * P / (2 * hbar**2 * beta**2)
        cov = np.linalg.inv(2.0 * self._quad_matrix(beta, "oo"))
        self._chol = np.linalg.cholesky(cov)

    def _ring(self, n):
        L = 2.0 * np.eye(n)
        for i in range(n):
            L[i, (i + 1) % n] -= 1.0
            L[i, (i - 1) % n] -= 1.0
        return L

    def _quad_matrix(self, beta, topo):
        P = self.P
        k = self.m * P / (2 * self.hbar**2 * beta**2)
        if topo == "oo":
            L = np.zeros((2 * P, 2 * P))
            L[:P, :P] = self._ring(P)
            L[P:, P:] = self._ring(P)
        else:
            L = self._ring(2 * P)
        diag = beta * (self.m * self.omega**2 / (2 * P)) * np.eye(2 * P)
        return beta * k * L + diag

    def _log_z(self, beta, topo):
        A = self._quad_matrix(beta, topo)
        _, logdet = np.linalg.slogdet(A)
        per_dim = 0.5 * (2 * self.P) * math.log(math.pi) - 0.5 * logdet
        log_c = self.P * self.nd * math.log(
            self.m * self.P / (2 * math.pi * beta * self.hbar**2))
        return self.nd * per_dim + log_c

    def exact_energy(self, channel, h=1e-6):
        def log_zi(beta):
            loo = self._log_z(beta, "oo")
            if channel is D:
                return loo
            lo = self._log_z(beta, "O")
            return loo + math.log1p(channel.sign * math.exp(lo - loo))

        return -(log_zi(self.beta + h) - log_zi(self.beta - h)) / (2 * h)

    def exact_ratio(self):
        return math.exp(self._log_z(self.beta, "O") - self._log_z(self.beta, "oo"))

    def sample(self, n, rng, topo="oo"):
        """Exact draws from e^{-beta V_topo}, shaped (n, 2, P, nd)."""
        if topo == "oo":
            chol = self._chol
        else:
            chol = np.linalg.cholesky(np.linalg.inv(2.0 * self._quad_matrix(self.beta, "O")))
        x = rng.standard_normal((n, self.nd, 2 * self.P)) @ chol.T
        return np.transpose(x.reshape(n, self.nd, 2, self.P), (0, 2, 3, 1))

    def columns(self, pos):
        """SampleColumns-compatible struct from raw positions."""
        P, nd, k = self.P, self.nd, self.k
        r1, r2 = pos[:, 0], pos[:, 1]

        def sq(v):
            return np.sum(v * v, axis=-1)

        s = k * (sq(r2[:, 0] - r1[:, -1]) + sq(r1[:, 0] - r2[:, -1])
                 - sq(r1[:, 0] - r1[:, -1]) - sq(r2[:, 0] - r2[:, -1]))
        pot = (self.m * self.omega**2 / 2 / P) * np.sum(pos**2, axis=(1, 2, 3))
        grad = self.m * self.omega**2 * pos
        cent = pos.mean(axis=2, keepdims=True)
        com = cent.mean(axis=1, keepdims=True)
        vir_oo = np.sum((pos - cent) * grad, axis=(1, 2, 3)) / (2 * P)
        vir_o = np.sum((pos - com) * grad, axis=(1, 2, 3)) / (2 * P)

        class Cols:
            pass

        cols = Cols()
        cols.s, cols.pot, cols.vir_oo, cols.vir_o = s, pot, vir_oo, vir_o
        return cols


@pytest.fixture(scope="module")
def ensemble():
    return GaussianEnsemble()


@pytest.fixture(scope="module")
def oo_columns(ensemble):
    rng = np.random.default_rng(11)
    return ensemble.columns(ensemble.sample(300_000, rng))


class TestSignedLogSumExp:
    def test_matches_direct_sum(self):
        rng = np.random.default_rng(0)
        vals = rng.standard_normal(100) * 3.0
        sign, log = signed_logsumexp(np.sign(vals), np.log(np.abs(vals)))
        assert sign * math.exp(log) == pytest.approx(vals.sum(), rel=1e-12)

    def test_huge_logs_do_not_overflow(self):
        sign, log = signed_logsumexp(np.array([1.0, -1.0, 1.0]),
                                     np.array([1e4, 1e4, 9.999e3]))
        assert math.isfinite(log) and log < 1e4 + 1.0

    def test_exact_cancellation(self):
        sign, log = signed_logsumexp(np.array([1.0, -1.0]), np.array([5.0, 5.0]))
        assert sign == 0.0 and log == -np.inf


class TestWeightedAccumulator:
    def test_unit_observable_has_zero_error(self):
        acc = WeightedAccumulator(["one"], block_length=10)
        rng = np.random.default_rng(1)
        logw = rng.standard_normal(500)
        acc.add_batch(np.ones(500), logw, {"one": np.ones(500)})
        est = acc.ratio("one")
        assert est.value == pytest.approx(1.0, rel=1e-14)
        assert est.stderr == pytest.approx(0.0, abs=1e-13)

    def test_plain_mean_for_distinguishable(self):
        rng = np.random.default_rng(2)
        obs = rng.standard_normal(4000) + 2.0
        est = weighted_average(obs, np.zeros(4000), 1.0, D, block_length=100)
        assert est.value == pytest.approx(obs.mean(), rel=1e-12)
        naive = obs.std() / math.sqrt(len(obs))
        assert est.stderr == pytest.approx(naive, rel=0.35)

    def test_merge_equals_concatenation(self):
        rng = np.random.default_rng(3)
        s = rng.standard_normal(3000)
        obs = rng.standard_normal(3000)
        sign, logw = channel_log_weights(s, 1.2, B)
        whole = WeightedAccumulator(["o"], block_length=64)
        whole.add_batch(sign, logw, {"o": obs})
        first = WeightedAccumulator(["o"], block_length=64)
        first.add_batch(sign[:1100], logw[:1100], {"o": obs[:1100]})
        second = WeightedAccumulator(["o"], block_length=64)
        second.add_batch(sign[1100:], logw[1100:], {"o": obs[1100:]})
        first.merge(second)
        assert first.count == whole.count
        assert first.ratio("o").value == pytest.approx(whole.ratio("o").value,
                                                       rel=1e-12)

    def test_merge_commutes(self):
        rng = np.random.default_rng(4)

        def make(seed_offset):
            acc = WeightedAccumulator(["o"], block_length=32)
            x = rng.standard_normal(700)
            acc.add_batch(np.ones(700), 0.1 * x, {"o": x})
            return acc

        a1, a2 = make(0), make(1)
        b1, b2 = WeightedAccumulator(["o"], 32), WeightedAccumulator(["o"], 32)
        # rebuild identical copies by replaying the same rng draws
        rng = np.random.default_rng(4)
        x1 = rng.standard_normal(700)
        x2 = rng.standard_normal(700)
        for acc, x in ((b1, x2), (b2, x1)):
            acc.add_batch(np.ones(700), 0.1 * x, {"o": x})
        a1.merge(a2)
        b1.merge(b2)
        assert a1.ratio("o").value == pytest.approx(b1.ratio("o").value, rel=1e-12)

    def test_extreme_log_weights(self):
        acc = WeightedAccumulator(["o"], block_length=8)
        logw = np.array([1e4, 1e4 - 5.0, 1e4 - 10.0, 50.0] * 8)
        acc.add_batch(np.ones(32), logw, {"o": np.full(32, 3.0)})
        est = acc.ratio("o")
        assert est.value == pytest.approx(3.0, rel=1e-12)

    def test_sign_collapse_detection(self):
        rng = np.random.default_rng(5)
        # antisymmetric weights with zero mean: must be flagged
        s = rng.standard_normal(5000) * 0.01
        sign, logw = channel_log_weights(s, 1.0, F)
        acc = WeightedAccumulator(["o"], block_length=100)
        acc.add_batch(sign, logw, {"o": np.ones(5000)})
        with pytest.raises(SignCollapseError):
            acc.ratio("o")

    def test_iid_error_estimate(self):
        rng = np.random.default_rng(6)
        obs = rng.standard_normal(20_000)
        est = weighted_average(obs, np.zeros_like(obs), 1.0, D, block_length=50)
        naive = 1.0 / math.sqrt(len(obs))
        assert est.stderr == pytest.approx(naive, rel=0.4)


class TestVirialEnergy:
    @pytest.mark.parametrize("channel", [D, B, F])
    def test_matches_exact_finite_p_energy(self, ensemble, oo_columns, channel):
        est = virial_energy(oo_columns, ensemble.beta, ensemble.nd, channel,
                            block_length=1000)
        exact = ensemble.exact_energy(channel)
        assert est.stderr < 0.5
        assert abs(est.value - exact) < 4.0 * est.stderr

    def test_boson_weight_positive(self, oo_columns):
        sign, _ = channel_log_weights(oo_columns.s, 2.3, B)
        assert np.all(sign > 0)


class TestBennett:
    def test_identical_ensembles_give_unity(self):
        # same samples on both legs, symmetrized so the count balance holds
        # at C = 0 exactly: f(x) + f(-x) = 1 makes the two sums equal
        rng = np.random.default_rng(7)
        half = rng.standard_normal(10_000)
        s = np.concatenate([half, -half])
        res = bennett_ratio(s, s, beta=1.0)
        assert res.ratio == pytest.approx(1.0, rel=1e-9)
        assert abs(res.c_star) < 1e-9

    def test_identical_streams_self_consistent(self):
        # with identical streams the self-consistent estimate is e^{C*},
        # which approaches 1 as sampling noise of the f-median vanishes
        rng = np.random.default_rng(70)
        s = rng.standard_normal(40_000)
        res = bennett_ratio(s, s, beta=1.0)
        assert res.ratio == pytest.approx(math.exp(res.c_star), rel=1e-9)
        assert abs(res.ratio - 1.0) < 5.0 / math.sqrt(len(s))

    def test_matches_exact_ratio(self, ensemble):
        rng = np.random.default_rng(8)
        cols_oo = ensemble.columns(ensemble.sample(200_000, rng))
        cols_o = ensemble.columns(ensemble.sample(200_000, rng, topo="O"))
        res = bennett_ratio(cols_oo.s, cols_o.s, ensemble.beta, block_length=1000)
        exact = ensemble.exact_ratio()
        assert res.ratio == pytest.approx(exact, abs=4 * res.stderr)
        assert res.stderr / res.ratio < 0.02
        assert res.plateau_ok

    def test_no_overlap_raises(self):
        s_oo = np.full(1000, 500.0)
        s_o = np.full(1000, -500.0)
        with pytest.raises(NoOverlapError):
            bennett_ratio(s_oo, s_o, beta=1.0)

    def test_plateau_values_near_c_star(self, ensemble):
        rng = np.random.default_rng(9)
        cols_oo = ensemble.columns(ensemble.sample(100_000, rng))
        cols_o = ensemble.columns(ensemble.sample(100_000, rng, topo="O"))
        res = bennett_ratio(cols_oo.s, cols_o.s, ensemble.beta)
        spread = max(abs(r - res.ratio) for _, r in res.plateau)
        assert spread < res.stderr


class TestFreeEnergyRoute:
    def test_zero_ratio_limit(self):
        e_f, err = fermion_energy_via_free_energy(3.0, 0.0, beta=2.0)
        assert e_f == 3.0 and err == 0.0

    def test_ratio_one_is_error(self):
        with pytest.raises(ValueError):
            fermion_energy_via_free_energy(3.0, 1.0, beta=2.0)

    def test_error_propagation(self):
        r, dr = 0.5, 0.01
        _, err = fermion_energy_via_free_energy(3.0, r, 2.0, 0.1, dr)
        slope = 2.0 / (2.0 * (1 - r**2))
        assert err == pytest.approx(math.hypot(0.1, slope * dr), rel=1e-12)

    def test_value(self):
        e_f, _ = fermion_energy_via_free_energy(3.0, 0.5, beta=2.0)
        assert e_f == pytest.approx(3.0 - math.log((1 - 0.5) / (1 + 0.5)) / 2.0)


class TestHistograms:
    def test_uniform_stream_is_flat(self):
        rng = np.random.default_rng(10)
        hist = Histogram1D(20, 0.0, 1.0, block_length=50)
        vals = rng.uniform(0, 1, size=(2000, 25))
        hist.add_batch(list(vals), np.ones(2000), np.zeros(2000))
        ro = hist.readout()
        # unit-integral normalization of a flat density on [0,1] gives 1/bin
        assert np.allclose(ro.values, 1.0, atol=0.1)
        dev = np.abs(ro.values - 1.0) / ro.stderr
        assert np.sum(dev > 3.0) <= 2

    def test_unit_integral(self):
        rng = np.random.default_rng(11)
        hist = Histogram1D(50, 0.0, 5.0, block_length=20)
        vals = rng.gamma(2.0, 1.0, size=(500, 10))
        hist.add_batch(list(vals), np.ones(500), rng.standard_normal(500))
        ro = hist.readout()
        assert np.sum(ro.values * ro.widths) == pytest.approx(1.0, rel=1e-12)

    def test_overflow_bins(self):
        hist = Histogram1D(4, 0.0, 1.0)
        hist.add_batch([np.array([-0.5, 0.5, 2.0])], [1.0], [0.0])
        assert hist.under > 0 and hist.over > 0

    def test_signed_weights_and_normalization(self):
        # fermion-like signed weights still integrate to one by construction
        rng = np.random.default_rng(12)
        hist = Histogram1D(30, 0.0, 4.0, block_length=64)
        n = 4000
        vals = rng.rayleigh(1.0, size=(n, 8))
        s = rng.standard_normal(n) + 1.0
        sign, logw = channel_log_weights(s, 1.0, F)
        hist.add_batch(list(vals), sign, logw)
        ro = hist.readout()
        assert np.sum(ro.values * ro.widths) == pytest.approx(1.0, rel=1e-12)

    def test_merge(self):
        rng = np.random.default_rng(13)
        h1 = Histogram1D(10, 0.0, 1.0, block_length=16)
        h2 = Histogram1D(10, 0.0, 1.0, block_length=16)
        whole = Histogram1D(10, 0.0, 1.0, block_length=16)
        a = rng.uniform(0, 1, size=(300, 5))
        b = rng.uniform(0, 1, size=(200, 5))
        h1.add_batch(list(a), np.ones(300), np.zeros(300))
        h2.add_batch(list(b), np.ones(200), np.zeros(200))
        whole.add_batch(list(np.concatenate([a, b])), np.ones(500), np.zeros(500))
        h1.merge(h2)
        assert np.allclose(h1.readout().values, whole.readout().values, rtol=1e-12)

    def test_density_2d_and_difference(self):
        rng = np.random.default_rng(14)
        h = Histogram2D(8, 8, -2, 2, -2, 2, block_length=32)
        pts = rng.standard_normal(size=(1000, 6, 2))
        h.add_batch(list(pts), np.ones(1000), np.zeros(1000))
        ro = h.readout2d(norm="count2")
        area = ro.widths[0, 0]
        inside = np.sum(ro.values) * area
        assert inside == pytest.approx(2.0, rel=1e-12)
        diff = density_difference(ro, ro, coefficient=0.5)
        assert np.allclose(diff.values, 0.5 * ro.values)

    def test_effective_counts(self):
        hist = Histogram1D(2, 0.0, 1.0)
        hist.add_batch([np.array([0.25])] * 4, np.ones(4), np.zeros(4))
        ro = hist.readout()
        assert ro.effective_counts[0] == pytest.approx(4.0)
        assert ro.effective_counts[1] == 0.0
