import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from romcmc.diagnostics import (SUMMARY_FIELDS, DegenerateSeriesWarning, common_bin_edges, efficiency_report, ess,
                                feasible_set_measure, hellinger_gaussian_1d, iact, marginal_tv, mse_tradeoff,
                                posterior_average_error, summary_record, tightness, toy_quadrature_oracle)
from romcmc.errors import NumericalError
from romcmc.pde import GaussianPrior
from romcmc.problems import toy2d
from romcmc.rom import ReducedBasis, ReducedOrderModel
from romcmc.samplers import ChainRecord


def ar1(rho, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - rho**2)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    return x


def gaussian_log_density(mean, cov):
    P = np.linalg.inv(cov)
    return lambda X: -0.5 * np.einsum("ij,jk,ik->i", X - mean, P, X - mean)


def record_from(samples, wall_ns=1_000_000):
    rec = ChainRecord(samples.shape[1], "synthetic", 0, len(samples))
    for x in samples:
        rec.append(x, {"wall_time_ns": wall_ns, "n_full": 1})
    return rec


class TestIact:
    def test_iid(self):
        assert iact(np.random.default_rng(0).standard_normal(100_000)) == pytest.approx(0.5, abs=0.05)

    def test_ar1(self):
        assert iact(ar1(0.9, 10**6, 1)) == pytest.approx(0.5 + 0.9 / 0.1, rel=0.05)

    def test_pairwise_duplication_doubles(self):
        # duplicating an AR(1) series exactly doubles the analytic IACT: 4.5 -> 9
        x = ar1(0.8, 200_000, 2)
        assert iact(x) == pytest.approx(4.5, rel=0.05)
        assert iact(np.repeat(x, 2)) == pytest.approx(2 * iact(x), rel=0.02)

    def test_constant_series_warns(self):
        with pytest.warns(DegenerateSeriesWarning):
            assert iact(np.full(50, 3.0)) == 0.5

    @pytest.mark.parametrize("bad", [np.zeros(9), np.array([1.0] * 20 + [np.nan])])
    def test_invalid_input(self, bad):
        with pytest.raises(ValueError):
            iact(bad)

    @given(arrays(float, st.integers(10, 300), elements=st.floats(-1e3, 1e3)))
    @settings(max_examples=60, deadline=None)
    def test_lower_bound_and_ess_identity(self, x):
        if np.ptp(x) == 0:
            return
        t = iact(x)
        assert t >= 0.5
        assert ess(x)[0] * 2 * t == pytest.approx(x.size)


class TestEss:
    def test_iid_ess_close_to_n(self):
        x = np.random.default_rng(3).standard_normal((50_000, 2))
        np.testing.assert_allclose(ess(x), 50_000, rtol=0.1)

    def test_estimand(self):
        x = np.random.default_rng(4).standard_normal((1000, 3))
        assert ess(x, h=lambda s: s.sum(axis=1)).shape == (1,)

    def test_identical_values_warn(self):
        with pytest.warns(DegenerateSeriesWarning):
            ess(np.ones((20, 1)))


class TestEfficiency:
    def test_report_and_self_speedup(self):
        x = np.random.default_rng(5).standard_normal((2001, 2))
        rep = efficiency_report(record_from(x), burn_in=100)
        assert rep.n_samples == 1900
        np.testing.assert_allclose(rep.ess * 2 * rep.iact, 1900)
        assert rep.wall_time_s == pytest.approx(2001e-3)
        assert rep.full_evals == 2001
        assert rep.speedup(rep) == pytest.approx(1.0)
        assert rep.ess_per_s == pytest.approx(rep.ess_min / rep.wall_time_s)

    def test_summary_schema(self):
        x = np.random.default_rng(6).standard_normal((500, 2))
        rep = efficiency_report(record_from(x))
        row = summary_record(rep, rep, error_threshold=0.1, avg_beta=float("nan"), basis_dim=4)
        assert tuple(row) == SUMMARY_FIELDS
        assert row["avg_beta"] is None and row["speedup"] == pytest.approx(1.0) and row["basis_dim"] == 4


class TestTightness:
    def test_example(self):
        z = np.random.default_rng(7).standard_normal((200_000, 2))
        z = (z - z.mean(0)) / z.std(0, ddof=1)
        assert tightness(z, GaussianPrior(2, cov=4 * np.eye(2))) == pytest.approx(4.0, rel=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            tightness(np.ones((10, 2)), GaussianPrior(2))


class TestTradeoff:
    def test_formula(self):
        r = mse_tradeoff(2.0, 1.0, 0.5, 4.0)
        assert r.tau == pytest.approx(2.0 / 0.25 * (1 - 1.0 / 8.0))
        assert r.preferable(7.0) and not r.preferable(7.1)

    def test_zero_bias(self):
        assert mse_tradeoff(1.0, 1.0, 0.0, 2.0).tau == np.inf

    def test_never_preferable_when_too_slow(self):
        r = mse_tradeoff(1.0, 1.0, 0.1, 0.5)
        assert r.tau < 0 and r.verdict == "never preferable" and not r.preferable(1.0)

    @given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(1e-3, 1), st.floats(0.1, 100))
    def test_sign_follows_cost_ratio(self, var, var_m, bias, speedup):
        r = mse_tradeoff(var, var_m, bias, speedup)
        assert (r.tau > 0) == (var_m < var * speedup)

    def test_invalid(self):
        with pytest.raises(ValueError):
            mse_tradeoff(0.0, 1.0, 0.1, 1.0)


class TestQuadratureOracle:
    def test_hellinger_closed_form_1d_product(self):
        # product densities differing in one coordinate: the Bhattacharyya coefficient factorises
        m1, s1, m2, s2 = 0.1, 0.5, 0.4, 0.7
        p = gaussian_log_density(np.array([m1, 0.0]), np.diag([s1**2, 1.0]))
        q = gaussian_log_density(np.array([m2, 0.0]), np.diag([s2**2, 1.0]))
        res = toy_quadrature_oracle(p, q, [(-6, 6), (-9, 9)])
        assert res.hellinger == pytest.approx(hellinger_gaussian_1d(m1, s1, m2, s2), abs=1e-6)

    def test_moments_and_normaliser(self):
        mean, cov = np.array([0.3, -0.2]), np.array([[0.5, 0.2], [0.2, 0.4]])
        p = gaussian_log_density(mean, cov)
        res = toy_quadrature_oracle(p, p, [(-6, 6), (-6, 6)])
        assert res.hellinger == pytest.approx(0.0, abs=1e-7)
        np.testing.assert_allclose(res.mean, mean, atol=1e-9)
        np.testing.assert_allclose(res.cov, cov, atol=1e-9)
        assert res.Z * np.exp(res.log_shift) == pytest.approx(2 * np.pi * np.sqrt(np.linalg.det(cov)), rel=1e-9)

    def test_symmetric_and_bounded(self):
        p = gaussian_log_density(np.zeros(2), np.eye(2))
        q = gaussian_log_density(np.array([0.5, 0.0]), 0.5 * np.eye(2))
        bounds = [(-8, 8), (-8, 8)]
        a = toy_quadrature_oracle(p, q, bounds, shift=0.0).hellinger
        b = toy_quadrature_oracle(q, p, bounds, shift=0.0).hellinger
        assert a == pytest.approx(b, abs=1e-12) and 0 < a < 1

    def test_refinement_failure_detected(self):
        p = gaussian_log_density(np.zeros(1), np.array([[1e-4]]))
        with pytest.raises(NumericalError):
            toy_quadrature_oracle(p, p, [(-1000, 1000)])

    def test_limits(self):
        p = gaussian_log_density(np.zeros(3), np.eye(3))
        with pytest.raises(ValueError):
            toy_quadrature_oracle(p, p, [(-1, 1)] * 3)
        with pytest.raises(ValueError):
            toy_quadrature_oracle(p, p, [(-1, 1)], n=100)

    @given(st.floats(-2, 2), st.floats(0.2, 3), st.floats(-2, 2), st.floats(0.2, 3))
    def test_closed_form_range(self, m1, s1, m2, s2):
        h = hellinger_gaussian_1d(m1, s1, m2, s2)
        assert 0.0 <= h <= 1.0
        assert h == pytest.approx(hellinger_gaussian_1d(m2, s2, m1, s1), abs=1e-12)


@pytest.fixture(scope="module")
def toy():
    return toy2d(nx=6)


class TestFeasibleSet:
    def test_full_basis_gives_zero(self, toy):
        model = toy.model
        c = model.constraint / np.linalg.norm(model.constraint)
        Q, _ = np.linalg.qr(np.column_stack([c, np.eye(model.n_state)]))
        rom = ReducedOrderModel(model, ReducedBasis.from_columns(Q[:, 1:model.n_state]), toy.noise)
        xs = np.random.default_rng(8).uniform(0.5, 2, (20, 2))
        rep = feasible_set_measure(xs, rom, 1e-6, with_indicator=False)
        assert rep.mu_complement == 0.0 and rep.monte_carlo_zero and "not an exact zero" in rep.describe()

    def test_weights_and_outputs_shortcut(self, toy):
        rom = ReducedOrderModel(toy.model, ReducedBasis(toy.model.n_state, 5), toy.noise)
        rom.enrich(toy.truth, toy.model.solve(toy.truth))
        xs = np.array([[1.5, 0.6], [1.0, 1.0], [1.0, 1.0], [0.5, 2.0]])
        outs = np.array([toy.model.forward(x) for x in xs])
        a = feasible_set_measure(xs, rom, 0.01, full_outputs=outs, with_indicator=False)
        b = feasible_set_measure(xs, rom, 0.01, with_indicator=False)
        assert a.weights.sum() == 4 and len(a.pairs) == 3
        np.testing.assert_allclose(a.pairs[:, 1], b.pairs[:, 1], rtol=1e-10)
        assert 0.0 <= a.mu_complement <= 1.0
        assert posterior_average_error(xs, rom) == pytest.approx(
            np.sum(a.pairs[:, 1] * a.weights) / 4, rel=1e-10)

    def test_empty(self, toy):
        rom = ReducedOrderModel(toy.model, ReducedBasis(toy.model.n_state, 5), toy.noise)
        with pytest.raises(ValueError):
            feasible_set_measure(np.empty((0, 2)), rom, 0.1)


class TestMarginals:
    def test_identical_and_disjoint(self):
        a = np.random.default_rng(9).standard_normal((1000, 2))
        edges = common_bin_edges([a, a + 100])
        np.testing.assert_allclose(marginal_tv(a, a, edges), 0.0)
        np.testing.assert_allclose(marginal_tv(a, a + 100, edges), 1.0)
        assert len(edges) == 2 and len(edges[0]) == 51
