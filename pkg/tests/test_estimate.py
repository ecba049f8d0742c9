import dataclasses
import math

import numpy as np
import pytest

from girsanov_grad import estimate as E
from girsanov_grad import model as M
from girsanov_grad.errors import (
    DegenerateControlError,
    DegenerateEstimateError,
    EstimatorUnusableError,
    InvalidInputError,
)
from girsanov_grad.simulate import simulate


def _z(est, target):
    return abs(est.mean - target) / est.std_error


@pytest.fixture(scope="module")
def bm_records():
    spec = M.brownian_exit(b=1.0, dt=1e-3, bridge=True)
    return spec, simulate(spec, [1.0], 40000, 3)


@pytest.fixture(scope="module")
def dw_records():
    spec = M.double_well()
    a = np.array([0.3, 0.4, 0.8])
    return spec, a, simulate(spec, a, 20000, 21)


class TestMcEstimate:
    def test_std_error_definition(self):
        x = np.array([1.0, 2.0, 4.0, 7.0])
        est = E.McEstimate.from_samples(x)
        assert est.mean == pytest.approx(3.5)
        assert est.std_error == pytest.approx(np.std(x, ddof=1) / 2.0)

    def test_json_shape(self):
        d = E.McEstimate(1.0, 0.1, 10, 0.0).to_dict()
        assert set(d) == {"mean", "std_error", "n_samples", "censored_fraction"}

    def test_compensated_mean_is_order_free(self, rng):
        x = rng.standard_normal(10000) * 1e8 + 1.0
        assert E._fsum_mean(x) == E._fsum_mean(x[::-1])


class TestPhi:
    def test_zero_control_has_no_entropy(self, dw_records):
        spec, _, _ = dw_records
        rec = simulate(spec, np.zeros(3), 500, 1)
        est = E.estimate_phi(spec, np.zeros(3), records=rec)
        assert est.mean == pytest.approx(np.mean(rec.phi), rel=1e-14)

    def test_brownian_oracle(self, bm_records):
        # X^u = B at u = 1, so Phi = lam/2 E[tau] = 2b with lam = 2
        spec, rec = bm_records
        est = E.estimate_phi(spec, [1.0], records=rec)
        assert _z(est, 2.0) < 3.0

    def test_linear_in_lambda(self, bm_records):
        spec, rec = bm_records
        one = E.estimate_phi(spec, [1.0], records=rec)
        two = E.estimate_phi(spec.with_(lam=4.0), [1.0], records=rec)
        assert two.mean == 2.0 * one.mean

    def test_all_censored(self):
        spec = M.brownian_exit(dt=1e-2, t_max=0.02)
        with pytest.raises(DegenerateEstimateError):
            E.estimate_phi(spec, [0.0], 20, 1)

    def test_needs_two_samples(self, dw_records):
        with pytest.raises(InvalidInputError):
            E.estimate_phi(dw_records[0], np.zeros(3), 1, 1)


class TestReferenceFormulas:
    def test_gradient_at_b1(self, bm_records):
        spec, rec = bm_records
        g = E.estimate_gradient(spec, [1.0], records=rec, formula="paper")
        assert abs(g.values[0] - 2.0) < max(3 * g.std_errors[0], 0.05)

    def test_hessian_at_b1(self, bm_records):
        spec, rec = bm_records
        h = E.estimate_hessian(spec, [1.0], records=rec, formula="paper")
        assert abs(h.values[0, 0] - 2.0) < max(3 * h.std_errors[0, 0], 0.05)

    def test_constant_cost_gradient_vanishes(self, dw_records):
        spec, _, _ = dw_records
        rec = simulate(spec.with_(running_cost=M.Cost(), terminal_cost=M.Cost(const=3.0)),
                       np.zeros(3), 20000, 4)
        g = E.estimate_gradient(spec, np.zeros(3), records=rec.with_phi(np.full(len(rec), 3.0)))
        assert np.all(np.abs(g.values) < 3 * g.std_errors)

    def test_hessian_symmetric(self, dw_records):
        spec, a, rec = dw_records
        for formula in ("paper", "exact"):
            h = E.estimate_hessian(spec, a, records=rec, formula=formula).values
            assert np.array_equal(h, h.T)

    def test_unknown_formula(self, dw_records):
        spec, a, rec = dw_records
        with pytest.raises(InvalidInputError):
            E.estimate_gradient(spec, a, records=rec, formula="taylor")


class TestExactFormulas:
    # Brownian exit at b = 1, lam = 2, phi = 0: Phi(a) = a^2 E_{a-1}[tau], whose
    # derivatives at a = 1 are 10/3 and -4/3 (closed form, see README).
    def test_gradient_closed_form(self, bm_records):
        spec, rec = bm_records
        g = E.estimate_gradient(spec, [1.0], records=rec, formula="exact")
        assert abs(g.values[0] - 10 / 3) < max(3 * g.std_errors[0], 0.03)

    def test_hessian_closed_form(self, bm_records):
        spec, rec = bm_records
        h = E.estimate_hessian(spec, [1.0], records=rec, formula="exact")
        assert abs(h.values[0, 0] + 4 / 3) < max(3 * h.std_errors[0, 0], 0.03)

    def test_gradient_agrees_with_reference_at_zero(self, dw_records):
        spec, _, _ = dw_records
        rec = simulate(spec, np.zeros(3), 20000, 5)
        p = E.estimate_gradient(spec, np.zeros(3), records=rec, formula="paper")
        x = E.estimate_gradient(spec, np.zeros(3), records=rec, formula="exact")
        assert np.all(np.abs(p.values - x.values) < 3 * np.hypot(p.std_errors, x.std_errors))

    def test_quadratic_objective_exact(self, quad):
        rec = simulate(quad, [0.7], 500, 2)
        g = E.estimate_gradient(quad, [0.7], records=rec, formula="exact")
        h = E.estimate_hessian(quad, [0.7], records=rec, formula="exact")
        assert g.values[0] == pytest.approx(0.7, rel=1e-12)
        assert h.values[0, 0] == pytest.approx(1.0, rel=1e-12)

    def test_derivatives_of_reweighted_objective(self, dw_records):
        spec, a, rec = dw_records
        g = E.estimate_gradient(spec, a, records=rec, formula="exact").values
        h = E.estimate_hessian(spec, a, records=rec, formula="exact").values
        eps = 1e-5
        for k in range(3):
            e = np.zeros(3)
            e[k] = eps
            up = E.reweighted_objective(rec, spec.lam, a, a + e)
            dn = E.reweighted_objective(rec, spec.lam, a, a - e)
            assert (up - dn) / (2 * eps) == pytest.approx(g[k], rel=1e-6, abs=1e-8)
            mid = E.reweighted_objective(rec, spec.lam, a, a)
            assert (up - 2 * mid + dn) / eps**2 == pytest.approx(h[k, k], rel=1e-3, abs=1e-4)

    def test_reweighted_objective_at_anchor(self, dw_records):
        spec, a, rec = dw_records
        assert E.reweighted_objective(rec, spec.lam, a, a) == pytest.approx(
            E.estimate_phi(spec, a, records=rec).mean, rel=1e-14)


class TestNthDerivative:
    def test_plain_matches_gradient_phi_term(self, dw_records):
        spec, a, rec = dw_records
        v = np.array([0.0, 1.0, 0.0])
        est = E.estimate_nth_derivative(spec, a, [v], "plain", records=rec)
        assert est.mean == pytest.approx(np.mean(rec.phi * rec.m[:, 1]), rel=1e-12)

    def test_entropy_consistent_with_gradient(self, dw_records):
        spec, a, rec = dw_records
        full = E.gradient_samples(rec, spec.lam, a, "paper")
        phi_part = rec.phi[:, None] * rec.m
        for k in range(3):
            v = np.eye(3)[k]
            ent = E.estimate_nth_derivative(spec, a, [v], "entropy", records=rec)
            expected = np.mean(full[:, k] - phi_part[:, k])
            assert 0.5 * spec.lam * ent.mean == pytest.approx(expected, rel=1e-10, abs=1e-12)

    def test_entropy_second_order_structure(self, bm_records):
        spec, rec = bm_records
        est = E.estimate_nth_derivative(spec, [1.0], [[1.0], [1.0]], "entropy", records=rec)
        big_m = rec.m[:, 0]
        expected = np.mean((big_m**2 + 4 * big_m + 2) * big_m**2)
        assert est.mean == pytest.approx(expected, rel=1e-10)

    def test_entropy_at_zero_is_twice_isometry(self, dw_records):
        spec, _, _ = dw_records
        rec = simulate(spec, np.zeros(3), 20000, 6)
        v = np.array([0.5, -0.3, 0.8])
        est = E.estimate_nth_derivative(spec, np.zeros(3), [v, v], "entropy", records=rec)
        iso = E.McEstimate.from_samples(2 * rec.control_covariation(v))
        assert est.mean >= 0
        assert abs(est.mean - iso.mean) < 4 * math.hypot(est.std_error, iso.std_error)

    def test_bad_kind(self, dw_records):
        spec, a, rec = dw_records
        with pytest.raises(InvalidInputError):
            E.estimate_nth_derivative(spec, a, [np.ones(3)], "mixed", records=rec)


class TestReweighting:
    def test_zero_shift_is_plain_mean(self, dw_records):
        spec, a, rec = dw_records
        est = E.reweighted_expectation(spec, a, np.zeros(3), records=rec)
        assert est.mean == E.McEstimate.from_samples(rec.phi).mean

    def test_exit_probability(self):
        # reweight the uncontrolled exit indicator to u = 0.5, compare with direct runs
        spec = M.brownian_exit(b=1.0, dt=2e-3, bridge=True, lam=1.0)
        hit_right = lambda r: (r.exit_state[:, 0] >= 1.0).astype(float)  # noqa: E731
        rw = E.reweighted_expectation(spec, [0.0], [0.5], 40000, 3, statistic=hit_right)
        direct = E.McEstimate.from_samples(hit_right(simulate(spec, [0.5], 40000, 4)))
        assert abs(rw.mean - direct.mean) < 3 * math.hypot(rw.std_error, direct.std_error)

    def test_warns_outside_radius(self, dw_records):
        spec, a, rec = dw_records
        with pytest.warns(RuntimeWarning):
            E.reweighted_expectation(spec, a, np.full(3, 2.0), records=rec)

    def test_weight_underflow_is_not_an_error(self, dw_records):
        # a huge shift makes -1/2 w.G.w dominate: the weights vanish, no overflow
        spec, a, rec = dw_records
        with pytest.warns(RuntimeWarning):
            est = E.reweighted_expectation(spec, a, np.full(3, 1e6), records=rec)
        assert est.mean == pytest.approx(0.0, abs=1e-300)

    def test_overflow(self, dw_records):
        spec, a, rec = dw_records
        m = rec.m.copy()
        m[0, 0] = 1e6
        planted = dataclasses.replace(rec, m=m)
        with pytest.raises(EstimatorUnusableError):
            E.reweighted_expectation(spec, a, [0.5, 0.0, 0.0], records=planted)


class TestKl:
    def test_zero_direction(self, dw_records):
        spec, a, rec = dw_records
        kl = E.estimate_kl(spec, a, np.zeros(3), records=rec)
        assert kl.mean == 0.0 and kl.squared.mean == 0.0

    def test_deterministic_horizon(self, quad):
        kl = E.estimate_kl(quad, [0.0], [0.5], 2000, 1)
        assert kl.covariation.mean == 0.125
        assert abs(kl.squared.mean - 0.125) < 3 * kl.squared.std_error

    def test_forms_agree(self, dw_records):
        spec, a, rec = dw_records
        kl = E.estimate_kl(spec, a, np.array([0.4, -0.2, 0.3]), records=rec)
        assert kl.discrepancy_z() < 4.0
        assert kl.mean >= -3 * kl.std_error


class TestFreeEnergy:
    def test_constant_cost(self, quad):
        spec = quad.with_(terminal_cost=M.Cost(const=1.7))
        for lam in (0.1, 1.0, 10.0):
            fe = E.estimate_free_energy(spec, lam, 100, 1)
            assert fe.mean == pytest.approx(1.7, rel=1e-12)
            assert fe.std_error == 0.0

    def test_large_lambda_limit(self, dw_records):
        spec, _, _ = dw_records
        rec = simulate(spec, np.zeros(3), 20000, 8)
        fe = E.estimate_free_energy(spec, 1e3, records=rec)
        assert fe.mean == pytest.approx(np.mean(rec.phi), rel=2e-3)

    def test_bound_against_phi(self, dw_records):
        spec, a, _ = dw_records
        fe = E.estimate_free_energy(spec, spec.lam, 20000, 11)
        phi = E.estimate_phi(spec, a, 20000, 12)
        assert fe.mean <= phi.mean + 3 * math.hypot(fe.std_error, phi.std_error)

    def test_shift_keeps_huge_costs_finite(self, quad):
        spec = quad.with_(terminal_cost=M.Cost(const=5e3))
        fe = E.estimate_free_energy(spec, 1.0, 50, 1)
        assert fe.mean == pytest.approx(5e3)

    def test_nonpositive_lambda(self, quad):
        with pytest.raises(InvalidInputError):
            E.estimate_free_energy(quad, 0.0, 10, 1)


class TestControlVariates:
    def test_independent_control(self, rng):
        p = rng.standard_normal(50000)
        c = rng.standard_normal(50000)
        beta, adj, red = E.control_variate_beta(p, c, 0.0)
        assert abs(beta) < 0.03 and red > 0.999

    def test_perfect_control(self, rng):
        p = rng.standard_normal(1000) + 2.0
        beta, adj, red = E.control_variate_beta(p, p, 2.0)
        assert beta == pytest.approx(1.0) and red == pytest.approx(0.0, abs=1e-12)
        assert adj.mean == pytest.approx(2.0) and adj.std_error == pytest.approx(0.0, abs=1e-12)

    def test_zero_variance_control(self):
        with pytest.raises(DegenerateControlError):
            E.control_variate_beta(np.arange(5.0), np.ones(5), 1.0)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            E.control_variate_beta(np.ones(4), np.ones(5), 0.0)

    def test_optimal_whitened(self, rng):
        x = rng.standard_normal((200000, 3))
        z = E.optimal_cv_coefficients(x, [1.0, -2.0, 0.5])
        assert np.allclose(z, [1.0, -2.0, 0.5], atol=0.03)

    def test_optimal_hand_solve(self):
        # exact sample covariance diag(2, 4)
        s = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], float) * [1.0, math.sqrt(2.0)]
        s = s * math.sqrt(1.5)
        z = E.optimal_cv_coefficients(s, [2.0, 8.0])
        assert np.allclose(np.cov(s, rowvar=False), np.diag([2.0, 4.0]))
        assert np.allclose(z, [1.0, 2.0], rtol=1e-8)

    def test_optimal_singular(self):
        with pytest.raises(DegenerateControlError):
            E.optimal_cv_coefficients(np.zeros((10, 2)), [1.0, 1.0])

    def test_collinear_is_regularised(self, rng):
        x = rng.standard_normal(1000)
        z = E.optimal_cv_coefficients(np.column_stack([x, x]), [1.0, 1.0])
        assert np.all(np.isfinite(z))

    @pytest.mark.parametrize("corr,cp,cc,expected", [
        (0.6, 3.0, 1.0, True), (0.0, 1.0, 1.0, False), (0.01, 1.0, 1e-9, True),
        (-0.6, 3.0, 1.0, True), (0.4, 3.0, 1.0, False),
    ])
    def test_gate(self, corr, cp, cc, expected):
        assert E.cv_efficiency_gate(corr, cp, cc) is expected

    def test_gate_rejects_bad_input(self):
        with pytest.raises(InvalidInputError):
            E.cv_efficiency_gate(1.5, 1.0, 1.0)


class TestSharedRecords:
    def test_bit_identical_across_threads(self, dw_records):
        spec, a, _ = dw_records
        one = E.estimate_gradient(spec, a, 5000, 3, threads=1, formula="exact")
        four = E.estimate_gradient(spec, a, 5000, 3, threads=4, formula="exact")
        assert np.array_equal(one.values, four.values)
        assert np.array_equal(one.std_errors, four.std_errors)

    def test_martingale_means(self, dw_records):
        _, _, rec = dw_records
        for k in range(3):
            est = E.McEstimate.from_samples(rec.m[:, k])
            assert abs(est.mean) < 4 * est.std_error

    def test_derivative_json(self, dw_records):
        spec, a, rec = dw_records
        d = E.estimate_hessian(spec, a, records=rec).to_dict()
        assert np.array(d["values"]).shape == (3, 3)
        assert np.array(d["std_errors"]).shape == (3, 3)
