import math

import numpy as np
import pytest

from girsanov_grad import model as M
from girsanov_grad import simulate as S
from girsanov_grad.errors import EstimatorUnusableError, InvalidInputError, SimulationDivergedError
from girsanov_grad.rng import RngStream
from girsanov_grad.verify import pathwise_identity_check


def _f_zero_spec():
    return M.ProblemSpec(
        domain=M.Box([-1.0], [1.0]),
        drift=M.PolynomialDrift([[0.5]]),
        diffusion=M.ConstantDiffusion([[0.0]]),
        basis=(M.BasisFunction.constant([1.0]),),
        lam=1.0,
        initial_state=[0.0],
        dt=0.01,
        t_max=5.0,
        alpha=1.0,
    )


class TestRecords:
    def test_invariants(self, dwell):
        rec = S.simulate(dwell, [0.2, -0.1, 0.4], 3000, 1)
        assert np.array_equal(rec.tau, rec.n_steps * dwell.dt)
        assert np.array_equal(rec.gram, np.swapaxes(rec.gram, 1, 2))
        assert np.all(np.linalg.eigvalsh(rec.gram) >= -1e-12)
        assert np.all(rec.tau[rec.censored] == pytest.approx(dwell.t_max))

    def test_ito_identity_at_u_one(self):
        # without the bridge, u = 1 makes X a Brownian motion and M^u = X_tau exactly
        spec = M.brownian_exit(b=1.0, dt=1e-3)
        rec = S.simulate(spec, [1.0], 2000, 3)
        assert np.allclose(rec.m[:, 0], rec.exit_state[:, 0], atol=1e-12)

    def test_exit_state_outside_domain(self, bm_exit):
        rec = S.simulate(bm_exit, [1.0], 2000, 5)
        x = rec.exit_state[:, 0]
        assert np.all((x <= -2.0) | (x >= 1.0))

    def test_bridge_exits_land_on_barrier(self, bm_exit):
        rec = S.simulate(bm_exit, [1.0], 2000, 5)
        plain = S.simulate(bm_exit.with_(bridge=False), [1.0], 2000, 5)
        x = rec.exit_state[:, 0]
        on_barrier = (x == -2.0) | (x == 1.0)
        assert on_barrier.any() and not (plain.exit_state[:, 0] == 1.0).any()
        # the bridge can only make exits earlier
        assert np.all(rec.n_steps <= plain.n_steps)

    def test_zero_diffusion_kills_martingales(self):
        spec = _f_zero_spec()
        rec = S.simulate(spec, [0.7], 10, 0)
        assert np.all(rec.m == 0.0) and np.all(rec.gram == 0.0)
        # deterministic path x = (0.5 + a) t exits at t ~ 1 / 1.2
        assert np.all(rec.n_steps == math.ceil(1 / (1.2 * 0.01) - 1e-9))

    def test_zero_diffusion_records_differ_only_in_phi(self):
        spec = _f_zero_spec().with_(running_cost=M.Cost(const=1.0), t_max=0.5)
        r1 = S.simulate(spec, [0.3], 5, 0)
        r2 = S.simulate(spec, [-0.2], 5, 0)
        assert np.array_equal(r1.m, r2.m) and np.array_equal(r1.gram, r2.gram)

    def test_zero_control_martingale(self, dwell):
        rec = S.simulate(dwell, np.zeros(3), 500, 2)
        assert np.all(rec.control_martingale(np.zeros(3)) == 0.0)

    def test_censoring(self):
        spec = M.brownian_exit(b=1.0, dt=1e-2, t_max=0.05)
        rec = S.simulate(spec, [1.0], 400, 1)
        assert rec.censored_fraction > 0.5
        assert np.all(rec.n_steps[rec.censored] == 5)

    def test_fixed_horizon_is_not_censoring(self, quad):
        rec = S.simulate(quad, [0.5], 100, 1)
        assert not rec.censored.any()
        assert np.all(rec.n_steps == 100)
        assert np.all(rec.gram[:, 0, 0] == rec.tau)

    def test_censored_fraction_small_at_default_horizon(self):
        for spec, a in [(M.brownian_exit(dt=1e-2), [0.0]), (M.double_well(), np.zeros(3))]:
            assert S.simulate(spec, a, 4000, 9).censored_fraction < 1e-3

    def test_divergence_reported(self):
        spec = M.ProblemSpec(
            domain=M.Box([-1e300], [1e300]),
            drift=M.PolynomialDrift([[0.0, 0.0, 0.0, 1e10]]),
            diffusion=M.ConstantDiffusion([[1.0]]),
            basis=(M.BasisFunction.constant([1.0]),),
            lam=1.0, initial_state=[5.0], dt=0.1, t_max=10.0,
        )
        with pytest.raises(SimulationDivergedError) as err:
            S.simulate(spec, [0.0], 3, 0)
        assert err.value.sample_index == 0 and err.value.step >= 0

    def test_bad_inputs(self, dwell):
        with pytest.raises(InvalidInputError):
            S.simulate(dwell, np.zeros(3), 0, 1)
        with pytest.raises(InvalidInputError):
            S.simulate(dwell, np.zeros(2), 10, 1)
        with pytest.raises(InvalidInputError):
            S.simulate(dwell, np.zeros(3), 10, -1)


class TestDeterminism:
    def test_repeat_bit_identical(self, dwell):
        a = np.array([0.1, 0.5, -0.3])
        r1 = S.simulate(dwell, a, 5000, 77)
        r2 = S.simulate(dwell, a, 5000, 77)
        for f in ("tau", "phi", "m", "gram", "exit_state"):
            assert np.array_equal(getattr(r1, f), getattr(r2, f))

    def test_thread_count_invariant(self, dwell):
        a = np.array([0.1, 0.5, -0.3])
        base = S.simulate(dwell, a, 5000, 77, threads=1)
        for t in (2, 4):
            other = S.simulate(dwell, a, 5000, 77, threads=t)
            assert np.array_equal(base.phi, other.phi) and np.array_equal(base.m, other.m)

    def test_simulate_path_matches_batch(self, dwell):
        a = np.array([0.1, 0.5, -0.3])
        batch = S.simulate(dwell, a, 40, 8)
        rec = S.simulate_path(dwell, a, RngStream(8, 37))
        assert rec.phi == batch.phi[37] and np.array_equal(rec.m, batch.m[37])

    def test_offset_start_matches(self, bm_exit):
        full = S.simulate(bm_exit, [1.0], 3000, 4)
        tail = S.simulate(bm_exit, [1.0], 1000, 4, start=2000)
        assert np.array_equal(full.tau[2000:], tail.tau)

    @pytest.mark.parametrize("bridge", [False, True])
    def test_numpy_fallback_agrees(self, bridge):
        spec = M.double_well(bridge=bridge, dt=0.02)
        a = np.array([0.3, -0.2, 0.5])
        fast = S.simulate(spec, a, 300, 6, use_numba=True)
        slow = S.simulate(spec, a, 300, 6, use_numba=False)
        assert np.array_equal(fast.n_steps, slow.n_steps)
        assert np.allclose(fast.m, slow.m, rtol=1e-12, atol=1e-12)
        assert np.allclose(fast.phi, slow.phi, rtol=1e-12, atol=1e-12)

    def test_general_kernel_agrees_with_scalar_kernel(self, dwell, monkeypatch):
        a = np.array([0.3, -0.2, 0.5])
        scalar = S.simulate(dwell, a, 200, 6)
        monkeypatch.setattr(S, "simulate_range_numba_1d", S.simulate_range_numba)
        general = S.simulate(dwell, a, 200, 6)
        assert np.array_equal(scalar.n_steps, general.n_steps)
        assert np.allclose(scalar.m, general.m, rtol=1e-12, atol=1e-12)

    def test_two_dimensional_problem(self):
        spec = M.ProblemSpec(
            domain=M.Box([-1.0, -1.0], [1.0, 1.0]),
            drift=M.PolynomialDrift([[0.0, -1.0], [0.0, -1.0]]),
            diffusion=M.ConstantDiffusion([[1.0, 0.0], [0.5, 0.0]]),
            basis=(M.BasisFunction.constant([1.0, 0.0]), M.BasisFunction.constant([0.0, 1.0])),
            lam=1.0, initial_state=[0.0, 0.0], dt=0.01, t_max=20.0, bridge=True,
        )
        fast = S.simulate(spec, [0.2, 0.1], 200, 1, use_numba=True)
        slow = S.simulate(spec, [0.2, 0.1], 200, 1, use_numba=False)
        assert np.array_equal(fast.n_steps, slow.n_steps)
        assert np.allclose(fast.gram, slow.gram, rtol=1e-12)
        # rank-one diffusion: (ff^T)^+ has rank one, so the Gram matrix is singular
        assert np.allclose(np.linalg.det(fast.gram), 0.0, atol=1e-10)


class TestExponentialMartingale:
    def test_zero_direction(self, dwell):
        rec = S.simulate(dwell, np.zeros(3), 5, 1).record(0)
        assert S.exponential_martingale(rec, np.zeros(3)) == 1.0

    def test_closed_form(self):
        rec = S.TrajectoryRecord(1.0, np.zeros(1), False, 0.0, np.array([2.0]),
                                 np.array([[1.0]]), 1)
        assert S.exponential_martingale(rec, [1.0]) == pytest.approx(math.exp(1.5))

    def test_overflow(self):
        rec = S.TrajectoryRecord(1.0, np.zeros(1), False, 0.0, np.array([800.0]),
                                 np.array([[1.0]]), 1)
        with pytest.raises(EstimatorUnusableError):
            S.exponential_martingale(rec, [1.0])

    def test_pathwise_identity(self, dwell, rng):
        batch = S.simulate(dwell, [0.4, 0.1, -0.3], 200, 3)
        for rec in list(batch)[:50]:
            a = rng.standard_normal(3) * 2
            bound = 1e-10 * (1 + abs(rec.m @ a))
            assert pathwise_identity_check(rec, a) < bound

    def test_martingale_mean_is_one(self, dwell):
        batch = S.simulate(dwell, np.zeros(3), 20000, 12)
        w = S.exponential_martingale(batch, [0.3, 0.3, 0.3])
        assert abs(w.mean() - 1.0) < 4 * w.std() / math.sqrt(w.size)


class TestBridgeProbability:
    def test_endpoint_on_barrier(self):
        assert S.bridge_exit_probability(0.2, 1.0, 1.0, 1.0, 0.01) == 1.0

    def test_far_barrier(self):
        assert S.bridge_exit_probability(0.0, 0.0, 1e3, 1.0, 0.01) == 0.0

    def test_closed_form(self):
        assert S.bridge_exit_probability(0.5, 0.5, 1.0, 1.0, 0.01) == pytest.approx(
            math.exp(-50), rel=1e-12)

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            S.bridge_exit_probability(0.0, 0.0, 1.0, 0.0, 0.01)


class TestDump:
    def test_csv_roundtrip(self, tmp_path, dwell):
        batch = S.simulate(dwell, [0.1, 0.2, 0.3], 20, 1)
        path = tmp_path / "paths.csv"
        S.dump_records_csv(batch, path)
        rows = path.read_text().strip().splitlines()
        assert rows[0].split(",")[:5] == ["tau", "censored", "phi", "n_steps", "m0"]
        assert len(rows) == 21
        assert len(rows[0].split(",")) == 4 + 3 + 6
        first = rows[1].split(",")
        assert float(first[2]) == batch.phi[0]
