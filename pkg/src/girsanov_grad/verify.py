"""Analytic oracles and identity checks.

The Brownian-exit problem (``X^u_t = (u - 1) t + B_t`` leaving ``(-2, b)``)
has closed forms at ``u = 1``, where the path is a standard Brownian
motion: the two-point exit law, its moments, and the polynomial
``q(b) = 2b(b^2 + 2b - 2)``.  The remaining checks are pathwise identities
and inequalities that hold for every simulated record.
"""
from dataclasses import dataclass
import csv
import json
import math

import numpy as np

from .errors import InvalidInputError
from .estimate import (
    McEstimate,
    _mean_se,
    estimate_free_energy,
    estimate_gradient,
    estimate_kl,
    estimate_phi,
    hessian_samples,
)
from .model import admissible_radius, brownian_exit, check_coefficients, pseudo_apply
from .simulate import log_exponential_martingale, simulate

B_STAR = (math.sqrt(7.0) - 1.0) / 3.0
REPORTED_Q_AT_B_STAR = -1.2585
Q_ROOT = math.sqrt(3.0) - 1.0


@dataclass(frozen=True)
class ExitLaw:
    p_left: float
    p_right: float
    b: float


@dataclass(frozen=True)
class CheckResult:
    check_name: str
    value: float
    oracle: float
    tolerance: float
    passed: bool

    def to_dict(self):
        return {
            "check_name": self.check_name,
            "value": _json_float(self.value),
            "oracle": _json_float(self.oracle),
            "tolerance": _json_float(self.tolerance),
            "pass": bool(self.passed),
        }


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def compare(name, value, oracle, tolerance):
    """``CheckResult`` for ``|value - oracle| <= tolerance``."""
    return CheckResult(name, float(value), float(oracle), float(tolerance),
                       bool(abs(value - oracle) <= tolerance))


def upper_bound(name, value, bound, tolerance=0.0):
    """``CheckResult`` for ``value <= bound + tolerance``."""
    return CheckResult(name, float(value), float(bound), float(tolerance),
                       bool(value <= bound + tolerance))


def write_report(results, path):
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in results], fh, indent=2)


# -- Brownian-exit closed forms -------------------------------------------------


def exit_law_oracle(b):
    """Exit law of standard Brownian motion from ``(-2, b)`` started at 0."""
    if not b > 0:
        raise InvalidInputError("b must be positive")
    p_left = b / (2.0 + b)
    return ExitLaw(p_left, 1.0 - p_left, float(b))


def q_polynomial(b):
    """``q(b) = 2b(b^2 + 2b - 2)``; ``E[B^4 + 4B^3 + 2B^2]`` under the exit law."""
    return 2.0 * b * (b * b + 2.0 * b - 2.0)


def nonconvexity_statistic(records):
    """Per-path ``M^4 + 4 M^3 + 2 M^2`` with ``M`` the control martingale at ``u = 1``."""
    big_m = records.m[:, 0]
    m2 = big_m * big_m
    return m2 * (m2 + 4.0 * big_m + 2.0)


def reproduce_nonconvexity(b, n, dt, seed, bridge=True, threads=None):
    """Estimate ``E[B^4 + 4B^3 + 2B^2]`` at ``u = 1`` and return it with ``q(b)``.

    The statistic is the second-derivative formula evaluated with
    ``formula="paper"``, ``lam = 2`` and no path cost; it is read off the same
    record set as :func:`~girsanov_grad.estimate.estimate_hessian`.
    """
    spec = brownian_exit(b=b, lam=2.0, dt=dt, bridge=bridge)
    records = simulate(spec, [1.0], n, seed, threads=threads)
    samples = hessian_samples(records, spec.lam, [1.0], "paper")[:, 0, 0]
    est = McEstimate.from_samples(samples, records.censored_fraction)
    return est, q_polynomial(b)


def exit_frequencies(b, n, dt, seed, bridge=True, threads=None):
    """Monte Carlo exit law at ``u = 1``: ``(p_left, p_right)`` as McEstimates."""
    spec = brownian_exit(b=b, dt=dt, bridge=bridge)
    records = simulate(spec, [1.0], n, seed, threads=threads)
    x = records.exit_state[:, 0]
    left = (x <= spec.domain.lo[0]) & ~records.censored
    right = (x >= spec.domain.hi[0]) & ~records.censored
    cf = records.censored_fraction
    return (McEstimate.from_samples(left.astype(float), cf),
            McEstimate.from_samples(right.astype(float), cf))


# -- pathwise identities and bounds ------------------------------------------------


def pathwise_identity_residual(m, gram, a):
    """Residual of ``-log E(M^{-u}) = M^u + <M^u, M^u>/2`` scaled by ``1 + |M^u|``."""
    a = np.asarray(a, dtype=float)
    lhs = -log_exponential_martingale(m, gram, -a)
    big_m = np.asarray(m) @ a
    rhs = big_m + 0.5 * np.einsum("...kl,k,l->...", np.asarray(gram), a, a)
    return np.abs(lhs - rhs) / (1.0 + np.abs(big_m))


def pathwise_identity_check(rec, a):
    """Absolute residual of the identity for one record."""
    a = np.asarray(a, dtype=float)
    lhs = -float(log_exponential_martingale(rec.m, rec.gram, -a))
    rhs = float(rec.m @ a) + 0.5 * float(a @ rec.gram @ a)
    return abs(lhs - rhs)


@dataclass(frozen=True)
class BoundReport:
    n_records: int
    kw_violations: int
    covariation_violations: int
    kw_worst_slack: float
    covariation_worst_slack: float

    @property
    def passed(self):
        return self.kw_violations == 0 and self.covariation_violations == 0

    def to_dict(self):
        return {
            "n_records": self.n_records,
            "kw_violations": self.kw_violations,
            "covariation_violations": self.covariation_violations,
            "kw_worst_slack": self.kw_worst_slack,
            "covariation_worst_slack": self.covariation_worst_slack,
            "pass": self.passed,
        }


_REL = 1e-12


def bound_checks(records, spec, a, gram=None):
    """Kunita-Watanabe and the sup-norm covariation bound on every record.

    Checks ``G_kl^2 <= G_kk G_ll``, ``|G_kl| <= alpha^-2 s_k s_l tau`` for all
    basis pairs (``s_k`` the declared bounds) and
    ``a.G.a <= alpha^-2 (sum |a_k| s_k)^2 tau``.  Slacks are relative
    (``1 - value / bound``); a violation needs the value to exceed the bound
    by more than ``1e-12`` relative.  ``gram`` overrides ``records.gram``
    (used to plant violations in tests).
    """
    a = check_coefficients(spec, a)
    gram = records.gram if gram is None else np.asarray(gram, dtype=float)
    tau = records.tau
    diag = np.einsum("nkk->nk", gram)
    kw_bound = diag[:, :, None] * diag[:, None, :]
    kw_val = gram * gram
    kw_viol = kw_val > kw_bound * (1.0 + _REL) + 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        kw_slack = np.where(kw_bound > 0, 1.0 - kw_val / kw_bound, 1.0)

    s = spec.sup_bounds
    inv_a2 = spec.alpha ** -2
    pair_bound = inv_a2 * s[None, :, None] * s[None, None, :] * tau[:, None, None]
    pair_val = np.abs(gram)
    pair_viol = pair_val > pair_bound * (1.0 + _REL) + 1e-300
    u_sup = float(np.sum(np.abs(a) * s))
    ctrl_bound = inv_a2 * u_sup * u_sup * tau
    ctrl_val = np.einsum("k,nkl,l->n", a, gram, a)
    ctrl_viol = ctrl_val > ctrl_bound * (1.0 + _REL) + 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        pair_slack = np.where(pair_bound > 0, 1.0 - pair_val / pair_bound, 1.0)
        ctrl_slack = np.where(ctrl_bound > 0, 1.0 - ctrl_val / ctrl_bound, 1.0)
    return BoundReport(
        n_records=len(records),
        kw_violations=int(np.sum(np.any(kw_viol, axis=(1, 2)))),
        covariation_violations=int(np.sum(np.any(pair_viol, axis=(1, 2)) | ctrl_viol)),
        kw_worst_slack=float(np.min(kw_slack)),
        covariation_worst_slack=float(min(np.min(pair_slack), np.min(ctrl_slack))),
    )


def assumption_bound_check(spec, n_points=1000, seed=0):
    """Largest ``y.(ff^T)^+ y / (alpha^-2 |y|^2)`` over random ``y``; must be <= 1."""
    rng = np.random.default_rng(seed)
    f = spec.diffusion.matrix
    worst = 0.0
    for _ in range(n_points):
        y = rng.standard_normal(spec.dimension)
        ratio = float(y @ pseudo_apply(f, y)) / (spec.alpha ** -2 * float(y @ y))
        worst = max(worst, ratio)
    return worst


# -- estimator-level checks --------------------------------------------------------


def finite_difference_details(spec, a, direction, h, n, seed, formula="exact", threads=None):
    """Directional gradient against a central difference of ``Phi`` with common seeds.

    Returns a dict with the two values, the difference's own standard error
    (from per-path differences) and the relative error.
    """
    a = check_coefficients(spec, a)
    direction = check_coefficients(spec, direction)
    if not h > 0:
        raise InvalidInputError("h must be positive")
    grad = estimate_gradient(spec, a, n, seed, threads=threads, formula=formula)
    directional = float(grad.values @ direction)
    plus = simulate(spec, a + h * direction, n, seed, threads=threads)
    minus = simulate(spec, a - h * direction, n, seed, threads=threads)
    lam = spec.lam
    s_plus = plus.phi + 0.5 * lam * plus.control_covariation(a + h * direction)
    s_minus = minus.phi + 0.5 * lam * minus.control_covariation(a - h * direction)
    fd, fd_se = _mean_se((s_plus - s_minus) / (2.0 * h))
    denom = max(abs(fd), np.finfo(float).tiny)
    return {
        "directional_derivative": directional,
        "gradient_std_error": float(np.sqrt(np.sum((grad.std_errors * direction) ** 2))),
        "finite_difference": float(fd),
        "finite_difference_std_error": float(fd_se),
        "relative_error": abs(directional - fd) / denom,
    }


def finite_difference_check(spec, a, direction, h, n, seed, formula="exact", threads=None):
    """Relative error between ``direction . grad Phi`` and a central difference."""
    return finite_difference_details(spec, a, direction, h, n, seed, formula,
                                     threads)["relative_error"]


def free_energy_bound_checks(spec, lams, coefficient_sets, n, seed, threads=None):
    """``F(lam) <= Phi(a; lam) + 3 combined std errors`` for each pair."""
    out = []
    for lam in lams:
        sp = spec.with_(lam=float(lam))
        fe = estimate_free_energy(sp, lam, n, seed, threads=threads)
        for i, a in enumerate(coefficient_sets):
            phi = estimate_phi(sp, a, n, seed + 1 + i, threads=threads)
            tol = 3.0 * math.hypot(fe.std_error, phi.std_error)
            out.append(upper_bound(f"free_energy_bound[lam={lam:g},a#{i}]", fe.mean,
                                   phi.mean, tol))
    return out


def random_admissible_coefficients(spec, count, seed):
    """``count`` random coefficient vectors whose control bound is inside the radius."""
    rng = np.random.default_rng(seed)
    radius = admissible_radius(spec.alpha, spec.lam)
    s = np.maximum(spec.sup_bounds, 1e-300)
    out = []
    for _ in range(count):
        direction = rng.standard_normal(spec.n_basis)
        scale = radius * rng.uniform(0.05, 0.95) / float(np.sum(np.abs(direction) * s))
        out.append(direction * scale)
    return out


@dataclass(frozen=True)
class DtStudy:
    dt: float
    coarse: McEstimate
    fine: McEstimate
    order: float

    @property
    def bias_budget(self):
        """Richardson estimate of the bias at ``dt`` for a method of ``order``."""
        diff = abs(self.coarse.mean - self.fine.mean)
        return diff / (1.0 - 2.0 ** (-self.order))


def dt_halving_study(estimator, dt, order=1.0):
    """Run ``estimator(dt)`` and ``estimator(dt / 2)`` (both return McEstimates)."""
    return DtStudy(float(dt), estimator(dt), estimator(dt / 2.0), float(order))


# -- suites ----------------------------------------------------------------------


def parse_grid(text):
    """``"lo:hi:step"`` to an inclusive list of grid points."""
    try:
        lo, hi, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise InvalidInputError(f"grid must look like lo:hi:step, got {text!r}") from None
    if not step > 0 or hi < lo:
        raise InvalidInputError("grid needs step > 0 and hi >= lo")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    grid = [round(lo + i * step, 12) for i in range(count)]
    grid = [b for b in grid if b > 0]
    if not grid:
        raise InvalidInputError("grid has no positive points")
    return grid


def q_sweep(b_grid, n, dt, seed, bridge=True, threads=None):
    """Rows ``(b, estimate, std_error, oracle)`` for each grid point."""
    rows = []
    for b in b_grid:
        est, oracle = reproduce_nonconvexity(b, n, dt, seed, bridge, threads)
        rows.append((float(b), est.mean, est.std_error, oracle))
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["b", "estimate", "std_error", "oracle"])
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def nonconvexity_suite(b_grid, n, dt, seed, bridge=True, threads=None, budget_b=1.0):
    """q(b) sweep with oracle checks; tolerance ``max(3 se, dt-halving budget)``."""
    study = dt_halving_study(
        lambda h: reproduce_nonconvexity(budget_b, n, h, seed, bridge, threads)[0],
        dt, order=1.0 if bridge else 0.5,
    )
    budget = study.bias_budget
    rows = q_sweep(b_grid, n, dt, seed, bridge, threads)
    results = [
        compare(f"q_polynomial[b={b:g}]", est, oracle, max(3.0 * se, budget))
        for b, est, se, oracle in rows
    ]
    return rows, results, study


def identities_suite(n, seed, threads=None):
    """Pathwise identities, bounds and Ito/KL checks on every builtin."""
    from .model import double_well

    results = []
    problems = [brownian_exit(), double_well()]
    rng = np.random.default_rng(seed)
    for spec in problems:
        a = rng.uniform(-0.5, 0.5, spec.n_basis)
        records = simulate(spec, a, n, seed, threads=threads)
        for k in range(3):
            v = rng.standard_normal(spec.n_basis) * (1.0 + k)
            worst = float(np.max(pathwise_identity_residual(records.m, records.gram, v)))
            results.append(upper_bound(f"{spec.name}:pathwise_identity[{k}]", worst, 1e-10))
        report = bound_checks(records, spec, a)
        results.append(upper_bound(f"{spec.name}:kunita_watanabe_violations",
                                   report.kw_violations, 0))
        results.append(upper_bound(f"{spec.name}:covariation_bound_violations",
                                   report.covariation_violations, 0))
        results.append(upper_bound(f"{spec.name}:assumption_bound",
                                   assumption_bound_check(spec, 200, seed), 1.0, _REL))
        w = rng.uniform(-0.5, 0.5, spec.n_basis)
        kl = estimate_kl(spec, a, w, records=records)
        se = math.hypot(kl.covariation.std_error, kl.squared.std_error)
        results.append(compare(f"{spec.name}:ito_isometry", kl.squared.mean,
                               kl.covariation.mean, 4.0 * se))
        results.append(upper_bound(f"{spec.name}:kl_nonnegative", -kl.mean, 0.0,
                                   3.0 * kl.std_error))
        for k in range(spec.n_basis):
            mean, mse = _mean_se(records.m[:, k])
            results.append(compare(f"{spec.name}:martingale_mean[{k}]", mean, 0.0,
                                   4.0 * mse))
    return results
