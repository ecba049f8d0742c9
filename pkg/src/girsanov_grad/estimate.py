"""Monte Carlo estimators built on simulated record sets.

Every estimator takes ``(spec, a, n, seed)`` and simulates samples
``0 .. n-1`` of ``seed``; passing ``records=`` instead reuses an existing
:class:`~girsanov_grad.simulate.RecordBatch`, so several estimators can
share one set of paths (common random numbers).

Two derivative conventions are available through ``formula``:

``"paper"``
    ``(phi + lam (M^2/2 + M)) m_k`` for the gradient and
    ``(phi + lam (M^2/2 + 2M + 1)) m_k m_l`` for the Hessian, with
    ``M = a.m``.

``"exact"``
    The exact first and second derivatives, at ``a``, of the
    self-normalised Girsanov reweighting of the record set::

        R(a') = sum_i S_i(a') W_i(a' - a) / sum_i W_i(a' - a)
        S(a') = phi + lam/2 a'.G.a',  W(w) = exp(w.m - w.G.w / 2)

    which is a smooth function of ``a'`` equal to the sample mean of ``S`` at
    ``a' = a``.  Written with sample covariances (``1/n`` normalisation)::

        grad_k  = Cov(S, m_k) + lam mean((G a)_k)
        hess_kl = Cov(S, m_k m_l - G_kl) + lam (Cov((G a)_k, m_l) + Cov((G a)_l, m_k))
                  + lam mean(G_kl) - (c_k mean(m_l) + c_l mean(m_k)),  c = Cov(S, m)

    In expectation these are the derivatives of ``Phi`` for the discretised
    dynamics (``E[m] = 0`` and ``E[m m^T - G] = 0`` act as baselines).

The two agree at ``a = 0`` for the gradient but differ in general; see the
README for a worked comparison on the Brownian-exit problem.
"""
from dataclasses import dataclass
import math
import warnings

import numpy as np

from .errors import (
    DegenerateControlError,
    DegenerateEstimateError,
    EstimatorUnusableError,
    InvalidInputError,
)
from .model import admissible_radius, check_coefficients, control_sup_bound
from .simulate import _LOG_MAX, log_exponential_martingale, simulate

FORMULAS = ("paper", "exact")


# -- result types -----------------------------------------------------------


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_samples: int
    censored_fraction: float = 0.0

    @classmethod
    def from_samples(cls, samples, censored_fraction=0.0):
        samples = np.asarray(samples, dtype=float)
        mean, se = _mean_se(samples)
        return cls(float(mean), float(se), int(samples.shape[0]), float(censored_fraction))

    def to_dict(self):
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "censored_fraction": self.censored_fraction,
        }


@dataclass(frozen=True)
class DerivativeEstimate:
    """Gradient (``order=1``) or Hessian (``order=2``) with per-entry errors."""

    order: int
    values: np.ndarray
    std_errors: np.ndarray
    n_samples: int
    censored_fraction: float = 0.0
    formula: str = "paper"

    def to_dict(self):
        return {
            "order": self.order,
            "formula": self.formula,
            "values": self.values.tolist(),
            "std_errors": self.std_errors.tolist(),
            "n_samples": self.n_samples,
            "censored_fraction": self.censored_fraction,
        }


@dataclass(frozen=True)
class KlEstimate:
    """Both forms of ``KL = E[<M^w, M^w>]/2 = E[(M^w)^2]/2``.

    ``mean`` and ``std_error`` refer to the covariation form.
    """

    covariation: McEstimate
    squared: McEstimate

    @property
    def mean(self):
        return self.covariation.mean

    @property
    def std_error(self):
        return self.covariation.std_error

    def discrepancy_z(self):
        """Difference of the two forms in units of their combined error."""
        se = math.hypot(self.covariation.std_error, self.squared.std_error)
        diff = self.covariation.mean - self.squared.mean
        if se == 0.0:
            return 0.0 if diff == 0.0 else math.inf
        return abs(diff) / se

    def to_dict(self):
        return {"covariation": self.covariation.to_dict(), "squared": self.squared.to_dict()}


# -- reductions ---------------------------------------------------------------


def _fsum_mean(x):
    """Compensated mean along axis 0; the result does not depend on chunking."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    flat = x.reshape(n, -1)
    out = np.array([math.fsum(flat[:, j]) for j in range(flat.shape[1])]) / n
    return out.reshape(x.shape[1:]) if x.ndim > 1 else float(out[0])


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise InvalidInputError("need at least two samples")
    mean = _fsum_mean(x)
    dev2 = (x - mean) ** 2
    var = _fsum_mean(dev2) * n / (n - 1)
    return mean, np.sqrt(var / n)


def _check_n(n):
    n = int(n)
    if n < 2:
        raise InvalidInputError("need n >= 2 samples")
    return n


def get_records(spec, a, n, seed, records=None, threads=None):
    """Simulate (or validate supplied) records and reject fully censored sets."""
    a = check_coefficients(spec, a)
    if records is None:
        records = simulate(spec, a, _check_n(n), seed, threads=threads)
    elif len(records) < 2:
        raise InvalidInputError("need at least two records")
    if not spec.fixed_horizon and bool(np.all(records.censored)):
        raise DegenerateEstimateError("every path was censored at t_max; raise t_max")
    return records


# -- per-path statistics -----------------------------------------------------


def phi_statistic(records, lam, a):
    """Per-path ``phi + lam/2 a.G.a``."""
    return records.phi + 0.5 * lam * records.control_covariation(a)


def gradient_samples(records, lam, a, formula="paper"):
    """``(n, n_basis)`` per-path terms whose column means give the gradient."""
    a = np.asarray(a, dtype=float)
    m = records.m
    if formula == "paper":
        big_m = m @ a
        weight = records.phi + lam * (0.5 * big_m * big_m + big_m)
        return weight[:, None] * m
    if formula == "exact":
        s = phi_statistic(records, lam, a)
        ga = records.gram @ a
        return (s - _fsum_mean(s))[:, None] * (m - _fsum_mean(m)) + lam * ga
    raise InvalidInputError(f"formula must be one of {FORMULAS}, got {formula!r}")


def hessian_samples(records, lam, a, formula="paper"):
    """``(n, n_basis, n_basis)`` per-path terms; each slice is symmetric."""
    a = np.asarray(a, dtype=float)
    m = records.m
    outer = m[:, :, None] * m[:, None, :]
    if formula == "paper":
        big_m = m @ a
        weight = records.phi + lam * (0.5 * big_m * big_m + 2.0 * big_m + 1.0)
        return weight[:, None, None] * outer
    if formula == "exact":
        gram = records.gram
        s = phi_statistic(records, lam, a)
        s_c = s - _fsum_mean(s)
        resid = outer - gram
        m_bar = _fsum_mean(m)
        m_c = m - m_bar
        ga = gram @ a
        cross = (ga - _fsum_mean(ga))[:, :, None] * m_c[:, None, :]
        c = np.atleast_1d(_fsum_mean(s_c[:, None] * m_c))
        shift = np.outer(c, m_bar)
        out = (s_c[:, None, None] * (resid - _fsum_mean(resid))
               + lam * (cross + np.swapaxes(cross, 1, 2)) + lam * gram - (shift + shift.T))
        return 0.5 * (out + np.swapaxes(out, 1, 2))
    raise InvalidInputError(f"formula must be one of {FORMULAS}, got {formula!r}")


def reweighted_objective(records, lam, a_anchor, a):
    """Self-normalised Girsanov estimate of ``Phi(a)`` from records simulated at ``a_anchor``.

    Equals the plain sample mean of ``phi + lam/2 a.G.a`` when
    ``a == a_anchor``; its derivatives there are the ``"exact"`` formulas.
    """
    a = np.asarray(a, dtype=float)
    logw = log_exponential_martingale(records.m, records.gram, a - np.asarray(a_anchor, float))
    if not np.all(np.isfinite(logw)):
        raise EstimatorUnusableError("non-finite likelihood weights")
    w = np.exp(logw - np.max(logw))
    s = phi_statistic(records, lam, a)
    return math.fsum(s * w) / math.fsum(w)


# -- estimators ---------------------------------------------------------------


def estimate_phi(spec, a, n=None, seed=0, records=None, threads=None):
    """``Phi(a) = E[phi_tau + lam/2 <M^{u^a}, M^{u^a}>_tau]``."""
    a = check_coefficients(spec, a)
    records = get_records(spec, a, n, seed, records, threads)
    return McEstimate.from_samples(phi_statistic(records, spec.lam, a),
                                   records.censored_fraction)


def _derivative(order, samples, records, formula):
    mean, se = _mean_se(samples)
    if order == 2:
        mean = 0.5 * (mean + mean.T)
        se = 0.5 * (se + se.T)
    return DerivativeEstimate(order, np.asarray(mean), np.asarray(se), len(records),
                              records.censored_fraction, formula)


def estimate_gradient(spec, a, n=None, seed=0, records=None, threads=None, formula="paper"):
    """Gradient of ``Phi`` in the coefficients; all entries share one record set."""
    a = check_coefficients(spec, a)
    records = get_records(spec, a, n, seed, records, threads)
    return _derivative(1, gradient_samples(records, spec.lam, a, formula), records, formula)


def estimate_hessian(spec, a, n=None, seed=0, records=None, threads=None, formula="paper"):
    """Hessian of ``Phi``; entry ``(k, l)`` and ``(l, k)`` come from one statistic."""
    a = check_coefficients(spec, a)
    records = get_records(spec, a, n, seed, records, threads)
    return _derivative(2, hessian_samples(records, spec.lam, a, formula), records, formula)


def nth_derivative_samples(records, a, directions, kind):
    a = np.asarray(a, dtype=float)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    if dirs.shape[1] != records.m.shape[1]:
        raise InvalidInputError("directions must have one entry per basis function")
    prod = np.prod(records.m @ dirs.T, axis=1)
    if kind == "plain":
        return records.phi * prod
    if kind == "entropy":
        k = dirs.shape[0]
        big_m = records.m @ a
        return (big_m * big_m + 2.0 * k * big_m + k * (k - 1)) * prod
    raise InvalidInputError(f"kind must be 'plain' or 'entropy', got {kind!r}")


def estimate_nth_derivative(spec, a, directions, kind="plain", n=None, seed=0,
                            records=None, threads=None):
    """Multilinear derivative along ``directions`` (one coefficient vector each).

    ``plain`` differentiates ``a -> E^a[phi]``; ``entropy`` differentiates
    ``a -> E^a[(M^{u^a})^2]``.
    """
    a = check_coefficients(spec, a)
    if len(directions) < 1:
        raise InvalidInputError("need at least one direction")
    records = get_records(spec, a, n, seed, records, threads)
    return McEstimate.from_samples(nth_derivative_samples(records, a, directions, kind),
                                   records.censored_fraction)


def _resolve_statistic(statistic, records):
    if statistic is None:
        return records.phi
    return np.asarray(statistic(records), dtype=float)


def reweighted_expectation(spec, a_sim, w, n=None, seed=0, records=None, threads=None,
                           statistic=None):
    """``E^{a_sim + w}[phi]`` estimated from paths simulated at ``a_sim``.

    ``statistic`` optionally maps a record batch to per-path values used in
    place of ``phi``.
    """
    a_sim = check_coefficients(spec, a_sim)
    w = check_coefficients(spec, w)
    radius = admissible_radius(spec.alpha, spec.lam)
    if control_sup_bound(spec, w) > radius:
        warnings.warn(
            f"reweighting control bound {control_sup_bound(spec, w):.4g} exceeds the "
            f"admissible radius {radius:.4g}; weights may have heavy tails",
            RuntimeWarning,
            stacklevel=2,
        )
    records = get_records(spec, a_sim, n, seed, records, threads)
    logw = log_exponential_martingale(records.m, records.gram, w)
    if not np.all(np.isfinite(logw)) or np.any(logw > _LOG_MAX):
        raise EstimatorUnusableError("likelihood weights overflow float64")
    values = _resolve_statistic(statistic, records) * np.exp(logw)
    return McEstimate.from_samples(values, records.censored_fraction)


def estimate_kl(spec, a, w, n=None, seed=0, records=None, threads=None):
    """Relative entropy of the path law at ``a`` against ``a + w``, both forms."""
    a = check_coefficients(spec, a)
    w = check_coefficients(spec, w)
    records = get_records(spec, a, n, seed, records, threads)
    cf = records.censored_fraction
    cov_form = McEstimate.from_samples(0.5 * records.control_covariation(w), cf)
    mw = records.control_martingale(w)
    sq_form = McEstimate.from_samples(0.5 * mw * mw, cf)
    return KlEstimate(cov_form, sq_form)


def estimate_free_energy(spec, lam=None, n=None, seed=0, records=None, threads=None):
    """``F(lam) = -lam log E^0[exp(-phi/lam)]`` with a delta-method error."""
    lam = spec.lam if lam is None else float(lam)
    if not lam > 0:
        raise InvalidInputError("lambda must be positive")
    records = get_records(spec, np.zeros(spec.n_basis), n, seed, records, threads)
    phi = records.phi
    if not np.all(np.isfinite(phi)):
        raise EstimatorUnusableError("non-finite path cost")
    shift = float(np.min(phi))
    y = np.exp(-(phi - shift) / lam)
    mean_y, se_y = _mean_se(y)
    if not mean_y > 0.0:
        raise EstimatorUnusableError("exponential moment underflows to zero")
    value = shift - lam * math.log(mean_y)
    se = lam * se_y / mean_y
    return McEstimate(float(value), float(se), len(records), records.censored_fraction)


# -- control variates ---------------------------------------------------------


def control_variate_beta(primary, control, control_mean):
    """Single control variate with the sample-optimal coefficient.

    Returns ``(beta, adjusted, reduction)`` where ``reduction = 1 - Corr^2``
    is the predicted variance ratio of the adjusted estimator.
    """
    primary = np.asarray(primary, dtype=float)
    control = np.asarray(control, dtype=float)
    if primary.shape != control.shape or primary.ndim != 1 or primary.size < 2:
        raise InvalidInputError("primary and control need equal 1-d length >= 2")
    pc = primary - _fsum_mean(primary)
    cc = control - _fsum_mean(control)
    var_c = _fsum_mean(cc * cc)
    if not var_c > 0.0:
        raise DegenerateControlError("control variate has zero variance")
    var_p = _fsum_mean(pc * pc)
    cov = _fsum_mean(pc * cc)
    beta = cov / var_c
    adjusted = primary + beta * (control_mean - control)
    corr2 = cov * cov / (var_c * var_p) if var_p > 0 else 0.0
    return float(beta), McEstimate.from_samples(adjusted), float(1.0 - corr2)


def optimal_cv_coefficients(m_samples, gradient):
    """Solve ``Cov(m) x = gradient`` for the best linear martingale variate."""
    m_samples = np.asarray(m_samples, dtype=float)
    gradient = np.atleast_1d(np.asarray(gradient, dtype=float))
    if m_samples.ndim != 2 or m_samples.shape[1] != gradient.size:
        raise InvalidInputError("m_samples must be (n_samples, n) matching the gradient")
    if m_samples.shape[0] < 2:
        raise InvalidInputError("need at least two samples")
    cov = np.atleast_2d(np.cov(m_samples, rowvar=False))
    k = cov.shape[0]
    cov = cov + (1e-10 * np.trace(cov) / k) * np.eye(k)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DegenerateControlError("martingale covariance is singular") from None
    if not np.all(np.isfinite(chol)) or np.min(np.diag(chol)) <= 0.0:
        raise DegenerateControlError("martingale covariance is singular")
    y = np.linalg.solve(chol, gradient)
    return np.linalg.solve(chol.T, y)


def cv_efficiency_gate(corr, cost_primary, cost_control):
    """True when a control variate pays for its own evaluation cost."""
    if not (cost_primary > 0 and cost_control > 0):
        raise InvalidInputError("costs must be positive")
    if not -1.0 <= corr <= 1.0:
        raise InvalidInputError("corr must lie in [-1, 1]")
    return bool(abs(corr) > math.sqrt(cost_control / (cost_primary + cost_control)))
