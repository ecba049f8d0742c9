"""Gradient descent and Newton iterations for ``min_a Phi(u^a; lam)``.

Both solvers work on the sample-average approximation: every iterate is
evaluated on samples ``0 .. n-1`` of one fixed seed, so the iteration is a
deterministic function of its inputs.

Line search.  Re-simulating at a trial point moves the exit step of a few
paths, which makes the fixed-seed objective rough on the scale of its own
noise; a line search on it stalls long before the gradient is small.  The
default ``line_search="girsanov"`` instead tests trial points on the
self-normalised Girsanov reweighting of the current iterate's records
(:func:`~girsanov_grad.estimate.reweighted_objective`).  That function is
smooth, equals the fixed-seed objective at the iterate, and has the
``"exact"`` gradient as its derivative there, so the Armijo test is
consistent with the search direction.  ``line_search="resimulate"``
re-simulates each trial point with the same seed.
"""
from dataclasses import dataclass, field
from enum import Enum
import csv
import json
import math

import numpy as np

from .errors import IndefiniteHessianError, InvalidInputError
from .estimate import (
    estimate_phi,
    get_records,
    gradient_samples,
    hessian_samples,
    reweighted_objective,
    _mean_se,
)
from .model import check_coefficients

ARMIJO_C = 1e-4
BACKTRACK = 0.5
MAX_HALVINGS = 40
JACKKNIFE_GROUPS = 20
_GOLDEN64 = 0x9E3779B97F4A7C15


class Termination(str, Enum):
    GRADIENT_TOLERANCE = "gradient_tolerance"
    MAX_ITERATIONS = "max_iterations"
    LINE_SEARCH_FAILURE = "line_search_failure"
    HESSIAN_INDEFINITE_FALLBACK = "hessian_indefinite_fallback"


@dataclass
class OptTrace:
    """Accepted iterates with their objective estimates and gradient norms.

    ``step_sizes[j]`` is the step taken from iterate ``j`` to ``j + 1``, so it
    has one entry fewer than ``iterates``.  ``ridged[j]`` marks Newton steps
    whose Hessian needed a diagonal shift.
    """

    method: str
    iterates: list = field(default_factory=list)
    phi_values: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    ridged: list = field(default_factory=list)
    model_values: list = field(default_factory=list)
    termination: Termination = Termination.MAX_ITERATIONS

    @property
    def final(self):
        return self.iterates[-1]

    @property
    def n_iterations(self):
        return len(self.iterates) - 1

    def rows(self):
        for j, a in enumerate(self.iterates):
            step = self.step_sizes[j] if j < len(self.step_sizes) else ""
            est = self.phi_values[j]
            yield [j, *map(float, a), est.mean, est.std_error, self.grad_norms[j], step]

    def to_csv(self, path):
        nb = len(self.iterates[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", *[f"a{k}" for k in range(nb)], "phi_mean", "phi_se",
                        "grad_norm", "step"])
            for row in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    def to_dict(self):
        return {
            "method": self.method,
            "termination": self.termination.value,
            "iterates": [list(map(float, a)) for a in self.iterates],
            "phi_values": [e.to_dict() for e in self.phi_values],
            "grad_norms": list(map(float, self.grad_norms)),
            "step_sizes": list(map(float, self.step_sizes)),
            "ridged": list(map(bool, self.ridged)),
            "model_values": list(map(float, self.model_values)),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _iteration_seed(seed, j, fresh):
    return (int(seed) + j * _GOLDEN64) % 2**64 if fresh else int(seed)


LINE_SEARCHES = ("girsanov", "resimulate")


def _evaluate(spec, a, n, seed, formula, threads, hessian=False):
    records = get_records(spec, a, n, seed, threads=threads)
    phi = estimate_phi(spec, a, records=records)
    grad = _mean_se(gradient_samples(records, spec.lam, a, formula))[0]
    hess = None
    if hessian:
        hess = _mean_se(hessian_samples(records, spec.lam, a, formula))[0]
        hess = 0.5 * (hess + hess.T)
    return records, phi, np.atleast_1d(grad), hess


def _trial_value(spec, records, a, cand, n, seed, line_search, threads):
    if line_search == "girsanov":
        return reweighted_objective(records, spec.lam, a, cand)
    return estimate_phi(spec, cand, n, seed, threads=threads).mean


def _check_line_search(line_search):
    if line_search not in LINE_SEARCHES:
        raise InvalidInputError(f"line_search must be one of {LINE_SEARCHES}")


def gradient_descent(spec, a0, n_samples, seed, max_iter=100, grad_tol=1e-3,
                     formula="exact", h0=1.0, fresh_samples=False, threads=None,
                     line_search="girsanov"):
    """Armijo-backtracked steepest descent on the fixed-seed objective.

    Each iteration tries ``h0, h0/2, ...`` until
    ``Phi(a - h g) <= Phi(a) - 1e-4 h |g|^2``; after 40 halvings the run stops
    with ``line_search_failure``.  ``trace.model_values[j]`` is the accepted
    trial value, so ``model_values[j] < phi_values[j].mean`` for every step.
    ``fresh_samples`` draws a new seed per iteration (stochastic
    approximation, no descent guarantee).
    """
    a = check_coefficients(spec, a0).copy()
    if not grad_tol > 0:
        raise InvalidInputError("grad_tol must be positive")
    _check_line_search(line_search)
    trace = OptTrace("gd")
    cur_seed = _iteration_seed(seed, 0, fresh_samples)
    records, phi, g, _ = _evaluate(spec, a, n_samples, cur_seed, formula, threads)
    trace.iterates.append(a.copy())
    trace.phi_values.append(phi)
    trace.grad_norms.append(float(np.linalg.norm(g)))
    for j in range(max_iter + 1):
        gnorm2 = float(g @ g)
        if math.sqrt(gnorm2) <= grad_tol:
            trace.termination = Termination.GRADIENT_TOLERANCE
            return trace
        if j == max_iter:
            trace.termination = Termination.MAX_ITERATIONS
            return trace
        h = h0
        for _ in range(MAX_HALVINGS + 1):
            cand = a - h * g
            value = _trial_value(spec, records, a, cand, n_samples, cur_seed, line_search,
                                 threads)
            if value <= phi.mean - ARMIJO_C * h * gnorm2:
                break
            h *= BACKTRACK
        else:
            trace.termination = Termination.LINE_SEARCH_FAILURE
            return trace
        a = cand
        cur_seed = _iteration_seed(seed, j + 1, fresh_samples)
        records, phi, g, _ = _evaluate(spec, a, n_samples, cur_seed, formula, threads)
        trace.iterates.append(a.copy())
        trace.phi_values.append(phi)
        trace.grad_norms.append(float(np.linalg.norm(g)))
        trace.step_sizes.append(h)
        trace.model_values.append(value)
    return trace


def default_ridge_floor(hess):
    return 1e-8 * (1.0 + float(np.linalg.norm(hess, 2)))


def solve_newton_system(grad, hess, ridge_floor=None):
    """Solve ``J s = grad`` after shifting ``J`` up to ``ridge_floor`` if needed.

    Returns ``(step, ridged, eigenvalues)`` where ``eigenvalues`` are those
    of the unshifted matrix.
    """
    grad = np.atleast_1d(np.asarray(grad, dtype=float))
    hess = np.atleast_2d(np.asarray(hess, dtype=float))
    hess = 0.5 * (hess + hess.T)
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
        raise IndefiniteHessianError("non-finite gradient or Hessian estimate")
    floor = default_ridge_floor(hess) if ridge_floor is None else float(ridge_floor)
    eig = np.linalg.eigvalsh(hess)
    ridged = bool(eig[0] < floor)
    if ridged:
        hess = hess + (floor - eig[0]) * np.eye(hess.shape[0])
    try:
        step = np.linalg.solve(hess, grad)
    except np.linalg.LinAlgError:
        raise IndefiniteHessianError(f"Newton system is singular; eigenvalues {eig}", eig) from None
    if not np.all(np.isfinite(step)):
        raise IndefiniteHessianError(f"Newton step is not finite; eigenvalues {eig}", eig)
    return step, ridged, eig


@dataclass(frozen=True)
class NewtonStepInfo:
    gradient: np.ndarray
    hessian: np.ndarray
    eigenvalues: np.ndarray
    ridged: bool
    phi: object


def newton_step(spec, a, n_samples, seed, ridge_floor=None, formula="exact", threads=None,
                return_info=False):
    """One Newton update ``a - J^{-1} grad`` on shared records."""
    a = check_coefficients(spec, a)
    _, phi, g, hess = _evaluate(spec, a, n_samples, seed, formula, threads, hessian=True)
    step, ridged, eig = solve_newton_system(g, hess, ridge_floor)
    new_a = a - step
    if return_info:
        return new_a, NewtonStepInfo(g, hess, eig, ridged, phi)
    return new_a


def newton(spec, a0, n_samples, seed, max_iter=20, grad_tol=1e-3, ridge_floor=None,
           formula="exact", threads=None, line_search="girsanov"):
    """Full Newton steps on the fixed-seed objective.

    When the Hessian estimate needs a ridge shift and the shifted step does
    not lower the objective (judged as in the line search of
    :func:`gradient_descent`), the run stops with
    ``hessian_indefinite_fallback``.
    """
    a = check_coefficients(spec, a0).copy()
    if not grad_tol > 0:
        raise InvalidInputError("grad_tol must be positive")
    _check_line_search(line_search)
    trace = OptTrace("newton")
    for j in range(max_iter + 1):
        records, phi, g, hess = _evaluate(spec, a, n_samples, seed, formula, threads,
                                          hessian=True)
        trace.iterates.append(a.copy())
        trace.phi_values.append(phi)
        trace.grad_norms.append(float(np.linalg.norm(g)))
        if trace.grad_norms[-1] <= grad_tol:
            trace.termination = Termination.GRADIENT_TOLERANCE
            return trace
        if j == max_iter:
            break
        step, ridged, _ = solve_newton_system(g, hess, ridge_floor)
        cand = a - step
        value = _trial_value(spec, records, a, cand, n_samples, seed, line_search, threads)
        if ridged and not value < phi.mean:
            trace.termination = Termination.HESSIAN_INDEFINITE_FALLBACK
            return trace
        trace.ridged.append(ridged)
        trace.step_sizes.append(1.0)
        trace.model_values.append(value)
        a = cand
    trace.termination = Termination.MAX_ITERATIONS
    return trace


def _min_eig(h):
    if h.shape == (1, 1):
        return float(h[0, 0])
    return float(np.linalg.eigvalsh(0.5 * (h + h.T))[0])


def check_convexity(spec, a, n_samples, seed, formula="exact", records=None, threads=None,
                    groups=JACKKNIFE_GROUPS):
    """Smallest Hessian eigenvalue with a grouped jackknife standard error."""
    a = check_coefficients(spec, a)
    records = get_records(spec, a, n_samples, seed, records, threads)
    samples = hessian_samples(records, spec.lam, a, formula)
    n = samples.shape[0]
    full = _min_eig(_mean_se(samples)[0])
    groups = max(2, min(int(groups), n))
    bounds = np.linspace(0, n, groups + 1).astype(int)
    total = samples.sum(axis=0)
    loo = np.empty(groups)
    for g in range(groups):
        part = samples[bounds[g]:bounds[g + 1]]
        loo[g] = _min_eig((total - part.sum(axis=0)) / (n - part.shape[0]))
    se = math.sqrt((groups - 1) / groups * float(np.sum((loo - loo.mean()) ** 2)))
    return full, se
