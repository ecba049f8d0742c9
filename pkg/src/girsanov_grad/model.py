"""Problem data for first-exit control problems.

A problem is an SDE ``dX = (g + u)(X) dt + f dB`` on an open axis-aligned box,
costs ``k_run`` / ``k_term``, a finite control basis ``b_1..b_n`` and the
regularisation weight ``lam``.  Coefficients come from small parametric
families so the simulation kernels can compile them; every family is also a
plain callable ``(t, x) -> value``.
"""
from dataclasses import dataclass, field, replace
import math

import numpy as np

from .errors import InvalidInputError

BASIS_CONSTANT = 0
BASIS_POLYNOMIAL = 1
BASIS_GAUSSIAN_BUMP = 2
_BASIS_KINDS = {
    "constant": BASIS_CONSTANT,
    "polynomial": BASIS_POLYNOMIAL,
    "gaussian_bump": BASIS_GAUSSIAN_BUMP,
}


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _polyval_rows(coef, x):
    # coef[i, p] multiplies x_i**p
    out = np.zeros(coef.shape[0])
    for i in range(coef.shape[0]):
        acc = 0.0
        for p in range(coef.shape[1] - 1, -1, -1):
            acc = acc * x[i] + coef[i, p]
        out[i] = acc
    return out


@dataclass(frozen=True)
class Box:
    """Open box ``prod_i (lo_i, hi_i)``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lo))
        hi = _frozen(np.atleast_1d(self.hi))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidInputError("box bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidInputError("box must be bounded")
        if np.any(lo >= hi):
            raise InvalidInputError("box needs lo < hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dimension(self):
        return self.lo.size

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > self.lo) and np.all(x < self.hi))


@dataclass(frozen=True)
class PolynomialDrift:
    """Separable polynomial drift ``g_i(x) = sum_p coef[i, p] * x_i**p``."""

    coef: np.ndarray

    def __post_init__(self):
        coef = _frozen(np.atleast_2d(self.coef))
        if not np.all(np.isfinite(coef)):
            raise InvalidInputError("drift coefficients must be finite")
        object.__setattr__(self, "coef", coef)

    @classmethod
    def from_potential(cls, potential):
        """Drift ``-V'`` for per-coordinate potentials ``V_i(x) = sum_p c[i, p] x**p``."""
        pot = np.atleast_2d(np.asarray(potential, dtype=float))
        deg = pot.shape[1]
        coef = np.zeros((pot.shape[0], max(deg - 1, 1)))
        for p in range(1, deg):
            coef[:, p - 1] = -p * pot[:, p]
        return cls(coef)

    def __call__(self, t, x):
        return _polyval_rows(self.coef, np.atleast_1d(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class ConstantDiffusion:
    matrix: np.ndarray

    def __post_init__(self):
        mat = _frozen(np.atleast_2d(self.matrix))
        if mat.shape[0] != mat.shape[1]:
            raise InvalidInputError("diffusion matrix must be square")
        if not np.all(np.isfinite(mat)):
            raise InvalidInputError("diffusion matrix must be finite")
        object.__setattr__(self, "matrix", mat)

    def __call__(self, t, x):
        return self.matrix


@dataclass(frozen=True)
class Cost:
    """``const + sum_i poly_i(x_i)`` plus optional face weights.

    ``lo_weight[i]`` is added when ``x_i <= lo_i`` of ``domain`` and
    ``hi_weight[i]`` when ``x_i >= hi_i``; this expresses exit-side
    indicators as terminal costs.
    """

    const: float = 0.0
    coef: np.ndarray = None
    lo_weight: np.ndarray = None
    hi_weight: np.ndarray = None

    def resolved(self, dim):
        coef = np.zeros((dim, 1)) if self.coef is None else np.atleast_2d(self.coef)
        lo_w = np.zeros(dim) if self.lo_weight is None else np.atleast_1d(self.lo_weight)
        hi_w = np.zeros(dim) if self.hi_weight is None else np.atleast_1d(self.hi_weight)
        if coef.shape[0] != dim or lo_w.size != dim or hi_w.size != dim:
            raise InvalidInputError("cost arrays do not match the dimension")
        return Cost(float(self.const), _frozen(coef), _frozen(lo_w), _frozen(hi_w))

    def evaluate(self, x, domain):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        c = self.resolved(x.size)
        val = c.const + _polyval_rows(c.coef, x).sum()
        val += np.sum(np.where(x <= domain.lo, c.lo_weight, 0.0))
        val += np.sum(np.where(x >= domain.hi, c.hi_weight, 0.0))
        return float(val)

    @property
    def is_zero(self):
        def _z(a):
            return a is None or not np.any(np.asarray(a))

        return self.const == 0.0 and _z(self.coef) and _z(self.lo_weight) and _z(self.hi_weight)


@dataclass(frozen=True)
class BasisFunction:
    """One control basis element ``b(x) = direction * s(x)``.

    ``s`` is 1 (``constant``), ``x[coord]**power`` (``polynomial``) or
    ``exp(-|x - center|^2 / (2 width^2))`` (``gaussian_bump``).
    ``sup_bound`` is the declared bound on ``|b|`` over the domain.
    """

    kind: str
    direction: np.ndarray
    sup_bound: float
    center: np.ndarray = None
    width: float = 1.0
    coord: int = 0
    power: int = 0

    def __post_init__(self):
        if self.kind not in _BASIS_KINDS:
            raise InvalidInputError(f"unknown basis family {self.kind!r}")
        direction = _frozen(np.atleast_1d(self.direction))
        center = _frozen(
            np.zeros_like(direction) if self.center is None else np.atleast_1d(self.center)
        )
        if center.shape != direction.shape:
            raise InvalidInputError("basis center and direction differ in length")
        if not math.isfinite(self.sup_bound) or self.sup_bound < 0:
            raise InvalidInputError("basis sup_bound must be finite and >= 0")
        if self.kind == "gaussian_bump" and not self.width > 0:
            raise InvalidInputError("gaussian_bump width must be positive")
        if self.power < 0:
            raise InvalidInputError("polynomial power must be >= 0")
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "center", center)

    @property
    def kind_code(self):
        return _BASIS_KINDS[self.kind]

    def scalar(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == "constant":
            return 1.0
        if self.kind == "polynomial":
            return float(x[self.coord] ** self.power)
        r2 = np.sum((x - self.center) ** 2)
        return float(np.exp(-r2 / (2.0 * self.width**2)))

    def __call__(self, t, x):
        return self.direction * self.scalar(x)

    @classmethod
    def constant(cls, direction):
        direction = np.atleast_1d(np.asarray(direction, dtype=float))
        return cls("constant", direction, float(np.linalg.norm(direction)))

    @classmethod
    def gaussian_bump(cls, direction, center, width):
        direction = np.atleast_1d(np.asarray(direction, dtype=float))
        return cls(
            "gaussian_bump",
            direction,
            float(np.linalg.norm(direction)),
            center=center,
            width=float(width),
        )

    @classmethod
    def polynomial(cls, direction, coord, power, domain):
        direction = np.atleast_1d(np.asarray(direction, dtype=float))
        reach = max(abs(domain.lo[coord]), abs(domain.hi[coord]))
        return cls(
            "polynomial",
            direction,
            float(np.linalg.norm(direction) * reach**power),
            coord=int(coord),
            power=int(power),
        )


@dataclass(frozen=True)
class ProblemSpec:
    """Full definition of a first-exit control problem.

    With ``fixed_horizon`` the stopping time is ``min(exit, t_max)`` and
    reaching ``t_max`` is a regular stop rather than censoring.
    """

    domain: Box
    drift: PolynomialDrift
    diffusion: ConstantDiffusion
    basis: tuple
    lam: float
    initial_state: np.ndarray
    dt: float
    t_max: float
    running_cost: Cost = field(default_factory=Cost)
    terminal_cost: Cost = field(default_factory=Cost)
    alpha: float = None
    bridge: bool = False
    fixed_horizon: bool = False
    name: str = "custom"

    def __post_init__(self):
        d = self.domain.dimension
        x0 = _frozen(np.atleast_1d(self.initial_state))
        object.__setattr__(self, "initial_state", x0)
        object.__setattr__(self, "basis", tuple(self.basis))
        object.__setattr__(self, "running_cost", self.running_cost.resolved(d))
        object.__setattr__(self, "terminal_cost", self.terminal_cost.resolved(d))
        if x0.size != d or self.drift.coef.shape[0] != d:
            raise InvalidInputError("initial state / drift do not match the domain dimension")
        if self.diffusion.matrix.shape != (d, d):
            raise InvalidInputError("diffusion must be a d x d matrix")
        if not self.domain.contains(x0):
            raise InvalidInputError("initial_state must lie strictly inside the domain")
        if len(self.basis) == 0:
            raise InvalidInputError("control basis must not be empty")
        for b in self.basis:
            if b.direction.size != d:
                raise InvalidInputError("basis direction does not match the dimension")
        if self.alpha is None:
            object.__setattr__(self, "alpha", default_alpha(self.diffusion.matrix))
        for name in ("alpha", "lam", "dt"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise InvalidInputError(f"{name} must be positive, got {val}")
        if not self.t_max >= self.dt:
            raise InvalidInputError("t_max must be >= dt")

    @property
    def dimension(self):
        return self.domain.dimension

    @property
    def n_basis(self):
        return len(self.basis)

    @property
    def max_steps(self):
        return max(1, int(round(self.t_max / self.dt)))

    @property
    def sup_bounds(self):
        return np.array([b.sup_bound for b in self.basis])

    def drift_at(self, t, x):
        return self.drift(t, x)

    def diffusion_at(self, t, x):
        return self.diffusion(t, x)

    def k_run(self, t, x):
        return self.running_cost.evaluate(x, self.domain)

    def k_term(self, t, x):
        return self.terminal_cost.evaluate(x, self.domain)

    def with_(self, **changes):
        return replace(self, **changes)


def check_coefficients(spec, a):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (spec.n_basis,):
        raise InvalidInputError(
            f"coefficient vector has length {a.size}, basis has {spec.n_basis}"
        )
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("coefficients must be finite")
    return a


def _psd_pinv_factor(f_matrix, rel_tol):
    f_matrix = np.atleast_2d(np.asarray(f_matrix, dtype=float))
    if not np.all(np.isfinite(f_matrix)):
        raise InvalidInputError("matrix has non-finite entries")
    if not 0.0 < rel_tol < 1.0:
        raise InvalidInputError("rel_tol must lie in (0, 1)")
    u, s, _ = np.linalg.svd(f_matrix)
    keep = s > rel_tol * s.max() if s.size and s.max() > 0 else np.zeros_like(s, bool)
    return u, s, keep


def pseudo_apply(f_matrix, y, rel_tol=1e-12):
    """Apply ``(f f^T)^+`` to ``y`` via the SVD of ``f``."""
    u, s, keep = _psd_pinv_factor(f_matrix, rel_tol)
    y = np.asarray(y, dtype=float)
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0) ** 2, 0.0)
    return u @ (inv * (u.T @ y))


def pinv(f_matrix, rel_tol=1e-12):
    """Moore-Penrose inverse of ``f`` with the same cutoff as :func:`pseudo_apply`."""
    f_matrix = np.atleast_2d(np.asarray(f_matrix, dtype=float))
    u, s, keep = _psd_pinv_factor(f_matrix, rel_tol)
    _, _, vt = np.linalg.svd(f_matrix)
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def default_alpha(f_matrix, rel_tol=1e-12):
    """Largest ``alpha`` with ``y.(ff^T)^+ y <= alpha^-2 |y|^2``: the smallest kept singular value."""
    _, s, keep = _psd_pinv_factor(f_matrix, rel_tol)
    if not np.any(keep):
        # (ff^T)^+ = 0; any alpha works
        return 1.0
    return float(s[keep].min())


def admissible_radius(alpha, lambda0):
    """Sup-norm radius of the ball of drift changes guaranteed admissible."""
    if not (alpha > 0 and lambda0 > 0):
        raise InvalidInputError("alpha and lambda0 must be positive")
    return math.sqrt(4.0 * lambda0 * alpha**2 * (1.0 - 1.0 / math.sqrt(2.0)) ** 2)


def integrability_exponent(alpha, lambda_u, v_norm):
    """Largest ``q`` with ``E(M^v)_tau in L^q`` guaranteed by the norm bound.

    Returns ``inf`` for ``v_norm == 0`` and ``1.0`` when no ``q > 1`` is
    guaranteed.
    """
    if not (alpha > 0 and lambda_u > 0) or v_norm < 0:
        raise InvalidInputError("alpha, lambda_u must be positive and v_norm >= 0")
    if v_norm == 0:
        return math.inf
    # ||v||^2 <= 4 lam alpha^2 (1 - 1/sqrt(p))^2, solved for p at equality
    ratio = v_norm / (2.0 * alpha * math.sqrt(lambda_u))
    if ratio >= 1.0:
        return 1.0
    p = 1.0 / (1.0 - ratio) ** 2
    return p / (p - 1.0)


def evaluate_control(spec, a, t, x):
    """``u^a(t, x) = sum_k a_k b_k(t, x)``."""
    a = check_coefficients(spec, a)
    out = np.zeros(spec.dimension)
    for ak, b in zip(a, spec.basis):
        out = out + ak * b(t, x)
    return out


def control_sup_bound(spec, a):
    """Upper bound on ``||u^a||_sup`` from the declared basis bounds."""
    a = check_coefficients(spec, a)
    return float(np.sum(np.abs(a) * spec.sup_bounds))


# -- builtin problems --------------------------------------------------------


def brownian_exit(b=1.0, lam=2.0, dt=1e-3, t_max=50.0, bridge=False, terminal_cost=None,
                  running_cost=None):
    """Exit of ``X^u_t = (u - 1) t + B_t`` from ``(-2, b)``; basis ``{1}``.

    The uncontrolled drift is -1 so that ``u = 1`` makes the path a standard
    Brownian motion.
    """
    domain = Box([-2.0], [float(b)])
    return ProblemSpec(
        domain=domain,
        drift=PolynomialDrift([[-1.0]]),
        diffusion=ConstantDiffusion([[1.0]]),
        basis=(BasisFunction.constant([1.0]),),
        lam=float(lam),
        initial_state=[0.0],
        dt=dt,
        t_max=t_max,
        running_cost=running_cost or Cost(),
        terminal_cost=terminal_cost or Cost(),
        alpha=1.0,
        bridge=bridge,
        name="brownian-exit",
    )


DOUBLE_WELL_POTENTIAL = (1.0, 0.0, -2.0, 0.0, 1.0)  # (x^2 - 1)^2
DOUBLE_WELL_CENTERS = (-1.5, -0.75, 0.0)


def double_well(lam=1.0, epsilon=1.0, dt=1e-2, t_max=50.0, bridge=False,
                potential=DOUBLE_WELL_POTENTIAL, domain=(-2.5, 0.5), x0=-1.0,
                centers=DOUBLE_WELL_CENTERS, width=0.5, running_cost=None,
                terminal_cost=None):
    """Escape from the left well of ``V`` with ``dX = (u - V'(X)) dt + sqrt(2 eps) dB``.

    Defaults: running cost 1 (mean exit time), no terminal cost, three
    Gaussian-bump controls.
    """
    box = Box([domain[0]], [domain[1]])
    sigma = math.sqrt(2.0 * epsilon)
    return ProblemSpec(
        domain=box,
        drift=PolynomialDrift.from_potential([list(potential)]),
        diffusion=ConstantDiffusion([[sigma]]),
        basis=tuple(BasisFunction.gaussian_bump([1.0], [c], width) for c in centers),
        lam=float(lam),
        initial_state=[x0],
        dt=dt,
        t_max=t_max,
        running_cost=running_cost or Cost(const=1.0),
        terminal_cost=terminal_cost or Cost(),
        alpha=sigma,
        bridge=bridge,
        name="double-well",
    )


def fixed_horizon(T=1.0, lam=1.0, dt=1e-2, c=None):
    """``dX = u dt + dB`` stopped at the deterministic time ``T``, zero path cost.

    The box is wide enough that exits before ``T`` are numerically impossible,
    so ``Phi(a) = lam * a^2 * T / 2`` exactly.
    """
    return ProblemSpec(
        domain=Box([-1e6], [1e6]),
        drift=PolynomialDrift([[0.0]]),
        diffusion=ConstantDiffusion([[1.0]]),
        basis=(BasisFunction.constant([1.0 if c is None else c]),),
        lam=float(lam),
        initial_state=[0.0],
        dt=dt,
        t_max=T,
        alpha=1.0,
        fixed_horizon=True,
        name="fixed-horizon",
    )


BUILTINS = {
    "brownian-exit": brownian_exit,
    "double-well": double_well,
    "fixed-horizon": fixed_horizon,
}


def builtin(name, **kwargs):
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown builtin problem {name!r}; choose from {sorted(BUILTINS)}"
        ) from None
    return factory(**kwargs)
