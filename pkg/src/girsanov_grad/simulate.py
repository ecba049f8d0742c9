"""Single-pass path simulation with first-exit detection.

Each trajectory records everything the estimators need: exit time, exit
state, the path cost ``phi``, the martingale values ``m[k] = M^{b_k}_tau``
and the covariation matrix ``gram[k, l] = <M^{b_k}, M^{b_l}>_tau``.  For a
coefficient vector ``a`` the control's own statistics follow by linearity:
``M^{u^a} = a.m`` and ``<M^{u^a}, M^{u^a}> = a.gram.a``.
"""
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass
import math

import numpy as np

from . import _accel
from ._kernels import simulate_range_numba, simulate_range_numba_1d, simulate_range_numpy
from .errors import EstimatorUnusableError, InvalidInputError, SimulationDivergedError
from .model import check_coefficients, pinv
from .rng import RngStream

CHUNK = 2048
_LOG_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class TrajectoryRecord:
    tau: float
    exit_state: np.ndarray
    censored: bool
    phi: float
    m: np.ndarray
    gram: np.ndarray
    n_steps: int


@dataclass(frozen=True)
class RecordBatch:
    """Columnar records for samples ``0 .. n-1`` of one seed."""

    tau: np.ndarray
    exit_state: np.ndarray
    censored: np.ndarray
    phi: np.ndarray
    m: np.ndarray
    gram: np.ndarray
    n_steps: np.ndarray
    seed: int = 0

    def __len__(self):
        return self.tau.shape[0]

    @property
    def censored_fraction(self):
        return float(np.mean(self.censored))

    def record(self, i):
        return TrajectoryRecord(
            tau=float(self.tau[i]),
            exit_state=self.exit_state[i].copy(),
            censored=bool(self.censored[i]),
            phi=float(self.phi[i]),
            m=self.m[i].copy(),
            gram=self.gram[i].copy(),
            n_steps=int(self.n_steps[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.record(i)

    def control_martingale(self, a):
        """Per-path ``M^{u^a}_tau = a.m``."""
        return self.m @ np.asarray(a, dtype=float)

    def control_covariation(self, a):
        """Per-path ``<M^{u^a}, M^{u^a}>_tau = a.gram.a``."""
        a = np.asarray(a, dtype=float)
        return np.einsum("k,nkl,l->n", a, self.gram, a)

    def with_phi(self, phi):
        return RecordBatch(self.tau, self.exit_state, self.censored, np.asarray(phi, float),
                           self.m, self.gram, self.n_steps, self.seed)


def _kernel_args(spec, a):
    fmat = np.ascontiguousarray(spec.diffusion.matrix)
    basis = spec.basis
    nb = len(basis)
    d = spec.dimension
    b_dir = np.array([b.direction for b in basis]).reshape(nb, d)
    b_center = np.array([b.center for b in basis]).reshape(nb, d)
    return (
        np.ascontiguousarray(spec.initial_state, dtype=float),
        float(spec.dt),
        int(spec.max_steps),
        np.ascontiguousarray(spec.domain.lo),
        np.ascontiguousarray(spec.domain.hi),
        bool(spec.fixed_horizon),
        bool(spec.bridge),
        np.ascontiguousarray(spec.drift.coef),
        fmat,
        np.ascontiguousarray(pinv(fmat)),
        np.ascontiguousarray(np.diag(fmat @ fmat.T)),
        np.ascontiguousarray(a, dtype=float),
        np.array([b.kind_code for b in basis], dtype=np.int64),
        np.ascontiguousarray(b_dir),
        np.ascontiguousarray(b_center),
        np.array([b.width for b in basis], dtype=float),
        np.array([b.coord for b in basis], dtype=np.int64),
        np.array([b.power for b in basis], dtype=np.int64),
        float(spec.running_cost.const),
        np.ascontiguousarray(spec.running_cost.coef),
        float(spec.terminal_cost.const),
        np.ascontiguousarray(spec.terminal_cost.coef),
        np.ascontiguousarray(spec.terminal_cost.lo_weight),
        np.ascontiguousarray(spec.terminal_cost.hi_weight),
    )


def simulate(spec, a, n, seed, threads=None, start=0, use_numba=None):
    """Simulate samples ``start .. start+n-1`` of ``seed`` under control ``u^a``.

    Work is split into fixed chunks of sample indices; every path depends
    only on ``(seed, index)``, so the result is independent of ``threads``.
    """
    a = check_coefficients(spec, a)
    n = int(n)
    if n < 1:
        raise InvalidInputError("need at least one sample")
    if not 0 <= int(seed) < 2**64:
        raise InvalidInputError("seed must fit in 64 unsigned bits")
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    if not use_numba:
        kernel = simulate_range_numpy
    elif spec.dimension == 1:
        kernel = simulate_range_numba_1d
    else:
        kernel = simulate_range_numba
    threads = _accel.default_threads() if threads is None else int(threads)
    if threads < 1:
        raise InvalidInputError("threads must be >= 1")

    d, nb = spec.dimension, spec.n_basis
    tau = np.empty(n)
    n_steps = np.empty(n, dtype=np.int64)
    censored = np.empty(n, dtype=np.bool_)
    exit_state = np.empty((n, d))
    phi = np.empty(n)
    m = np.empty((n, nb))
    gram = np.empty((n, nb, nb))
    status = np.empty(n, dtype=np.int64)
    args = _kernel_args(spec, a)
    seed_u = np.uint64(int(seed))

    def run(lo):
        hi = min(lo + CHUNK, n)
        sl = slice(lo, hi)
        kernel(seed_u, start + lo, start + hi, *args,
               tau[sl], n_steps[sl], censored[sl], exit_state[sl], phi[sl],
               m[sl], gram[sl], status[sl])

    offsets = range(0, n, CHUNK)
    if threads == 1 or n <= CHUNK:
        for lo in offsets:
            run(lo)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, offsets))
    bad = np.nonzero(status >= 0)[0]
    if bad.size:
        raise SimulationDivergedError(start + bad[0], status[bad[0]])
    return RecordBatch(tau, exit_state, censored, phi, m, gram, n_steps, int(seed))


def simulate_path(spec, a, stream, use_numba=None):
    """One trajectory for ``stream = RngStream(seed, sample_index)``."""
    if not isinstance(stream, RngStream):
        stream = RngStream(*stream)
    batch = simulate(spec, a, 1, stream.seed, threads=1, start=stream.sample_index,
                     use_numba=use_numba)
    return batch.record(0)


def log_exponential_martingale(m, gram, v):
    v = np.asarray(v, dtype=float)
    m = np.asarray(m, dtype=float)
    gram = np.asarray(gram, dtype=float)
    return m @ v - 0.5 * np.einsum("...kl,k,l->...", gram, v, v)


def exponential_martingale(rec, v):
    """``exp(v.m - v.gram.v / 2)`` for one record (or a batch)."""
    logw = log_exponential_martingale(rec.m, rec.gram, v)
    if np.any(logw > _LOG_MAX):
        raise EstimatorUnusableError("exponential martingale overflows float64")
    return np.exp(logw) if np.ndim(logw) else float(np.exp(logw))


def bridge_exit_probability(x0, x1, barrier, sigma, dt):
    """Chance that a Brownian bridge from ``x0`` to ``x1`` over ``dt`` touched ``barrier``."""
    if not (sigma > 0 and dt > 0):
        raise InvalidInputError("sigma and dt must be positive")
    prod = (barrier - x0) * (barrier - x1)
    if prod <= 0:
        return 1.0
    return math.exp(-2.0 * prod / (sigma * sigma * dt))


def dump_records_csv(records, path):
    """One row per record: tau, censored, phi, m_k..., gram upper triangle..."""
    nb = records.m.shape[1]
    iu = np.triu_indices(nb)
    header = ["tau", "censored", "phi", "n_steps"]
    header += [f"m{k}" for k in range(nb)]
    header += [f"gram{k}_{l}" for k, l in zip(*iu)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(records)):
            row = [repr(float(records.tau[i])), int(records.censored[i]),
                   repr(float(records.phi[i])), int(records.n_steps[i])]
            row += [repr(float(v)) for v in records.m[i]]
            row += [repr(float(v)) for v in records.gram[i][iu]]
            w.writerow(row)
