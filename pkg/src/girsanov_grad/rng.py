"""Counter-based Gaussian streams (Philox4x32-10).

Every random number is a pure function of ``(seed, sample_index, counter)``,
so a trajectory's increments do not depend on how samples are split across
workers.  The same functions run on numpy ``uint64`` arrays (fallback path)
and on scalars inside numba kernels.

Counter layout for one block::

    word0, word1 = sample_index (low, high)
    word2, word3 = block index (low, high); bit 31 of word3 selects the
                   auxiliary (bridge coin) substream.

A block yields two 53-bit uniforms; normals come from the inverse CDF, so
normal ``j`` of a sample is a function of uniform ``j`` alone.
"""
from dataclasses import dataclass
import math

import numpy as np

from ._accel import njit

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_SHIFT32 = np.uint64(32)
_SHIFT5 = np.uint64(5)
_SHIFT6 = np.uint64(6)
_AUX_BIT = np.uint64(0x80000000)
_TWO_POW_26 = 67108864.0
_TWO_POW_53 = 9007199254740992.0


def _philox4x32_impl(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


philox4x32 = njit(_philox4x32_impl, cache=True, nogil=True)


def _uniform_pair_impl(seed, index, block, aux):
    """Two 53-bit uniforms on the open interval (0, 1) from one Philox block."""
    k0 = seed & _MASK32
    k1 = (seed >> _SHIFT32) & _MASK32
    c0 = index & _MASK32
    c1 = (index >> _SHIFT32) & _MASK32
    c2 = block & _MASK32
    c3 = (block >> _SHIFT32) & _MASK32
    if aux:
        c3 = c3 | _AUX_BIT
    r0, r1, r2, r3 = philox4x32(c0, c1, c2, c3, k0, k1)
    u0 = ((r0 >> _SHIFT5) * _TWO_POW_26 + (r1 >> _SHIFT6) + 0.5) / _TWO_POW_53
    u1 = ((r2 >> _SHIFT5) * _TWO_POW_26 + (r3 >> _SHIFT6) + 0.5) / _TWO_POW_53
    return u0, u1


uniform_pair = njit(_uniform_pair_impl, cache=True, nogil=True)


def _norm_ppf_impl(p):
    """Inverse standard normal CDF (algorithm AS241, PPND16); scalar only."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


norm_ppf = njit(_norm_ppf_impl, cache=True, nogil=True)


def norm_ppf_vec(p):
    """Array version of :func:`norm_ppf`; same rational approximations."""
    p = np.asarray(p, dtype=float)
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    qc = q[central]
    r = 0.180625 - qc * qc
    num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                + 67265.770927008700853) * r + 45921.953931549871457) * r
              + 13731.693765509461125) * r + 1971.5909503065514427) * r
            + 133.14166789178437745) * r + 3.387132872796366608)
    den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                + 39307.89580009271061) * r + 21213.794301586595867) * r
              + 5394.1960214247511077) * r + 687.1870074920579083) * r
            + 42.313330701600911252) * r + 1.0)
    out[central] = qc * num / den
    tail = ~central
    if np.any(tail):
        qt = q[tail]
        pt = p[tail]
        r = np.sqrt(-np.log(np.where(qt < 0.0, pt, 1.0 - pt)))
        near = r <= 5.0
        val = np.empty_like(r)
        rn = r[near] - 1.6
        num = (((((((7.7454501427834140764e-4 * rn + 0.0227238449892691845833) * rn
                    + 0.24178072517745061177) * rn + 1.27045825245236838258) * rn
                  + 3.64784832476320460504) * rn + 5.7694972214606914055) * rn
                + 4.6303378461565452959) * rn + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * rn + 5.475938084995344946e-4) * rn
                    + 0.0151986665636164571966) * rn + 0.14810397642748007459) * rn
                  + 0.68976733498510000455) * rn + 1.6763848301838038494) * rn
                + 2.05319162663775882187) * rn + 1.0)
        val[near] = num / den
        rf = r[~near] - 5.0
        num = (((((((2.01033439929228813265e-7 * rf + 2.71155556874348757815e-5) * rf
                    + 0.0012426609473880784386) * rf + 0.026532189526576123093) * rf
                  + 0.29656057182850489123) * rf + 1.7848265399172913358) * rf
                + 5.4637849111641143699) * rf + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * rf + 1.4215117583164458887e-7) * rf
                    + 1.8463183175100546818e-5) * rf + 7.868691311456132591e-4) * rf
                  + 0.0148753612908506148525) * rf + 0.13692988092273580531) * rf
                + 0.59983220655588793769) * rf + 1.0)
        val[~near] = num / den
        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def _normal_pair_impl(seed, index, block):
    """Normals ``2*block`` and ``2*block + 1`` of one sample's stream (scalar)."""
    u0, u1 = uniform_pair(seed, index, block, False)
    return norm_ppf(u0), norm_ppf(u1)


normal_pair = njit(_normal_pair_impl, cache=True, nogil=True)


def normal_pair_vec(seed, index, block):
    """Array version of :func:`normal_pair` for the numpy path."""
    u0, u1 = _uniform_pair_impl(seed, index, block, False)
    return norm_ppf_vec(u0), norm_ppf_vec(u1)


def _u64(x):
    return np.asarray(x, dtype=np.uint64)


def normals(seed, index, start, count):
    """Standard normals ``start .. start+count-1`` of one sample's stream.

    Normal ``j`` is lane ``j % 2`` of block ``j // 2``.
    """
    j = np.arange(start, start + count, dtype=np.uint64)
    blocks = j >> np.uint64(1)
    z0, z1 = normal_pair_vec(_u64(seed), _u64(index) + np.zeros_like(blocks), blocks)
    return np.where((j & np.uint64(1)) == 0, z0, z1)


def aux_uniform(seed, index, slot):
    """Auxiliary uniform number ``slot`` (bridge coins) of one sample."""
    slot = _u64(slot)
    u0, u1 = _uniform_pair_impl(
        _u64(seed), _u64(index) + np.zeros_like(slot), slot >> np.uint64(1), True
    )
    return np.where((slot & np.uint64(1)) == 0, u0, u1)


@dataclass(frozen=True)
class RngStream:
    """One trajectory's substream: ``(seed, sample_index)``."""

    seed: int
    sample_index: int

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if not 0 <= int(self.sample_index) < 2**64:
            raise ValueError("sample_index must fit in 64 unsigned bits")

    def normals(self, start, count):
        return normals(self.seed, self.sample_index, start, count)
