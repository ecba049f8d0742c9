"""Euler-Maruyama path kernels.

``simulate_range_numba`` walks one path at a time (compiled, nogil);
``simulate_range_numpy`` advances every path of the range in lockstep with
vectorised numpy.  Both consume identical Philox substreams, so they agree
to rounding.
"""
import numpy as np

from ._accel import njit
from .rng import _uniform_pair_impl, normal_pair, normal_pair_vec, uniform_pair

STATUS_OK = -1
# exp(-37.5) is below the smallest coin value 0.5 / 2**53, so no coin can hit
_COIN_CUTOFF = -37.5


@njit(cache=True, nogil=True)
def _poly_row(coef, i, xi):
    acc = 0.0
    for p in range(coef.shape[1] - 1, -1, -1):
        acc = acc * xi + coef[i, p]
    return acc


@njit(cache=True, nogil=True)
def _cost(const, coef, lo_w, hi_w, lo, hi, x):
    val = const
    for i in range(x.shape[0]):
        val += _poly_row(coef, i, x[i])
        if x[i] <= lo[i]:
            val += lo_w[i]
        if x[i] >= hi[i]:
            val += hi_w[i]
    return val


@njit(cache=True, nogil=True)
def _bridge_hit(seed, idx, i, d, c, x_prev, x_next, lo_c, hi_c, scale):
    """Bridge-corrected exit test for coordinate ``c``; returns 0 (none), 1 (lo), 2 (hi).

    ``scale`` is ``2 / (sigma_c^2 dt)``.
    """
    for side in range(2):
        bar = lo_c if side == 0 else hi_c
        expo = -((bar - x_prev) * (bar - x_next)) * scale
        if expo < _COIN_CUTOFF:
            continue
        slot = np.uint64((i * d + c) * 2 + side)
        u0, u1 = uniform_pair(seed, idx, slot >> np.uint64(1), True)
        coin = u0 if (slot & np.uint64(1)) == np.uint64(0) else u1
        if coin < np.exp(expo):
            return side + 1
    return 0


@njit(cache=True, nogil=True)
def simulate_range_numba(
    seed, start, stop, x0, dt, max_steps, lo, hi, fixed_horizon, bridge,
    drift_coef, fmat, fpinv, sigma2, a,
    b_kind, b_dir, b_center, b_width, b_coord, b_power,
    run_const, run_coef, term_const, term_coef, term_lo, term_hi,
    tau, n_steps, censored, exit_state, phi, m, gram, status,
):
    d = x0.shape[0]
    nb = a.shape[0]
    sqdt = np.sqrt(dt)
    x = np.empty(d)
    xn = np.empty(d)
    dB = np.empty(d)
    bvals = np.empty((nb, d))
    fb = np.empty((nb, d))
    mloc = np.empty(nb)
    gloc = np.empty((nb, nb))
    zero_w = np.zeros(d)
    for s in range(start, stop):
        out = s - start
        idx = np.uint64(s)
        for c in range(d):
            x[c] = x0[c]
        run = 0.0
        mloc[:] = 0.0
        gloc[:, :] = 0.0
        cached_block = np.uint64(0)
        z0 = 0.0
        z1 = 0.0
        have_block = False
        steps = 0
        cens = False
        stat = STATUS_OK
        for i in range(max_steps):
            # control basis at the left endpoint
            for k in range(nb):
                kind = b_kind[k]
                if kind == 0:
                    sv = 1.0
                elif kind == 1:
                    sv = x[b_coord[k]] ** b_power[k]
                else:
                    r2 = 0.0
                    for c in range(d):
                        diff = x[c] - b_center[k, c]
                        r2 += diff * diff
                    sv = np.exp(-r2 / (2.0 * b_width[k] * b_width[k]))
                for c in range(d):
                    bvals[k, c] = b_dir[k, c] * sv
            # normal j = i*d + c is lane j&1 of block j>>1
            for c in range(d):
                j = np.uint64(i * d + c)
                blk = j >> np.uint64(1)
                if not have_block or blk != cached_block:
                    z0, z1 = normal_pair(seed, idx, blk)
                    cached_block = blk
                    have_block = True
                if (j & np.uint64(1)) == np.uint64(0):
                    dB[c] = sqdt * z0
                else:
                    dB[c] = sqdt * z1
            # M^{b_k} += (f^+ b_k).dB ; <M^{b_k}, M^{b_l}> += (f^+ b_k).(f^+ b_l) dt
            for k in range(nb):
                acc = 0.0
                for r in range(d):
                    v = 0.0
                    for c in range(d):
                        v += fpinv[r, c] * bvals[k, c]
                    fb[k, r] = v
                    acc += v * dB[r]
                mloc[k] += acc
            for k in range(nb):
                for l in range(k, nb):
                    acc = 0.0
                    for r in range(d):
                        acc += fb[k, r] * fb[l, r]
                    gloc[k, l] += acc
            run += _cost(run_const, run_coef, zero_w, zero_w, lo, hi, x)
            bad = False
            for c in range(d):
                u = 0.0
                for k in range(nb):
                    u += a[k] * bvals[k, c]
                noise = 0.0
                for r in range(d):
                    noise += fmat[c, r] * dB[r]
                xn[c] = x[c] + (_poly_row(drift_coef, c, x[c]) + u) * dt + noise
                if not np.isfinite(xn[c]):
                    bad = True
            steps = i + 1
            if bad:
                stat = i
                break
            exited = False
            for c in range(d):
                if xn[c] <= lo[c] or xn[c] >= hi[c]:
                    exited = True
            if bridge and not exited:
                for c in range(d):
                    if sigma2[c] <= 0.0:
                        continue
                    side = _bridge_hit(seed, idx, i, d, c, x[c], xn[c], lo[c], hi[c],
                                       2.0 / (sigma2[c] * dt))
                    if side > 0:
                        xn[c] = lo[c] if side == 1 else hi[c]
                        exited = True
                        break
            for c in range(d):
                x[c] = xn[c]
            if exited:
                break
            if steps >= max_steps:
                cens = not fixed_horizon
                break
        for k in range(nb):
            m[out, k] = mloc[k]
            for l in range(k, nb):
                gram[out, k, l] = gloc[k, l] * dt
                gram[out, l, k] = gloc[k, l] * dt
        status[out] = stat
        n_steps[out] = steps
        tau[out] = steps * dt
        censored[out] = cens
        for c in range(d):
            exit_state[out, c] = x[c]
        phi[out] = run * dt + _cost(term_const, term_coef, term_lo, term_hi, lo, hi, x)


@njit(cache=True, nogil=True)
def simulate_range_numba_1d(
    seed, start, stop, x0, dt, max_steps, lo, hi, fixed_horizon, bridge,
    drift_coef, fmat, fpinv, sigma2, a,
    b_kind, b_dir, b_center, b_width, b_coord, b_power,
    run_const, run_coef, term_const, term_coef, term_lo, term_hi,
    tau, n_steps, censored, exit_state, phi, m, gram, status,
):
    """Scalar-state specialisation of :func:`simulate_range_numba` (same streams)."""
    nb = a.shape[0]
    sqdt = np.sqrt(dt)
    lo0 = lo[0]
    hi0 = hi[0]
    f00 = fmat[0, 0]
    fp00 = fpinv[0, 0]
    s2 = sigma2[0]
    scale = 2.0 / (s2 * dt) if s2 > 0.0 else 0.0
    fb = np.empty(nb)
    mloc = np.empty(nb)
    gloc = np.empty((nb, nb))
    xs = np.empty(1)
    for s in range(start, stop):
        out = s - start
        idx = np.uint64(s)
        x = x0[0]
        run = 0.0
        mloc[:] = 0.0
        gloc[:, :] = 0.0
        z1 = 0.0
        steps = 0
        cens = False
        stat = STATUS_OK
        for i in range(max_steps):
            u = 0.0
            for k in range(nb):
                kind = b_kind[k]
                if kind == 0:
                    sv = 1.0
                elif kind == 1:
                    sv = x ** b_power[k]
                else:
                    diff = x - b_center[k, 0]
                    sv = np.exp(-(diff * diff) / (2.0 * b_width[k] * b_width[k]))
                bk = b_dir[k, 0] * sv
                u += a[k] * bk
                fb[k] = fp00 * bk
            if i & 1 == 0:
                z0, z1 = normal_pair(seed, idx, np.uint64(i >> 1))
                dB = sqdt * z0
            else:
                dB = sqdt * z1
            for k in range(nb):
                mloc[k] += fb[k] * dB
                for l in range(k, nb):
                    gloc[k, l] += fb[k] * fb[l]
            run += run_const + _poly_row(run_coef, 0, x)
            xn = x + (_poly_row(drift_coef, 0, x) + u) * dt + f00 * dB
            steps = i + 1
            if not np.isfinite(xn):
                stat = i
                break
            exited = xn <= lo0 or xn >= hi0
            if bridge and not exited and s2 > 0.0:
                side = _bridge_hit(seed, idx, i, 1, 0, x, xn, lo0, hi0, scale)
                if side > 0:
                    xn = lo0 if side == 1 else hi0
                    exited = True
            x = xn
            if exited:
                break
            if steps >= max_steps:
                cens = not fixed_horizon
                break
        for k in range(nb):
            m[out, k] = mloc[k]
            for l in range(k, nb):
                gram[out, k, l] = gloc[k, l] * dt
                gram[out, l, k] = gloc[k, l] * dt
        status[out] = stat
        n_steps[out] = steps
        tau[out] = steps * dt
        censored[out] = cens
        exit_state[out, 0] = x
        xs[0] = x
        phi[out] = run * dt + _cost(term_const, term_coef, term_lo, term_hi, lo, hi, xs)


def _poly_rows_vec(coef, x):
    # x: (N, d) -> (N, d)
    out = np.zeros_like(x)
    for p in range(coef.shape[1] - 1, -1, -1):
        out = out * x + coef[:, p]
    return out


def _cost_vec(const, coef, lo_w, hi_w, lo, hi, x):
    val = const + _poly_rows_vec(coef, x).sum(axis=1)
    val = val + np.where(x <= lo, lo_w, 0.0).sum(axis=1)
    val = val + np.where(x >= hi, hi_w, 0.0).sum(axis=1)
    return val


def simulate_range_numpy(
    seed, start, stop, x0, dt, max_steps, lo, hi, fixed_horizon, bridge,
    drift_coef, fmat, fpinv, sigma2, a,
    b_kind, b_dir, b_center, b_width, b_coord, b_power,
    run_const, run_coef, term_const, term_coef, term_lo, term_hi,
    tau, n_steps, censored, exit_state, phi, m, gram, status,
):
    d = x0.shape[0]
    nb = a.shape[0]
    count = stop - start
    sqdt = np.sqrt(dt)
    zeros_d = np.zeros(d)
    x = np.tile(x0, (count, 1))
    run = np.zeros(count)
    m[:count] = 0.0
    gram[:count] = 0.0
    status[:count] = STATUS_OK
    n_steps[:count] = 0
    censored[:count] = False
    active = np.arange(count)
    seed = np.uint64(seed)
    for i in range(max_steps):
        if active.size == 0:
            break
        xa = x[active]
        idx = (active + start).astype(np.uint64)
        bvals = np.empty((active.size, nb, d))
        for k in range(nb):
            if b_kind[k] == 0:
                sv = np.ones(active.size)
            elif b_kind[k] == 1:
                sv = xa[:, b_coord[k]] ** b_power[k]
            else:
                r2 = np.zeros(active.size)
                for c in range(d):
                    diff = xa[:, c] - b_center[k, c]
                    r2 = r2 + diff * diff
                sv = np.exp(-r2 / (2.0 * b_width[k] * b_width[k]))
            bvals[:, k, :] = b_dir[k] * sv[:, None]
        dB = np.empty((active.size, d))
        for c in range(d):
            j = i * d + c
            blk = np.full(active.size, j >> 1, dtype=np.uint64)
            z0, z1 = normal_pair_vec(seed, idx, blk)
            dB[:, c] = sqdt * (z0 if j % 2 == 0 else z1)
        fb = np.einsum("rc,nkc->nkr", fpinv, bvals)
        m[active] += np.einsum("nkr,nr->nk", fb, dB)
        gram[active] += np.einsum("nkr,nlr->nkl", fb, fb)
        run[active] += _cost_vec(run_const, run_coef, zeros_d, zeros_d, lo, hi, xa)
        u = np.einsum("k,nkc->nc", a, bvals)
        noise = dB @ fmat.T
        xn = xa + (_poly_rows_vec(drift_coef, xa) + u) * dt + noise
        n_steps[active] = i + 1
        bad = ~np.all(np.isfinite(xn), axis=1)
        if np.any(bad):
            status[active[bad]] = i
        exited = np.any((xn <= lo) | (xn >= hi), axis=1) | bad
        if bridge:
            for c in range(d):
                if sigma2[c] <= 0.0:
                    continue
                for side in range(2):
                    bar = lo[c] if side == 0 else hi[c]
                    cand = ~exited
                    if not np.any(cand):
                        break
                    ci = np.nonzero(cand)[0]
                    expo = -((bar - xa[ci, c]) * (bar - xn[ci, c])) * (2.0 / (sigma2[c] * dt))
                    keep = expo >= _COIN_CUTOFF
                    ci = ci[keep]
                    expo = expo[keep]
                    if ci.size == 0:
                        continue
                    slot = (i * d + c) * 2 + side
                    u0, u1 = _uniform_pair_impl(
                        seed, idx[ci], np.full(ci.size, slot >> 1, dtype=np.uint64), True
                    )
                    coin = u0 if slot % 2 == 0 else u1
                    hit = ci[coin < np.exp(expo)]
                    xn[hit, c] = bar
                    exited[hit] = True
        x[active] = xn
        done = exited
        if i + 1 >= max_steps:
            if not fixed_horizon:
                censored[active[~exited]] = True
            done = np.ones_like(exited)
        active = active[~done]
    # gram is accumulated symmetric already
    gram[:count] *= dt
    tau[:count] = n_steps[:count] * dt
    exit_state[:count] = x
    phi[:count] = run * dt + _cost_vec(term_const, term_coef, term_lo, term_hi, lo, hi, x)
