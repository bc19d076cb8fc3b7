"""Loop kernels compiled with numba.

Every function here has a vectorized twin in ``_vectorized`` with the same
signature and the same search order, so both backends pick the same optimum.
"""
import math

import numpy as np

from ._accel import njit

EXPONENTIAL, NORMAL, LOGISTIC, LOMAX = 0, 1, 2, 3
_SQRT2 = math.sqrt(2.0)


# --------------------------------------------------------------------------
# exponential smoothing
# --------------------------------------------------------------------------

@njit
def ses_sse(x, alpha):
    level = x[0]
    sse = 0.0
    for k in range(1, x.shape[0]):
        e = x[k] - level
        sse += e * e
        level = alpha * x[k] + (1.0 - alpha) * level
    return sse


@njit
def ses_forecast(x, alpha):
    level = x[0]
    for k in range(1, x.shape[0]):
        level = alpha * x[k] + (1.0 - alpha) * level
    return level


@njit
def hw_sse(x, alpha, beta):
    level = x[1]
    trend = x[1] - x[0]
    sse = 0.0
    for k in range(2, x.shape[0]):
        f = level + trend
        e = x[k] - f
        sse += e * e
        new_level = alpha * x[k] + (1.0 - alpha) * f
        trend = beta * (new_level - level) + (1.0 - beta) * trend
        level = new_level
    return sse


@njit
def hw_forecast(x, alpha, beta):
    level = x[1]
    trend = x[1] - x[0]
    for k in range(2, x.shape[0]):
        f = level + trend
        new_level = alpha * x[k] + (1.0 - alpha) * f
        trend = beta * (new_level - level) + (1.0 - beta) * trend
        level = new_level
    return level + trend


@njit
def _golden(x, lo, hi, iters):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc = ses_sse(x, c)
    fd = ses_sse(x, d)
    for _ in range(iters):
        if fc <= fd:
            hi = d
            d = c
            fd = fc
            c = hi - invphi * (hi - lo)
            fc = ses_sse(x, c)
        else:
            lo = c
            c = d
            fc = fd
            d = lo + invphi * (hi - lo)
            fd = ses_sse(x, d)
    if fc <= fd:
        return c, fc
    return d, fd


@njit
def ses_fit(x, step, tol, n_refine):
    """Grid scan over alpha then golden-section refinement of the best cells."""
    ngrid = int(round(1.0 / step)) + 1
    grid = np.empty(ngrid)
    for g in range(ngrid):
        grid[g] = ses_sse(x, min(g * step, 1.0))
    best_a = 0.0
    best = grid[0]
    for g in range(1, ngrid):
        if grid[g] < best - tol:
            best = grid[g]
            best_a = min(g * step, 1.0)
    # local minima, ascending by value then index
    cand = np.empty(ngrid, dtype=np.int64)
    nc = 0
    for g in range(ngrid):
        left = grid[g - 1] if g > 0 else np.inf
        right = grid[g + 1] if g < ngrid - 1 else np.inf
        if grid[g] <= left and grid[g] <= right:
            cand[nc] = g
            nc += 1
    order = np.argsort(grid[cand[:nc]], kind="mergesort")
    for r in range(min(n_refine, nc)):
        g = cand[order[r]]
        a0 = min(g * step, 1.0)
        lo = max(a0 - step, 0.0)
        hi = min(a0 + step, 1.0)
        a, f = _golden(x, lo, hi, 60)
        if f < best - tol:
            best = f
            best_a = a
    return best_a, best


@njit
def hw_fit(x, step, tol, n_refine, min_step):
    """Grid scan over (alpha, beta) then compass refinement of the best cells."""
    ngrid = int(round(1.0 / step)) + 1
    grid = np.empty((ngrid, ngrid))
    for ga in range(ngrid):
        for gb in range(ngrid):
            grid[ga, gb] = hw_sse(x, min(ga * step, 1.0), min(gb * step, 1.0))
    best_a = 0.0
    best_b = 0.0
    best = grid[0, 0]
    for ga in range(ngrid):
        for gb in range(ngrid):
            if grid[ga, gb] < best - tol:
                best = grid[ga, gb]
                best_a = min(ga * step, 1.0)
                best_b = min(gb * step, 1.0)
    flat = grid.ravel()
    cand = np.empty(ngrid * ngrid, dtype=np.int64)
    nc = 0
    for ga in range(ngrid):
        for gb in range(ngrid):
            v = grid[ga, gb]
            ok = True
            if ga > 0 and grid[ga - 1, gb] < v:
                ok = False
            if ga < ngrid - 1 and grid[ga + 1, gb] < v:
                ok = False
            if gb > 0 and grid[ga, gb - 1] < v:
                ok = False
            if gb < ngrid - 1 and grid[ga, gb + 1] < v:
                ok = False
            if ok:
                cand[nc] = ga * ngrid + gb
                nc += 1
    order = np.argsort(flat[cand[:nc]], kind="mergesort")
    for r in range(min(n_refine, nc)):
        idx = cand[order[r]]
        pa = min((idx // ngrid) * step, 1.0)
        pb = min((idx % ngrid) * step, 1.0)
        f = flat[idx]
        s = step / 2.0
        while s > min_step:
            moved = False
            for d in range(4):
                na = pa
                nb = pb
                if d == 0:
                    na = min(pa + s, 1.0)
                elif d == 1:
                    na = max(pa - s, 0.0)
                elif d == 2:
                    nb = min(pb + s, 1.0)
                else:
                    nb = max(pb - s, 0.0)
                if na == pa and nb == pb:
                    continue
                fn = hw_sse(x, na, nb)
                if fn < f:
                    pa = na
                    pb = nb
                    f = fn
                    moved = True
                    break
            if not moved:
                s *= 0.5
        if f < best - tol:
            best = f
            best_a = pa
            best_b = pb
    return best_a, best_b, best


# --------------------------------------------------------------------------
# error distributions
# --------------------------------------------------------------------------

@njit
def base_cdf(fam, p0, p1, x):
    if fam == EXPONENTIAL:
        if x <= 0.0:
            return 0.0
        return -math.expm1(-p0 * x)
    if fam == NORMAL:
        return 0.5 * math.erfc(-(x - p0) / (p1 * _SQRT2))
    if fam == LOGISTIC:
        z = (x - p0) / p1
        if z >= 0.0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)
    # lomax
    if x <= 0.0:
        return 0.0
    return -math.expm1(-p1 * math.log1p(x / p0))


@njit
def base_sf(fam, p0, p1, x):
    if fam == EXPONENTIAL:
        if x <= 0.0:
            return 1.0
        return math.exp(-p0 * x)
    if fam == NORMAL:
        return 0.5 * math.erfc((x - p0) / (p1 * _SQRT2))
    if fam == LOGISTIC:
        z = (x - p0) / p1
        if z <= 0.0:
            return 1.0 / (1.0 + math.exp(z))
        e = math.exp(-z)
        return e / (1.0 + e)
    if x <= 0.0:
        return 1.0
    return math.exp(-p1 * math.log1p(x / p0))


@njit
def mass_between(fam, p0, p1, lo, hi):
    """P(lo < X <= hi), using the survival form in the upper tail."""
    if hi <= lo:
        return 0.0
    if base_cdf(fam, p0, p1, lo) > 0.5:
        return base_sf(fam, p0, p1, lo) - base_sf(fam, p0, p1, hi)
    return base_cdf(fam, p0, p1, hi) - base_cdf(fam, p0, p1, lo)


@njit
def trunc_cdf(fam, p0, p1, a, b, x):
    if x <= a:
        return 0.0
    if x >= b:
        return 1.0
    denom = mass_between(fam, p0, p1, a, b)
    if not denom > 0.0:
        return np.nan
    v = mass_between(fam, p0, p1, a, x) / denom
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


@njit
def theta_to_params(fam, t0, t1):
    if fam == EXPONENTIAL:
        return math.exp(t0), 0.0
    if fam == NORMAL or fam == LOGISTIC:
        return t0, math.exp(t1)
    return math.exp(t0), math.exp(t1)


@njit
def l2_loss(fam, t0, t1, a, b, grid, target, h):
    p0, p1 = theta_to_params(fam, t0, t1)
    denom = mass_between(fam, p0, p1, a, b)
    if not denom > 1e-300:
        return 1e300
    upper = base_cdf(fam, p0, p1, a) > 0.5
    ca = base_cdf(fam, p0, p1, a)
    sa = base_sf(fam, p0, p1, a)
    s = 0.0
    for g in range(grid.shape[0]):
        x = grid[g]
        if x <= a:
            v = 0.0
        elif x >= b:
            v = 1.0
        else:
            if upper:
                v = (sa - base_sf(fam, p0, p1, x)) / denom
            else:
                v = (base_cdf(fam, p0, p1, x) - ca) / denom
            if v > 1.0:
                v = 1.0
            elif v < 0.0:
                v = 0.0
        e = v - target[g]
        s += e * e
    return s * h


@njit
def _nm_order(f, order, n):
    for a in range(n + 1):
        order[a] = a
    for a in range(1, n + 1):
        k = order[a]
        b = a - 1
        while b >= 0 and f[order[b]] > f[k]:
            order[b + 1] = order[b]
            b -= 1
        order[b + 1] = k


@njit
def fit_search(fam, theta0, step0, a, b, grid, target, h, lo, hi, min_step, max_iter):
    """Bounded Nelder-Mead search in transformed parameter space.

    Trial points are clipped to [lo, hi]. Stops when the simplex is smaller
    than ``min_step`` in every coordinate or after ``max_iter`` iterations.
    Returns (theta, loss).
    """
    n = 1 if fam == EXPONENTIAL else 2
    sx = np.zeros((3, 2))
    f = np.zeros(3)
    order = np.zeros(3, dtype=np.int64)
    for v in range(n + 1):
        for d in range(2):
            sx[v, d] = theta0[d]
        if v > 0:
            d = v - 1
            up = theta0[d] + step0
            sx[v, d] = up if up <= hi[d] else theta0[d] - step0
        for d in range(n):
            sx[v, d] = min(max(sx[v, d], lo[d]), hi[d])
        f[v] = l2_loss(fam, sx[v, 0], sx[v, 1], a, b, grid, target, h)
    cen = np.zeros(2)
    xr = np.zeros(2)
    xe = np.zeros(2)
    xc = np.zeros(2)
    for it in range(max_iter):
        _nm_order(f, order, n)
        best, worst = order[0], order[n]
        size = 0.0
        for v in range(n + 1):
            for d in range(n):
                size = max(size, abs(sx[v, d] - sx[best, d]))
        if size < min_step:
            break
        for d in range(2):
            cen[d] = 0.0
        for v in range(n):
            for d in range(n):
                cen[d] += sx[order[v], d] / n
        for d in range(n):
            xr[d] = min(max(cen[d] + (cen[d] - sx[worst, d]), lo[d]), hi[d])
        fr = l2_loss(fam, xr[0], xr[1], a, b, grid, target, h)
        if fr < f[best]:
            for d in range(n):
                xe[d] = min(max(cen[d] + 2.0 * (cen[d] - sx[worst, d]), lo[d]), hi[d])
            fe = l2_loss(fam, xe[0], xe[1], a, b, grid, target, h)
            if fe < fr:
                for d in range(n):
                    sx[worst, d] = xe[d]
                f[worst] = fe
            else:
                for d in range(n):
                    sx[worst, d] = xr[d]
                f[worst] = fr
            continue
        if fr < f[order[n - 1]]:
            for d in range(n):
                sx[worst, d] = xr[d]
            f[worst] = fr
            continue
        if fr < f[worst]:
            for d in range(n):
                xc[d] = cen[d] + 0.5 * (xr[d] - cen[d])
        else:
            for d in range(n):
                xc[d] = cen[d] + 0.5 * (sx[worst, d] - cen[d])
        fc = l2_loss(fam, xc[0], xc[1], a, b, grid, target, h)
        if fc < min(fr, f[worst]):
            for d in range(n):
                sx[worst, d] = xc[d]
            f[worst] = fc
            continue
        for v in range(n + 1):
            if v == best:
                continue
            for d in range(n):
                sx[v, d] = sx[best, d] + 0.5 * (sx[v, d] - sx[best, d])
            f[v] = l2_loss(fam, sx[v, 0], sx[v, 1], a, b, grid, target, h)
    _nm_order(f, order, n)
    th = np.zeros(2)
    for d in range(2):
        th[d] = sx[order[0], d]
    return th, f[order[0]]


# --------------------------------------------------------------------------
# trajectory search
# --------------------------------------------------------------------------

@njit
def composed_cdf(row, x):
    """Signed-error CDF from a packed model row.

    row = [p_u, fam_u, u0, u1, ua, ub, fam_o, o0, o1, oa, ob]
    """
    pu = row[0]
    if x < 0.0:
        fu = trunc_cdf(int(row[1]), row[2], row[3], row[4], row[5], -x)
        return pu * (1.0 - fu)
    fo = trunc_cdf(int(row[6]), row[7], row[8], row[9], row[10], x)
    return pu + (1.0 - pu) * fo


@njit
def u_rb(p, alpha_rb):
    return (math.expm1(alpha_rb * p) - math.expm1(alpha_rb)) / (-math.expm1(alpha_rb))


@njit
def score_trajectories(sizes, q, prev, rho, dt, models, alpha_q, alpha_rb, mode):
    """Exhaustive depth-first search over all m**L trajectories.

    A subtree is pruned when an optimistic bound on its utility (best
    possible quality for the remaining segments and, in product mode, the
    rebuffering penalty already incurred by the prefix) falls below the
    incumbent; pruning is exact.
    Returns (choices, u, p_rb, u_rb, u_q, u_qf).
    """
    L, m = sizes.shape
    c = np.zeros(L, dtype=np.int64)
    cum = np.zeros(L)
    prod = np.zeros(L)
    ssum = np.zeros(L)
    sq = np.zeros(L)
    sqf = np.zeros(L)
    sw = np.zeros(L, dtype=np.int64)
    best_c = np.zeros(L, dtype=np.int64)
    best_u = -1.0
    best_sw = 0
    best_prb = 1.0
    best_urb = 0.0
    best_uq = 0.0
    best_uqf = 0.0
    d = 0
    c[0] = -1
    while d >= 0:
        c[d] += 1
        if c[d] >= m:
            d -= 1
            continue
        j = c[d]
        if d > 0:
            cum[d] = cum[d - 1] + sizes[d, j]
            pj = c[d - 1]
            p_prod = prod[d - 1]
            p_sum = ssum[d - 1]
            p_q = sq[d - 1]
            p_qf = sqf[d - 1]
            p_sw = sw[d - 1]
        else:
            cum[d] = sizes[d, j]
            pj = prev if prev >= 0 else j
            p_prod = 1.0
            p_sum = 0.0
            p_q = 0.0
            p_qf = 0.0
            p_sw = 0
        phi = composed_cdf(models[d], rho[d] * dt[d] / cum[d] - 1.0)
        prod[d] = p_prod * phi
        ssum[d] = p_sum + phi
        sq[d] = p_q + q[j]
        sqf[d] = p_qf + abs(q[j] - q[pj])
        sw[d] = p_sw + (1 if j != pj else 0)
        tol = 1e-12 * abs(best_u)
        if best_u > 0.0 and d < L - 1:
            # optimistic completion: top quality, no further switches
            qbound = alpha_q * (sq[d] + (L - 1 - d)) / L + (1.0 - alpha_q) * (1.0 - sqf[d] / L)
            rbound = u_rb(1.0 - prod[d], alpha_rb) if mode == 0 else 1.0
            if rbound * qbound < best_u - tol:
                continue
        if d < L - 1:
            d += 1
            c[d] = -1
            continue
        if mode == 0:
            prb = 1.0 - prod[d]
        else:
            prb = min(max(1.0 - ssum[d], 0.0), 1.0)
        urb = u_rb(prb, alpha_rb)
        uq = sq[d] / L
        uqf = 1.0 - sqf[d] / L
        u = urb * (alpha_q * uq + (1.0 - alpha_q) * uqf)
        better = False
        if u > best_u + tol:
            better = True
        elif u >= best_u - tol:
            if c[0] < best_c[0] or (c[0] == best_c[0] and sw[d] < best_sw):
                better = True
        if better:
            best_u = u
            best_sw = sw[d]
            best_prb = prb
            best_urb = urb
            best_uq = uq
            best_uqf = uqf
            for k in range(L):
                best_c[k] = c[k]
    return best_c, best_u, best_prb, best_urb, best_uq, best_uqf
