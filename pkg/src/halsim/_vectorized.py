"""Vectorized numpy implementations mirroring ``_loops``.

Used when numba is disabled. Search orders match the loop kernels, so both
backends return the same optimum up to floating-point noise.
"""
import numpy as np
from scipy import special

EXPONENTIAL, NORMAL, LOGISTIC, LOMAX = 0, 1, 2, 3
_SQRT2 = np.sqrt(2.0)


# --------------------------------------------------------------------------
# exponential smoothing
# --------------------------------------------------------------------------

def ses_sse_many(x, alphas):
    alphas = np.asarray(alphas, dtype=float)
    level = np.full(alphas.shape, x[0])
    sse = np.zeros(alphas.shape)
    for k in range(1, len(x)):
        e = x[k] - level
        sse += e * e
        level = alphas * x[k] + (1.0 - alphas) * level
    return sse


def ses_sse(x, alpha):
    return float(ses_sse_many(x, np.array([alpha]))[0])


def ses_forecast(x, alpha):
    level = x[0]
    for k in range(1, len(x)):
        level = alpha * x[k] + (1.0 - alpha) * level
    return level


def hw_sse_many(x, alphas, betas):
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    level = np.full(alphas.shape, x[1])
    trend = np.full(alphas.shape, x[1] - x[0])
    sse = np.zeros(alphas.shape)
    for k in range(2, len(x)):
        f = level + trend
        e = x[k] - f
        sse += e * e
        new_level = alphas * x[k] + (1.0 - alphas) * f
        trend = betas * (new_level - level) + (1.0 - betas) * trend
        level = new_level
    return sse


def hw_sse(x, alpha, beta):
    return float(hw_sse_many(x, np.array([alpha]), np.array([beta]))[0])


def hw_forecast(x, alpha, beta):
    level = x[1]
    trend = x[1] - x[0]
    for k in range(2, len(x)):
        f = level + trend
        new_level = alpha * x[k] + (1.0 - alpha) * f
        trend = beta * (new_level - level) + (1.0 - beta) * trend
        level = new_level
    return level + trend


def _first_below(values, threshold):
    """Index of the first value strictly below ``threshold`` or -1."""
    hits = np.flatnonzero(values < threshold)
    return int(hits[0]) if hits.size else -1


def _golden(x, lo, hi, iters):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc = ses_sse(x, c)
    fd = ses_sse(x, d)
    for _ in range(iters):
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = ses_sse(x, c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = ses_sse(x, d)
    return (c, fc) if fc <= fd else (d, fd)


def ses_fit(x, step, tol, n_refine):
    ngrid = int(round(1.0 / step)) + 1
    alphas = np.minimum(np.arange(ngrid) * step, 1.0)
    grid = ses_sse_many(x, alphas)
    best_a, best = 0.0, grid[0]
    for g in range(1, ngrid):
        if grid[g] < best - tol:
            best, best_a = grid[g], alphas[g]
    left = np.concatenate(([np.inf], grid[:-1]))
    right = np.concatenate((grid[1:], [np.inf]))
    cand = np.flatnonzero((grid <= left) & (grid <= right))
    cand = cand[np.argsort(grid[cand], kind="mergesort")]
    for g in cand[:n_refine]:
        a0 = alphas[g]
        a, f = _golden(x, max(a0 - step, 0.0), min(a0 + step, 1.0), 60)
        if f < best - tol:
            best, best_a = f, a
    return float(best_a), float(best)


def hw_fit(x, step, tol, n_refine, min_step):
    ngrid = int(round(1.0 / step)) + 1
    axis = np.minimum(np.arange(ngrid) * step, 1.0)
    aa, bb = np.meshgrid(axis, axis, indexing="ij")
    grid = hw_sse_many(x, aa.ravel(), bb.ravel()).reshape(ngrid, ngrid)
    flat = grid.ravel()
    best_a, best_b, best = 0.0, 0.0, flat[0]
    for idx in range(1, flat.size):
        if flat[idx] < best - tol:
            best = flat[idx]
            best_a, best_b = axis[idx // ngrid], axis[idx % ngrid]
    padded = np.pad(grid, 1, constant_values=np.inf)
    is_min = (
        (grid <= padded[:-2, 1:-1]) & (grid <= padded[2:, 1:-1])
        & (grid <= padded[1:-1, :-2]) & (grid <= padded[1:-1, 2:])
    )
    cand = np.flatnonzero(is_min.ravel())
    cand = cand[np.argsort(flat[cand], kind="mergesort")]
    for idx in cand[:n_refine]:
        pa, pb, f = axis[idx // ngrid], axis[idx % ngrid], flat[idx]
        s = step / 2.0
        while s > min_step:
            na = np.array([min(pa + s, 1.0), max(pa - s, 0.0), pa, pa])
            nb = np.array([pb, pb, min(pb + s, 1.0), max(pb - s, 0.0)])
            valid = (na != pa) | (nb != pb)
            vals = np.where(valid, hw_sse_many(x, na, nb), np.inf)
            k = _first_below(vals, f)
            if k < 0:
                s *= 0.5
            else:
                pa, pb, f = na[k], nb[k], vals[k]
        if f < best - tol:
            best, best_a, best_b = f, pa, pb
    return float(best_a), float(best_b), float(best)


# --------------------------------------------------------------------------
# error distributions
# --------------------------------------------------------------------------

def base_cdf(fam, p0, p1, x):
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if fam == EXPONENTIAL:
            return np.where(x <= 0.0, 0.0, -np.expm1(-p0 * np.maximum(x, 0.0)))
        if fam == NORMAL:
            return 0.5 * special.erfc(-(x - p0) / (p1 * _SQRT2))
        if fam == LOGISTIC:
            return special.expit((x - p0) / p1)
        return np.where(x <= 0.0, 0.0,
                        -np.expm1(-p1 * np.log1p(np.maximum(x, 0.0) / p0)))


def base_sf(fam, p0, p1, x):
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if fam == EXPONENTIAL:
            return np.where(x <= 0.0, 1.0, np.exp(-p0 * np.maximum(x, 0.0)))
        if fam == NORMAL:
            return 0.5 * special.erfc((x - p0) / (p1 * _SQRT2))
        if fam == LOGISTIC:
            return special.expit(-(x - p0) / p1)
        return np.where(x <= 0.0, 1.0,
                        np.exp(-p1 * np.log1p(np.maximum(x, 0.0) / p0)))


def mass_between(fam, p0, p1, lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    upper = base_cdf(fam, p0, p1, lo) > 0.5
    via_sf = base_sf(fam, p0, p1, lo) - base_sf(fam, p0, p1, hi)
    via_cdf = base_cdf(fam, p0, p1, hi) - base_cdf(fam, p0, p1, lo)
    return np.where(hi <= lo, 0.0, np.where(upper, via_sf, via_cdf))


def trunc_cdf(fam, p0, p1, a, b, x):
    x = np.asarray(x, dtype=float)
    denom = float(mass_between(fam, p0, p1, a, b))
    if not denom > 0.0:
        return np.full(x.shape, np.nan)
    inner = np.clip(mass_between(fam, p0, p1, a, np.clip(x, a, b)) / denom, 0.0, 1.0)
    return np.where(x <= a, 0.0, np.where(x >= b, 1.0, inner))


def theta_to_params(fam, t0, t1):
    if fam == EXPONENTIAL:
        return float(np.exp(t0)), 0.0
    if fam in (NORMAL, LOGISTIC):
        return float(t0), float(np.exp(t1))
    return float(np.exp(t0)), float(np.exp(t1))


def l2_loss(fam, t0, t1, a, b, grid, target, h):
    p0, p1 = theta_to_params(fam, t0, t1)
    denom = float(mass_between(fam, p0, p1, a, b))
    if not denom > 1e-300:
        return 1e300
    v = trunc_cdf(fam, p0, p1, a, b, grid)
    e = v - target
    return float(np.sum(e * e) * h)


def fit_search(fam, theta0, step0, a, b, grid, target, h, lo, hi, min_step, max_iter):
    """Bounded Nelder-Mead search; same moves and order as the loop kernel."""
    n = 1 if fam == EXPONENTIAL else 2
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)

    def clip(x):
        out = x.copy()
        out[:n] = np.minimum(np.maximum(x[:n], lo[:n]), hi[:n])
        return out

    def loss(x):
        return l2_loss(fam, x[0], x[1], a, b, grid, target, h)

    sx = np.tile(theta0, (n + 1, 1))
    for v in range(1, n + 1):
        d = v - 1
        up = theta0[d] + step0
        sx[v, d] = up if up <= hi[d] else theta0[d] - step0
    sx = np.array([clip(x) for x in sx])
    f = np.array([loss(x) for x in sx])
    for _ in range(max_iter):
        order = np.argsort(f, kind="stable")
        best, worst = order[0], order[n]
        if np.max(np.abs(sx[:, :n] - sx[best, :n])) < min_step:
            break
        cen = np.zeros(2)
        cen[:n] = sx[order[:n], :n].sum(axis=0) / n
        xr = clip(cen + (cen - sx[worst]))
        xr[n:] = 0.0
        fr = loss(xr)
        if fr < f[best]:
            xe = clip(cen + 2.0 * (cen - sx[worst]))
            xe[n:] = 0.0
            fe = loss(xe)
            if fe < fr:
                sx[worst, :n], f[worst] = xe[:n], fe
            else:
                sx[worst, :n], f[worst] = xr[:n], fr
            continue
        if fr < f[order[n - 1]]:
            sx[worst, :n], f[worst] = xr[:n], fr
            continue
        if fr < f[worst]:
            xc = cen + 0.5 * (xr - cen)
        else:
            xc = cen + 0.5 * (sx[worst] - cen)
        xc[n:] = 0.0
        fc = loss(xc)
        if fc < min(fr, f[worst]):
            sx[worst, :n], f[worst] = xc[:n], fc
            continue
        for v in range(n + 1):
            if v != best:
                sx[v, :n] = sx[best, :n] + 0.5 * (sx[v, :n] - sx[best, :n])
                f[v] = loss(sx[v])
    k = int(np.argsort(f, kind="stable")[0])
    return sx[k].copy(), float(f[k])


# --------------------------------------------------------------------------
# trajectory search
# --------------------------------------------------------------------------

def composed_cdf(row, x):
    x = np.asarray(x, dtype=float)
    pu = row[0]
    fu = trunc_cdf(int(row[1]), row[2], row[3], row[4], row[5], np.abs(x))
    fo = trunc_cdf(int(row[6]), row[7], row[8], row[9], row[10], np.abs(x))
    return np.where(x < 0.0, pu * (1.0 - fu), pu + (1.0 - pu) * fo)


def u_rb(p, alpha_rb):
    return (np.expm1(alpha_rb * np.asarray(p)) - np.expm1(alpha_rb)) / (-np.expm1(alpha_rb))


def score_trajectories(sizes, q, prev, rho, dt, models, alpha_q, alpha_rb, mode):
    """Full enumeration of all m**L trajectories in lexicographic order."""
    L, m = sizes.shape
    choices = np.indices((m,) * L).reshape(L, -1).T
    seg_sizes = sizes[np.arange(L), choices]
    cum = np.cumsum(seg_sizes, axis=1)
    args = rho * dt / cum - 1.0
    phi = np.empty_like(args)
    for d in range(L):
        phi[:, d] = composed_cdf(models[d], args[:, d])
    if mode == 0:
        prb = 1.0 - np.prod(phi, axis=1)
    else:
        prb = np.clip(1.0 - np.sum(phi, axis=1), 0.0, 1.0)
    urb = u_rb(prb, alpha_rb)
    first = choices[:, :1] if prev < 0 else np.full((choices.shape[0], 1), prev)
    pred = np.concatenate((first, choices[:, :-1]), axis=1)
    uq = q[choices].mean(axis=1)
    uqf = 1.0 - np.abs(q[choices] - q[pred]).mean(axis=1)
    sw = (choices != pred).sum(axis=1)
    u = urb * (alpha_q * uq + (1.0 - alpha_q) * uqf)
    top = u.max()
    tied = np.flatnonzero(u >= top - 1e-12 * abs(top))
    k = tied[np.lexsort((tied, sw[tied], choices[tied, 0]))[0]]
    return choices[k].copy(), float(u[k]), float(prb[k]), float(urb[k]), float(uq[k]), float(uqf[k])
