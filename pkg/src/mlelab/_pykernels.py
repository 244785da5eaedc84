"""Pure numpy implementation of the numerical kernels.

This module mirrors the compiled ``_ckernels`` extension function by
function. It is selected automatically when the extension is unavailable,
and it is also the source of the vectorized family formulas used by
:mod:`mlelab.models`.

Family codes: 0 Gaussian location, 1 Pearson IV location, 2 logistic
location, 3 Cauchy scale. ``params`` is always the 4-vector
``(sigma, m, nu, log_norm)`` where ``log_norm`` is the log normalizing
constant of the family (only used by Pearson IV).
"""
import numpy as np

GAUSSIAN, PEARSON4, LOGISTIC, CAUCHY_SCALE = 0, 1, 2, 3

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_LOG_PI = np.log(np.pi)

# Solver status codes, shared with the compiled backend.
OK, MAXITER, NONFINITE = 0, 1, 2

TIE_TOL = 1e-12
_BIG = 1e150
ZOOM_POINTS = 17
MAX_ZOOM = 12


def _log1p_sq(z):
    """log(1 + z^2) without overflow for huge |z|."""
    a = np.abs(z)
    big = a > _BIG
    return np.where(big, 2.0 * np.log(np.where(big, a, 1.0)), np.log1p(np.where(big, 0.0, z) ** 2))


def log_pdf(code, params, theta, x):
    sigma, m, nu, log_norm = params
    x = np.asarray(x, dtype=float)
    if code == GAUSSIAN:
        z = (x - theta) / sigma
        return -0.5 * z * z - np.log(sigma) - _HALF_LOG_2PI
    if code == PEARSON4:
        z = (x - theta) / sigma
        return -m * _log1p_sq(z) + nu * np.arctan(z) + log_norm
    if code == LOGISTIC:
        # symmetric density, |u| keeps exp() from overflowing
        a = np.abs(x - theta)
        return -a - 2.0 * np.log1p(np.exp(-a))
    if code == CAUCHY_SCALE:
        z = x / theta
        return -_LOG_PI - np.log(theta) - _log1p_sq(z)
    raise ValueError(f"unknown family code {code}")


def score(code, params, theta, x):
    """Return ``(s, ds)``: first and second theta-derivatives of log f."""
    sigma, m, nu, _ = params
    x = np.asarray(x, dtype=float)
    if code == GAUSSIAN:
        s2 = sigma * sigma
        return (x - theta) / s2, np.full_like(x, -1.0 / s2)
    if code == PEARSON4:
        # divide through by r = max(|y|, sigma) so y*y cannot overflow
        y = x - theta
        r = np.maximum(np.abs(y), sigma)
        yr, sr = y / r, sigma / r
        q = sr * sr + yr * yr
        s = (2.0 * m * yr - nu * sr) / (r * q)
        ds = (2.0 * m * (yr * yr - sr * sr) - 2.0 * nu * sr * yr) / (q * q) / r / r
        return s, ds
    if code == LOGISTIC:
        u = x - theta
        a = np.exp(-np.abs(u))
        return np.tanh(0.5 * u), -2.0 * a / ((1.0 + a) * (1.0 + a))
    if code == CAUCHY_SCALE:
        r = np.maximum(np.abs(x), theta)
        xr, tr = x / r, theta / r
        q = tr * tr + xr * xr
        s = (xr * xr - tr * tr) / (theta * q)
        ds = -1.0 / (theta * theta) + 2.0 * (tr * tr - xr * xr) / (q * q) / r / r
        return s, ds
    raise ValueError(f"unknown family code {code}")


def mean_loglik(code, params, data, theta):
    return float(np.mean(log_pdf(code, params, theta, data)))


def mean_score(code, params, data, theta):
    s, ds = score(code, params, theta, data)
    return float(np.mean(s)), float(np.mean(ds))


def loglik_grid(code, params, data, thetas):
    """Normalized log-likelihood at every point of ``thetas``."""
    data = np.asarray(data, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    out = np.empty(thetas.shape[0])
    # bound the temporary to ~4M doubles
    step = max(1, 4_000_000 // max(1, data.shape[0]))
    for i in range(0, thetas.shape[0], step):
        block = thetas[i:i + step, None]
        out[i:i + step] = np.mean(log_pdf(code, params, block, data[None, :]), axis=1)
    return out


def _grid(lo, hi, count):
    g = lo + (hi - lo) * (np.arange(count) / (count - 1.0))
    g[-1] = hi
    return g


def _best_index(values):
    vmax = np.max(values)
    return int(np.flatnonzero(values >= vmax - TIE_TOL)[0])


def _bracketed_newton(code, params, data, x, d, dd, lo_b, hi_b, tol, maxit, its):
    """Safeguarded Newton on L' inside a sign-change bracket.

    ``lo_b`` has L' > 0, ``hi_b`` has L' < 0; ``x`` is a bracket endpoint
    with derivative values ``d``/``dd`` already known.
    """
    while True:
        if abs(d) <= tol:
            return x, d, its, True
        if its >= maxit:
            return x, d, its, False
        xn = x - d / dd if dd < 0.0 else np.nan
        if not (lo_b < xn < hi_b):
            xn = 0.5 * (lo_b + hi_b)
        if xn == x or xn <= lo_b or xn >= hi_b:
            # bracket collapsed to adjacent floats
            return x, d, its, True
        x = xn
        d, dd = mean_score(code, params, data, x)
        its += 1
        if not np.isfinite(d):
            return x, d, its, False
        if d > 0.0:
            lo_b = x
        elif d < 0.0:
            hi_b = x


def solve_one(code, params, data, lo, hi, grid_points, tol, maxit):
    """Global grid scan on [lo, hi] followed by safeguarded Newton refinement.

    Returns ``(theta_hat, loglik, score, at_boundary, iterations, status)``.
    """
    data = np.asarray(data, dtype=float)
    thetas = _grid(lo, hi, grid_points)
    values = loglik_grid(code, params, data, thetas)
    if not np.all(np.isfinite(values)):
        return np.nan, np.nan, np.nan, False, 0, NONFINITE

    i = _best_index(values)
    best_t, best_l = thetas[i], values[i]
    a = thetas[max(i - 1, 0)]
    b = thetas[min(i + 1, grid_points - 1)]
    its = 0
    status = MAXITER
    theta = best_t
    for _ in range(MAX_ZOOM):
        d, dd = mean_score(code, params, data, best_t)
        if best_t <= lo and d <= 0.0:
            theta, status = lo, OK
            break
        if best_t >= hi and d >= 0.0:
            theta, status = hi, OK
            break
        if abs(d) <= tol:
            theta, status = best_t, OK
            break
        if d > 0.0:
            x0, x1 = best_t, b
            d0 = d
            d1 = mean_score(code, params, data, x1)[0] if x1 != best_t else d
        else:
            x0, x1 = a, best_t
            d1 = d
            d0 = mean_score(code, params, data, x0)[0] if x0 != best_t else d
        if d0 > 0.0 and d1 < 0.0:
            r, dr, its, conv = _bracketed_newton(
                code, params, data, best_t, d, dd, x0, x1, tol, maxit, its
            )
            lr = mean_loglik(code, params, data, r)
            if lr >= best_l:
                theta = r
                status = OK if conv else MAXITER
                break
        # no usable bracket: rescan the neighbourhood on a finer grid
        sub = _grid(a, b, ZOOM_POINTS)
        sv = loglik_grid(code, params, data, sub)
        j = _best_index(sv)
        if sv[j] > best_l or (sv[j] == best_l and sub[j] < best_t):
            best_t, best_l = sub[j], sv[j]
        else:
            j = int(np.searchsorted(sub, best_t))
            j = min(j, ZOOM_POINTS - 1)
        a = sub[max(j - 1, 0)]
        b = sub[min(j + 1, ZOOM_POINTS - 1)]
        theta = best_t
        if b - a <= 4.0 * np.finfo(float).eps * max(1.0, abs(best_t)):
            status = OK
            break

    loglik = mean_loglik(code, params, data, theta)
    s = mean_score(code, params, data, theta)[0]
    at_boundary = (theta - lo) <= tol or (hi - theta) <= tol
    return theta, loglik, s, at_boundary, its, status


def solve_batch(code, params, data, lo, hi, grid_points, tol, maxit):
    """Solve every row of the 2-d array ``data`` independently."""
    data = np.asarray(data, dtype=float)
    rows = data.shape[0]
    theta = np.empty(rows)
    loglik = np.empty(rows)
    sc = np.empty(rows)
    boundary = np.zeros(rows, dtype=np.uint8)
    iters = np.zeros(rows, dtype=np.int64)
    status = np.zeros(rows, dtype=np.int64)
    for r in range(rows):
        t, l, s, bd, it, st = solve_one(code, params, data[r], lo, hi, grid_points, tol, maxit)
        theta[r], loglik[r], sc[r] = t, l, s
        boundary[r], iters[r], status[r] = bd, it, st
    return theta, loglik, sc, boundary, iters, status


def knn_distances(sorted_x, k):
    """Distance from each point of a sorted 1-d sample to its k-th neighbour."""
    x = np.asarray(sorted_x, dtype=float)
    n = x.shape[0]
    cand = np.full((n, 2 * k), np.inf)
    for j in range(1, k + 1):
        cand[j:, j - 1] = x[j:] - x[:-j]
        cand[:-j, k + j - 1] = x[j:] - x[:-j]
    return np.partition(cand, k - 1, axis=1)[:, k - 1]


def kde_grid(sorted_centers, h, start, step, count, cutoff=8.0):
    """Gaussian kernel sum and its derivative on a uniform grid.

    Kernels are truncated at ``cutoff`` bandwidths.
    """
    c = np.asarray(sorted_centers, dtype=float)
    n = c.shape[0]
    width = int(np.ceil(2.0 * cutoff * h / step)) + 2
    dens = np.zeros(count)
    deriv = np.zeros(count)
    norm = 1.0 / (n * h * np.sqrt(2.0 * np.pi))
    offsets = np.arange(width)
    chunk = max(1, 2_000_000 // width)
    for s in range(0, n, chunk):
        cc = c[s:s + chunk, None]
        j0 = np.ceil((cc - cutoff * h - start) / step).astype(np.int64)
        idx = j0 + offsets[None, :]
        u = (start + idx * step - cc) / h
        keep = (idx >= 0) & (idx < count) & (np.abs(u) <= cutoff)
        k = np.exp(-0.5 * u * u)
        idx, u, k = idx[keep], u[keep], k[keep]
        dens += np.bincount(idx, weights=k, minlength=count)
        deriv += np.bincount(idx, weights=-u * k, minlength=count)
    return dens * norm, deriv * (norm / h)
