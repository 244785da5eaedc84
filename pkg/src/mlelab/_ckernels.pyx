# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numerical kernels.

Same call signatures and semantics as :mod:`mlelab._pykernels`. Every
per-row computation runs without the GIL so callers may fan chunks out
over threads.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, log1p, exp, frexp, atan, tanh, fabs, sqrt, ceil, M_PI, INFINITY, NAN

cnp.import_array()

DEF GAUSSIAN = 0
DEF PEARSON4 = 1
DEF LOGISTIC = 2
DEF CAUCHY_SCALE = 3

DEF ST_OK = 0
DEF ST_MAXITER = 1
DEF ST_NONFINITE = 2

DEF TIE_TOL = 1e-12
DEF ZOOM_POINTS = 17
DEF MAX_ZOOM = 12
DEF DBL_EPS = 2.220446049250313e-16
DEF LN2 = 0.6931471805599453
# product accumulators take factors below FACTOR_MAX and renormalize above
# PROD_MAX, so prod * factor stays finite
DEF FACTOR_MAX = 1e100
DEF PROD_MAX = 1e200
# logistic fast path needs exp(x/2) and exp(theta/2) finite
DEF EXP_ARG_MAX = 700.0

cdef double HALF_LOG_2PI = 0.5 * log(2.0 * M_PI)
cdef double LOG_PI = log(M_PI)

OK, MAXITER, NONFINITE = ST_OK, ST_MAXITER, ST_NONFINITE


cdef struct Family:
    int code
    double sigma
    double m
    double nu
    double log_norm


cdef inline bint _finite(double v) noexcept nogil:
    return v == v and v != INFINITY and v != -INFINITY


cdef inline double _log1p_sq(double z) noexcept nogil:
    cdef double a = fabs(z)
    if a > 1e150:
        return 2.0 * log(a)
    return log1p(z * z)


cdef inline double _logf(const Family* f, double theta, double x) noexcept nogil:
    cdef double z, a
    if f.code == GAUSSIAN:
        z = (x - theta) / f.sigma
        return -0.5 * z * z - log(f.sigma) - HALF_LOG_2PI
    elif f.code == PEARSON4:
        z = (x - theta) / f.sigma
        return -f.m * _log1p_sq(z) + f.nu * atan(z) + f.log_norm
    elif f.code == LOGISTIC:
        a = fabs(x - theta)
        return -a - 2.0 * log1p(exp(-a))
    else:
        z = x / theta
        return -LOG_PI - log(theta) - _log1p_sq(z)


cdef inline void _score(const Family* f, double theta, double x,
                        double* s, double* ds) noexcept nogil:
    cdef double y, q, a, r, yr, sr, xr, tr, s2
    if f.code == GAUSSIAN:
        s2 = f.sigma * f.sigma
        s[0] = (x - theta) / s2
        ds[0] = -1.0 / s2
    elif f.code == PEARSON4:
        y = x - theta
        r = fabs(y) if fabs(y) > f.sigma else f.sigma
        yr = y / r
        sr = f.sigma / r
        q = sr * sr + yr * yr
        s[0] = (2.0 * f.m * yr - f.nu * sr) / (r * q)
        ds[0] = (2.0 * f.m * (yr * yr - sr * sr) - 2.0 * f.nu * sr * yr) / (q * q) / r / r
    elif f.code == LOGISTIC:
        y = x - theta
        a = exp(-fabs(y))
        s[0] = tanh(0.5 * y)
        ds[0] = -2.0 * a / ((1.0 + a) * (1.0 + a))
    else:
        r = fabs(x) if fabs(x) > theta else theta
        xr = x / r
        tr = theta / r
        q = tr * tr + xr * xr
        s[0] = (xr * xr - tr * tr) / (theta * q)
        ds[0] = -1.0 / (theta * theta) + 2.0 * (tr * tr - xr * xr) / (q * q) / r / r


cdef inline double _sum_log1p_sq(const double* data, Py_ssize_t n, double c,
                                 double inv) noexcept nogil:
    """sum log(1 + ((x - c) inv)^2) with one log call per block of factors."""
    cdef Py_ssize_t i
    cdef double prod = 1.0, big = 0.0, z, q
    cdef long expo = 0
    cdef int e
    for i in range(n):
        z = (data[i] - c) * inv
        q = 1.0 + z * z
        if q < FACTOR_MAX:
            prod *= q
            if prod > PROD_MAX:
                prod = frexp(prod, &e)
                expo += e
        else:
            big += _log1p_sq(z)
    return log(prod) + expo * LN2 + big


cdef inline double _sum_log_2cosh(const double* aux, Py_ssize_t n, double theta) noexcept nogil:
    """sum log(2 cosh((x - theta)/2)) from aux = [exp(x/2), exp(-x/2)]."""
    cdef Py_ssize_t i
    cdef double s = exp(-0.5 * theta), si = exp(0.5 * theta)
    cdef double prod = 1.0, big = 0.0, w
    cdef long expo = 0
    cdef int e
    for i in range(n):
        w = aux[i] * s + aux[n + i] * si
        if w < FACTOR_MAX:
            prod *= w
            if prod > PROD_MAX:
                prod = frexp(prod, &e)
                expo += e
        else:
            big += log(w)
    return log(prod) + expo * LN2 + big


cdef bint _prep_aux(const Family* f, const double* data, Py_ssize_t n,
                    double* aux) noexcept nogil:
    """Fill aux for the logistic fast path; False when it does not apply."""
    cdef Py_ssize_t i
    if f.code != LOGISTIC:
        return False
    for i in range(n):
        if not fabs(data[i]) <= EXP_ARG_MAX:
            return False
        aux[i] = exp(0.5 * data[i])
        aux[n + i] = exp(-0.5 * data[i])
    return True


cdef double _mean_loglik(const Family* f, const double* data, Py_ssize_t n,
                         double theta, const double* aux) noexcept nogil:
    """L_n(theta). ``aux`` is the logistic table from :func:`_prep_aux` or NULL."""
    cdef Py_ssize_t i
    cdef double acc = 0.0, z, inv
    if f.code == GAUSSIAN:
        inv = 1.0 / f.sigma
        for i in range(n):
            z = (data[i] - theta) * inv
            acc += z * z
        return -0.5 * acc / n - log(f.sigma) - HALF_LOG_2PI
    if f.code == CAUCHY_SCALE:
        return -_sum_log1p_sq(data, n, 0.0, 1.0 / theta) / n - LOG_PI - log(theta)
    if f.code == PEARSON4:
        inv = 1.0 / f.sigma
        acc = -f.m * _sum_log1p_sq(data, n, theta, inv)
        if f.nu != 0.0:
            for i in range(n):
                acc += f.nu * atan((data[i] - theta) * inv)
        return acc / n + f.log_norm
    if aux != NULL and fabs(theta) <= EXP_ARG_MAX:
        return -2.0 * _sum_log_2cosh(aux, n, theta) / n
    for i in range(n):
        acc += _logf(f, theta, data[i])
    return acc / n


cdef void _mean_score(const Family* f, const double* data, Py_ssize_t n,
                      double theta, double* d, double* dd) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0, ds = 0.0, a, b
    for i in range(n):
        _score(f, theta, data[i], &a, &b)
        s += a
        ds += b
    d[0] = s / n
    dd[0] = ds / n


cdef inline double _gridpt(double lo, double hi, Py_ssize_t i, Py_ssize_t count) noexcept nogil:
    if i == count - 1:
        return hi
    return lo + (hi - lo) * (i / (count - 1.0))


cdef Py_ssize_t _best_of(const double* vals, Py_ssize_t count) noexcept nogil:
    cdef Py_ssize_t i
    cdef double vmax = -INFINITY
    for i in range(count):
        if vals[i] > vmax:
            vmax = vals[i]
    for i in range(count):
        if vals[i] >= vmax - TIE_TOL:
            return i
    return 0


cdef int _newton(const Family* f, const double* data, Py_ssize_t n,
                 double* x, double* d, double dd, double lo_b, double hi_b,
                 double tol, long maxit, long* its) noexcept nogil:
    """Safeguarded Newton on L'; returns 1 when converged."""
    cdef double xn
    while True:
        if fabs(d[0]) <= tol:
            return 1
        if its[0] >= maxit:
            return 0
        if dd < 0.0:
            xn = x[0] - d[0] / dd
        else:
            xn = NAN
        if not (lo_b < xn and xn < hi_b):
            xn = 0.5 * (lo_b + hi_b)
        if xn == x[0] or xn <= lo_b or xn >= hi_b:
            return 1
        x[0] = xn
        _mean_score(f, data, n, xn, d, &dd)
        its[0] += 1
        if not _finite(d[0]):
            return 0
        if d[0] > 0.0:
            lo_b = xn
        elif d[0] < 0.0:
            hi_b = xn


cdef int _solve_row(const Family* f, const double* data, Py_ssize_t n,
                    double lo, double hi, Py_ssize_t grid_points, double tol,
                    long maxit, double* vals, double* aux_buf, double* out_theta,
                    double* out_loglik, double* out_score, unsigned char* out_bd,
                    long* out_its) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double best_t, best_l, a, b, d, dd, d0, d1, x0, x1, r, dr, lr, theta, tmp, sub_t
    cdef long its = 0
    cdef int status = ST_MAXITER, conv, zoom
    cdef const double* aux = aux_buf if _prep_aux(f, data, n, aux_buf) else NULL
    for i in range(grid_points):
        vals[i] = _mean_loglik(f, data, n, _gridpt(lo, hi, i, grid_points), aux)
        if not _finite(vals[i]):
            out_theta[0] = NAN
            out_loglik[0] = NAN
            out_score[0] = NAN
            out_bd[0] = 0
            out_its[0] = 0
            return ST_NONFINITE
    i = _best_of(vals, grid_points)
    best_t = _gridpt(lo, hi, i, grid_points)
    best_l = vals[i]
    a = _gridpt(lo, hi, i - 1 if i > 0 else 0, grid_points)
    b = _gridpt(lo, hi, i + 1 if i < grid_points - 1 else grid_points - 1, grid_points)
    theta = best_t
    for zoom in range(MAX_ZOOM):
        _mean_score(f, data, n, best_t, &d, &dd)
        if best_t <= lo and d <= 0.0:
            theta = lo
            status = ST_OK
            break
        if best_t >= hi and d >= 0.0:
            theta = hi
            status = ST_OK
            break
        if fabs(d) <= tol:
            theta = best_t
            status = ST_OK
            break
        if d > 0.0:
            x0 = best_t
            x1 = b
            d0 = d
            if x1 != best_t:
                _mean_score(f, data, n, x1, &d1, &tmp)
            else:
                d1 = d
        else:
            x0 = a
            x1 = best_t
            d1 = d
            if x0 != best_t:
                _mean_score(f, data, n, x0, &d0, &tmp)
            else:
                d0 = d
        if d0 > 0.0 and d1 < 0.0:
            r = best_t
            dr = d
            conv = _newton(f, data, n, &r, &dr, dd, x0, x1, tol, maxit, &its)
            lr = _mean_loglik(f, data, n, r, aux)
            if lr >= best_l:
                theta = r
                status = ST_OK if conv else ST_MAXITER
                break
        for j in range(ZOOM_POINTS):
            vals[j] = _mean_loglik(f, data, n, _gridpt(a, b, j, ZOOM_POINTS), aux)
        j = _best_of(vals, ZOOM_POINTS)
        sub_t = _gridpt(a, b, j, ZOOM_POINTS)
        if vals[j] > best_l or (vals[j] == best_l and sub_t < best_t):
            best_t = sub_t
            best_l = vals[j]
        else:
            # searchsorted(sub, best_t), left side
            j = 0
            while j < ZOOM_POINTS and _gridpt(a, b, j, ZOOM_POINTS) < best_t:
                j += 1
            if j > ZOOM_POINTS - 1:
                j = ZOOM_POINTS - 1
        tmp = a
        a = _gridpt(tmp, b, j - 1 if j > 0 else 0, ZOOM_POINTS)
        b = _gridpt(tmp, b, j + 1 if j < ZOOM_POINTS - 1 else ZOOM_POINTS - 1, ZOOM_POINTS)
        theta = best_t
        if b - a <= 4.0 * DBL_EPS * (fabs(best_t) if fabs(best_t) > 1.0 else 1.0):
            status = ST_OK
            break

    out_theta[0] = theta
    out_loglik[0] = _mean_loglik(f, data, n, theta, aux)
    _mean_score(f, data, n, theta, out_score, &tmp)
    out_bd[0] = 1 if ((theta - lo) <= tol or (hi - theta) <= tol) else 0
    out_its[0] = its
    return status


cdef Family _family(int code, params):
    cdef Family f
    f.code = code
    f.sigma = params[0]
    f.m = params[1]
    f.nu = params[2]
    f.log_norm = params[3]
    if code < 0 or code > 3:
        raise ValueError(f"unknown family code {code}")
    return f


def mean_loglik(int code, params, data, double theta):
    cdef Family f = _family(code, params)
    cdef const double[::1] x = np.ascontiguousarray(data, dtype=np.float64)
    cdef double[::1] aux = np.empty(2 * x.shape[0])
    cdef bint fast = _prep_aux(&f, &x[0], x.shape[0], &aux[0])
    return _mean_loglik(&f, &x[0], x.shape[0], theta, &aux[0] if fast else NULL)


def mean_score(int code, params, data, double theta):
    cdef Family f = _family(code, params)
    cdef const double[::1] x = np.ascontiguousarray(data, dtype=np.float64)
    cdef double d, dd
    _mean_score(&f, &x[0], x.shape[0], theta, &d, &dd)
    return d, dd


def loglik_grid(int code, params, data, thetas):
    cdef Family f = _family(code, params)
    cdef const double[::1] x = np.ascontiguousarray(data, dtype=np.float64)
    cdef const double[::1] t = np.ascontiguousarray(thetas, dtype=np.float64)
    out = np.empty(t.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double[::1] aux = np.empty(2 * x.shape[0])
    cdef bint fast = _prep_aux(&f, &x[0], x.shape[0], &aux[0])
    cdef const double* ap = &aux[0] if fast else NULL
    with nogil:
        for i in range(t.shape[0]):
            o[i] = _mean_loglik(&f, &x[0], x.shape[0], t[i], ap)
    return out


def solve_one(int code, params, data, double lo, double hi, Py_ssize_t grid_points,
              double tol, long maxit):
    res = solve_batch(code, params, np.asarray(data, dtype=np.float64)[None, :],
                      lo, hi, grid_points, tol, maxit)
    return (float(res[0][0]), float(res[1][0]), float(res[2][0]), bool(res[3][0]),
            int(res[4][0]), int(res[5][0]))


def solve_batch(int code, params, data, double lo, double hi, Py_ssize_t grid_points,
                double tol, long maxit):
    cdef Family f = _family(code, params)
    cdef const double[:, ::1] x = np.ascontiguousarray(data, dtype=np.float64)
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], r
    theta = np.empty(rows)
    loglik = np.empty(rows)
    sc = np.empty(rows)
    boundary = np.zeros(rows, dtype=np.uint8)
    iters = np.zeros(rows, dtype=np.int64)
    status = np.zeros(rows, dtype=np.int64)
    cdef double[::1] th = theta, ll = loglik, s = sc
    cdef unsigned char[::1] bd = boundary
    cdef long[::1] it = iters, st = status
    scratch = np.empty(max(grid_points, ZOOM_POINTS))
    cdef double[::1] vals = scratch
    cdef double[::1] aux = np.empty(2 * n)
    with nogil:
        for r in range(rows):
            st[r] = _solve_row(&f, &x[r, 0], n, lo, hi, grid_points, tol, maxit,
                               &vals[0], &aux[0], &th[r], &ll[r], &s[r], &bd[r], &it[r])
    return theta, loglik, sc, boundary, iters, status


def knn_distances(sorted_x, Py_ssize_t k):
    cdef const double[::1] x = np.ascontiguousarray(sorted_x, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], i, l, r, c
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double dl, dr, last
    with nogil:
        for i in range(n):
            # merge the two sorted neighbour sequences until k are taken
            l = i - 1
            r = i + 1
            last = 0.0
            for c in range(k):
                dl = x[i] - x[l] if l >= 0 else INFINITY
                dr = x[r] - x[i] if r < n else INFINITY
                if dl <= dr:
                    last = dl
                    l -= 1
                else:
                    last = dr
                    r += 1
            o[i] = last
    return out


def kde_grid(sorted_centers, double h, double start, double step, Py_ssize_t count,
             double cutoff=8.0):
    cdef const double[::1] c = np.ascontiguousarray(sorted_centers, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], i, j, j0, j1
    dens = np.zeros(count)
    deriv = np.zeros(count)
    cdef double[::1] p = dens, dp = deriv
    cdef double u, k, norm = 1.0 / (n * h * sqrt(2.0 * M_PI))
    with nogil:
        for i in range(n):
            j0 = <Py_ssize_t> ceil((c[i] - cutoff * h - start) / step)
            j1 = j0 + <Py_ssize_t> ceil(2.0 * cutoff * h / step) + 2
            if j0 < 0:
                j0 = 0
            if j1 > count:
                j1 = count
            for j in range(j0, j1):
                u = (start + j * step - c[i]) / h
                if fabs(u) <= cutoff:
                    k = exp(-0.5 * u * u)
                    p[j] += k
                    dp[j] -= u * k
        for j in range(count):
            p[j] *= norm
            dp[j] *= norm / h
    return dens, deriv
