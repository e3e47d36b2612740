# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror :mod:`sinkflow._fallback`."""
import numpy as np

from libc.math cimport exp, log, sqrt, floor, INFINITY, M_PI


cdef inline double _lse(const double* v, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k
    cdef double m = -INFINITY, s = 0.0
    for k in range(n):
        if v[k] > m:
            m = v[k]
    if m == -INFINITY:
        return m
    for k in range(n):
        s += exp(v[k] - m)
    return m + log(s)


cdef void _log_coupling_rows(const double[:, ::1] log_density, const double[::1] log_mu,
                             const double[::1] g, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = log_density.shape[0], m = log_density.shape[1]
    cdef double c
    for i in range(n):
        for j in range(m):
            out[i, j] = log_density[i, j] + g[j]
        c = log_mu[i] - _lse(&out[i, 0], m)
        for j in range(m):
            out[i, j] += c


cdef void _log_columns(const double[:, ::1] lp, double[::1] colmax, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = lp.shape[0], m = lp.shape[1]
    for j in range(m):
        colmax[j] = -INFINITY
        out[j] = 0.0
    for i in range(n):
        for j in range(m):
            if lp[i, j] > colmax[j]:
                colmax[j] = lp[i, j]
    for i in range(n):
        for j in range(m):
            out[j] += exp(lp[i, j] - colmax[j])
    for j in range(m):
        out[j] = colmax[j] + log(out[j])


def log_y_marginal(const double[:, ::1] log_density, const double[::1] log_mu, const double[::1] g):
    cdef Py_ssize_t n = log_density.shape[0], m = log_density.shape[1]
    lp = np.empty((n, m))
    out = np.empty(m)
    colmax = np.empty(m)
    cdef double[:, ::1] lpv = lp
    cdef double[::1] ov = out, cv = colmax
    with nogil:
        _log_coupling_rows(log_density, log_mu, g, lpv)
        _log_columns(lpv, cv, ov)
    return out


def dual_recursion(const double[:, ::1] log_density, const double[::1] log_mu,
                   const double[::1] log_nu, const double[::1] g0,
                   const double[::1] gammas, perturb=None):
    """Run ``g <- g - gamma_k * (log(pi_Y / nu) + perturb_k)`` for every ``k``.

    Returns ``(g_final, objectives, marginal_sum, sup_sq_sum)`` where
    ``objectives[k]`` is ``KL(pi_Y^k || nu)`` for ``k = 0..N``,
    ``marginal_sum`` is ``sum_{k < N} pi_Y^k`` and ``sup_sq_sum`` is the sum
    over steps of the squared sup-norm of the (perturbed) gradient used.
    """
    cdef Py_ssize_t n = log_density.shape[0], m = log_density.shape[1]
    cdef Py_ssize_t steps = gammas.shape[0], k, j
    g_arr = np.array(g0, dtype=np.float64, copy=True)
    obj_arr = np.empty(steps + 1)
    msum_arr = np.zeros(m)
    lp_arr = np.empty((n, m))
    cm_arr = np.empty(m)
    ly_arr = np.empty(m)
    cdef double[::1] g = g_arr, obj = obj_arr, msum = msum_arr, cm = cm_arr, ly = ly_arr
    cdef double[:, ::1] lp = lp_arr
    cdef const double[:, ::1] pert
    cdef bint has_pert = perturb is not None
    if has_pert:
        pert = perturb
        if pert.shape[0] < steps or pert.shape[1] != m:
            raise ValueError("perturbation array has the wrong shape")
    cdef double kl, py, d, sup, sup_sq = 0.0
    with nogil:
        for k in range(steps + 1):
            _log_coupling_rows(log_density, log_mu, g, lp)
            _log_columns(lp, cm, ly)
            kl = 0.0
            for j in range(m):
                py = exp(ly[j])
                kl += py * (ly[j] - log_nu[j])
            obj[k] = kl if kl > 0.0 else 0.0
            if k == steps:
                break
            sup = 0.0
            for j in range(m):
                msum[j] += exp(ly[j])
                d = ly[j] - log_nu[j]
                if has_pert:
                    d = d + pert[k, j]
                if d * d > sup:
                    sup = d * d
                g[j] = g[j] - gammas[k] * d
            sup_sq += sup
    return g_arr, obj_arr, msum_arr, sup_sq


def interp_bilinear(const double[:, ::1] values, double t0, double dt, double z0, double dz,
                    double t, const double[::1] x, double[::1] out):
    """Evaluate a gridded field at time ``t`` and positions ``x``, clamping at the edges."""
    cdef Py_ssize_t nt = values.shape[0], nz = values.shape[1], n = x.shape[0], p, j, k
    cdef double ti, a, zi, b, lo, hi
    ti = (t - t0) / dt if nt > 1 else 0.0
    if ti < 0.0:
        ti = 0.0
    if ti > nt - 1:
        ti = nt - 1
    k = <Py_ssize_t> floor(ti)
    if k > nt - 2:
        k = nt - 2 if nt > 1 else 0
    a = ti - k
    cdef Py_ssize_t k1 = k + 1 if nt > 1 else k
    with nogil:
        for p in range(n):
            zi = (x[p] - z0) / dz
            if zi < 0.0:
                zi = 0.0
            if zi > nz - 1:
                zi = nz - 1
            j = <Py_ssize_t> floor(zi)
            if j > nz - 2:
                j = nz - 2
            b = zi - j
            lo = (1.0 - a) * values[k, j] + a * values[k1, j]
            hi = (1.0 - a) * values[k, j + 1] + a * values[k1, j + 1]
            out[p] = (1.0 - b) * lo + b * hi
    return out


def mixture_logpdf(const double[:, ::1] log_w, const double[::1] x, const double[::1] y,
                   double t, double variance, const double[::1] z):
    """Log-density and score of ``sum_ij w_ij N(z; (1-t) x_i + t y_j, variance)``.

    Terms below ``exp(-50)`` times the largest one are skipped.
    """
    cdef Py_ssize_t n = log_w.shape[0], m = log_w.shape[1], nz = z.shape[0], i, j, l, k, nk = 0
    lw_arr = np.empty(n * m)
    mean_arr = np.empty(n * m)
    e_arr = np.empty(n * m)
    logp_arr = np.empty(nz)
    score_arr = np.empty(nz)
    cdef double[::1] lw = lw_arr, mean = mean_arr, e = e_arr, logp = logp_arr, score = score_arr
    cdef double inv2v = 0.5 / variance, zz, d, big, s0, s1, r
    cdef double lognorm = 0.5 * log(2.0 * M_PI * variance)
    with nogil:
        for i in range(n):
            for j in range(m):
                if log_w[i, j] != -INFINITY:
                    lw[nk] = log_w[i, j]
                    mean[nk] = (1.0 - t) * x[i] + t * y[j]
                    nk += 1
        for l in range(nz):
            zz = z[l]
            big = -INFINITY
            for k in range(nk):
                d = zz - mean[k]
                e[k] = lw[k] - d * d * inv2v
                if e[k] > big:
                    big = e[k]
            s0 = 0.0
            s1 = 0.0
            for k in range(nk):
                if e[k] - big > -50.0:
                    r = exp(e[k] - big)
                    s0 += r
                    s1 += r * (mean[k] - zz)
            logp[l] = big + log(s0) - lognorm
            score[l] = s1 / s0 / variance
    return logp_arr, score_arr
