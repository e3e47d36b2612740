"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)), axis=axis)


def _log_coupling(log_density, log_mu, g):
    z = log_density + g[None, :]
    return z - _lse(z, 1)[:, None] + log_mu[:, None]


def log_y_marginal(log_density, log_mu, g):
    return _lse(_log_coupling(log_density, log_mu, np.asarray(g)), 0)


def dual_recursion(log_density, log_mu, log_nu, g0, gammas, perturb=None):
    # inlined log-sum-exps: per-step call overhead dominates on small problems
    g = np.array(g0, dtype=np.float64, copy=True)
    steps = len(gammas)
    m = g.size
    if perturb is not None and (perturb.shape[0] < steps or perturb.shape[1] != m):
        raise ValueError("perturbation array has the wrong shape")
    ld, lmu, lnu = np.asarray(log_density), np.asarray(log_mu)[:, None], np.asarray(log_nu)
    exp, log = np.exp, np.log
    obj = np.empty(steps + 1)
    msum = np.zeros(m)
    sup_sq = 0.0
    for k in range(steps + 1):
        z = ld + g
        zm = z.max(axis=1, keepdims=True)
        lp = z - (zm + log(exp(z - zm).sum(axis=1, keepdims=True))) + lmu
        cm = lp.max(axis=0)
        ly = cm + log(exp(lp - cm).sum(axis=0))
        py = exp(ly)
        d = ly - lnu
        kl = float(py @ d)
        obj[k] = kl if kl > 0.0 else 0.0
        if k == steps:
            break
        msum += py
        if perturb is not None:
            d = d + perturb[k]
        sup_sq += float((d * d).max())
        g = g - gammas[k] * d
    return g, obj, msum, sup_sq


def interp_bilinear(values, t0, dt, z0, dz, t, x, out):
    nt, nz = values.shape
    if nt > 1:
        ti = min(max((t - t0) / dt, 0.0), nt - 1)
        k = min(int(np.floor(ti)), nt - 2)
        a = ti - k
        row = (1.0 - a) * values[k] + a * values[k + 1]
    else:
        row = values[0]
    zi = np.clip((x - z0) / dz, 0.0, nz - 1)
    j = np.minimum(np.floor(zi).astype(np.intp), nz - 2)
    b = zi - j
    out[:] = (1.0 - b) * row[j] + b * row[j + 1]
    return out


def mixture_logpdf(log_w, x, y, t, variance, z):
    mean = (1.0 - t) * x[:, None] + t * y[None, :]
    keep = np.isfinite(log_w)
    lw, mean = log_w[keep], mean[keep]
    logp = np.empty(z.size)
    score = np.empty(z.size)
    lognorm = 0.5 * np.log(2.0 * np.pi * variance)
    for l, zz in enumerate(z):
        e = lw - (zz - mean) ** 2 / (2.0 * variance)
        big = e.max()
        w = np.exp(e - big)
        s0 = w.sum()
        logp[l] = big + np.log(s0) - lognorm
        score[l] = np.dot(w, mean - zz) / s0 / variance
    return logp, score
